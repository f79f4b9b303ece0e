use super::{Hin, NodeType};
use crate::error::{Error, Result};

/// Iteratively removes users and items with fewer than `k` interactions until
/// every survivor has at least `k`, then drops feature entities left without
/// edges. Ids are re-densified.
pub fn kcore_filter(hin: &Hin, k: usize) -> Result<Hin> {
    if k == 0 {
        return Err(Error::Contract("k-core needs k >= 1".into()));
    }
    let n = hin.num_nodes();
    let is_endpoint = |id: usize| hin.users().contains(&id) || hin.items().contains(&id);
    let mut alive: Vec<bool> = (0..n).map(is_endpoint).collect();
    let mut degree = hin.interaction_degrees();

    let mut queue: Vec<usize> = (0..n).filter(|&i| alive[i] && degree[i] < k).collect();
    // neighbour lists over interactions for incremental degree updates
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for it in hin.interactions() {
        adj[it.user].push(it.item);
        adj[it.item].push(it.user);
    }
    while let Some(v) = queue.pop() {
        if !alive[v] {
            continue;
        }
        alive[v] = false;
        for &w in &adj[v] {
            if alive[w] {
                degree[w] -= 1;
                if degree[w] < k {
                    queue.push(w);
                }
            }
        }
    }
    if !alive.iter().any(|&a| a) {
        return Err(Error::Degenerate(format!(
            "{k}-core filtering removed every user and item"
        )));
    }

    let mut keep = alive.clone();
    for r in hin.type_ranges() {
        if r.node_type.is_feature() {
            keep[r.range()].iter_mut().for_each(|v| *v = true);
        }
    }
    let pruned = hin.induced(&keep)?;
    let feature_deg = pruned.feature_degrees();
    let keep: Vec<bool> = (0..pruned.num_nodes())
        .map(|id| match pruned.node_type(id) {
            Some(NodeType::Feature(_)) => feature_deg[id] > 0,
            _ => true,
        })
        .collect();
    let out = pruned.induced(&keep)?;
    if out.users().is_empty() || out.items().is_empty() {
        return Err(Error::Degenerate(format!(
            "{k}-core filtering left {} users and {} items",
            out.users().len(),
            out.items().len()
        )));
    }
    Ok(out)
}
