//! Leave-one-out ranking metrics, fusion diagnostics and attention reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use crate::hin::{CandidateList, Hin};
use crate::model::{
    forward_all, metapath_aggregate, split_by_terminal, FusedRepr, ModelGraph, ModelParams,
};
use crate::par::{self, ExecMode};

/// Cutoff used throughout.
pub const TOP_K: usize = 10;

/// 1 when the 1-based `rank` is within the top `k`.
pub fn hit_ratio_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0
    } else {
        0.0
    }
}

/// `1 / log2(rank + 1)` within the top `k`, else 0.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// 1-based rank of `scores[target]`. Every other candidate scoring at least
/// as high (or NaN) ranks ahead of it.
pub fn pessimistic_rank(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(k, &s)| k != target && (s >= t || s.is_nan() || t.is_nan()))
        .count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserResult {
    pub user: String,
    pub rank: usize,
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub hr_at_10: f64,
    pub ndcg_at_10: f64,
    pub n_users: usize,
    pub n_candidates: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_user: Vec<UserResult>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `user,rank,hr,ndcg`
    pub fn per_user_csv(&self) -> String {
        let mut s = String::from("user,rank,hr,ndcg\n");
        for r in &self.per_user {
            let _ = writeln!(s, "{},{},{},{}", r.user, r.rank, r.hr, r.ndcg);
        }
        s
    }

    pub fn write(&self, json: impl AsRef<Path>, csv: Option<&Path>) -> Result<()> {
        let json = json.as_ref();
        for p in std::iter::once(json).chain(csv) {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        fs::write(json, self.to_json()?).map_err(|e| Error::io(json, e))?;
        if let Some(csv) = csv {
            fs::write(csv, self.per_user_csv()).map_err(|e| Error::io(csv, e))?;
        }
        Ok(())
    }
}

/// Ranks every list's target under `score(user, item)` and averages the
/// metrics. Users are scored in parallel; the averages are summed in list
/// order, so the result does not depend on the thread count.
pub fn evaluate_with<F>(
    candidates: &[CandidateList],
    labels: Option<&Hin>,
    seed: u64,
    mode: ExecMode,
    score: F,
) -> Result<EvalReport>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    if candidates.is_empty() {
        return Err(Error::Contract("no candidate lists to evaluate".into()));
    }
    let n_candidates = candidates[0].items.len();
    let per = par::map_indices(candidates.len(), mode, |k| -> Result<UserResult> {
        let list = &candidates[k];
        let target = list
            .items
            .iter()
            .position(|&i| i == list.target)
            .ok_or_else(|| {
                Error::Contract(format!("candidates of user {} lack the target", list.user))
            })?;
        let scores = list
            .items
            .iter()
            .map(|&i| score(list.user, i))
            .collect::<Result<Vec<_>>>()?;
        let rank = pessimistic_rank(&scores, target);
        Ok(UserResult {
            user: labels.map_or_else(|| list.user.to_string(), |h| h.label(list.user).to_string()),
            rank,
            hr: hit_ratio_at_k(rank, TOP_K),
            ndcg: ndcg_at_k(rank, TOP_K),
        })
    });
    let per_user = per.into_iter().collect::<Result<Vec<_>>>()?;
    let n = per_user.len() as f64;
    Ok(EvalReport {
        hr_at_10: per_user.iter().map(|r| r.hr).sum::<f64>() / n,
        ndcg_at_10: per_user.iter().map(|r| r.ndcg).sum::<f64>() / n,
        n_users: per_user.len(),
        n_candidates,
        seed,
        per_user,
    })
}

/// One full forward pass, then every candidate list scored through the
/// readout and MLP.
pub fn evaluate_leave_one_out(
    params: &ModelParams,
    graph: &ModelGraph,
    candidates: &[CandidateList],
    labels: Option<&Hin>,
    seed: u64,
    mode: ExecMode,
) -> Result<EvalReport> {
    let fused = forward_all(params, graph, mode)?;
    evaluate_with(candidates, labels, seed, mode, |u, i| {
        Ok(fused.score(&params.mlp, u, i)? as f64)
    })
}

/// Mean attention of one metapath over the nodes of its terminal type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub terminal: String,
    pub metapath: String,
    pub mean_attention: f64,
}

pub fn attention_report<T: Scalar>(fused: &FusedRepr<T>) -> Vec<AttentionRow> {
    let mut rows = Vec::new();
    for (terminal, att, names) in [
        ("user", &fused.att_user, &fused.user_paths),
        ("item", &fused.att_item, &fused.item_paths),
    ] {
        let n = att.rows().max(1) as f64;
        for (k, name) in names.iter().enumerate() {
            let s: f64 = (0..att.rows()).map(|r| att.at(r, k).as_f64()).sum();
            rows.push(AttentionRow {
                terminal: terminal.into(),
                metapath: name.clone(),
                mean_attention: s / n,
            });
        }
    }
    rows
}

/// `terminal,metapath,mean_attention`
pub fn attention_csv(rows: &[AttentionRow]) -> String {
    let mut s = String::from("terminal,metapath,mean_attention\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.terminal, r.metapath, r.mean_attention);
    }
    s
}

/// Worst-case deviations of the fusion attention from its defining
/// properties on one forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionCheck {
    /// max over nodes of |Σ att − 1|
    pub simplex_error: f64,
    /// max change in attention or fused output after adding `shift` to every
    /// importance score
    pub shift_error: f64,
    pub nodes: usize,
}

/// Recomputes the fusion from the per-metapath representations, checks the
/// simplex property of the attention and that shifting all scores by a
/// constant changes nothing.
pub fn check_fusion_invariants(
    params: &ModelParams,
    graph: &ModelGraph,
    shift: f64,
    mode: ExecMode,
) -> Result<FusionCheck> {
    let mut tape = Tape::<f32>::with_mode(mode);
    let pv = params.register(&mut tape);
    let reprs = (0..graph.steps.len())
        .map(|k| metapath_aggregate(&mut tape, &pv, graph, k).map(|v| tape.value(v).clone()))
        .collect::<Result<Vec<Tensor<f32>>>>()?;
    let (up, ip) = split_by_terminal(&params.metapaths)?;
    let mut simplex_error: f64 = 0.0;
    let mut shift_error: f64 = 0.0;
    let mut nodes = 0;
    for (idx, rows, w) in [
        (&up, graph.users.clone(), &params.fusion_user),
        (&ip, graph.items.clone(), &params.fusion_item),
    ] {
        let d = params.dims.repr;
        for v in rows {
            nodes += 1;
            let h: Vec<&[f32]> = idx.iter().map(|&k| reprs[k].row(v)).collect();
            let c: Vec<f64> = h
                .iter()
                .enumerate()
                .map(|(i, x)| (0..d).map(|j| x[j] as f64 * w.at(j, i) as f64).sum())
                .collect();
            let fuse = |off: f64| {
                let m = c.iter().map(|s| s + off).fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = c.iter().map(|s| (s + off - m).exp()).collect();
                let z: f64 = ex.iter().sum();
                let att: Vec<f64> = ex.iter().map(|e| e / z).collect();
                let e: Vec<f64> = (0..d)
                    .map(|j| att.iter().zip(&h).map(|(a, x)| a * x[j] as f64).sum())
                    .collect();
                (att, e)
            };
            let (a0, e0) = fuse(0.0);
            let (a1, e1) = fuse(shift);
            simplex_error = simplex_error.max((a0.iter().sum::<f64>() - 1.0).abs());
            let diff = a0
                .iter()
                .zip(&a1)
                .chain(e0.iter().zip(&e1))
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            shift_error = shift_error.max(diff);
        }
    }
    // the attention the model itself produced must be a simplex point too
    let fused = forward_all(params, graph, mode)?;
    for att in [&fused.att_user, &fused.att_item] {
        for r in 0..att.rows() {
            let s: f64 = att.row(r).iter().map(|&a| a as f64).sum();
            simplex_error = simplex_error.max((s - 1.0).abs());
        }
    }
    Ok(FusionCheck {
        simplex_error,
        shift_error,
        nodes,
    })
}
