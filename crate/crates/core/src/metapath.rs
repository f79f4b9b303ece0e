//! Metapath schemas and their per-hop propagation matrices.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hin::{default_relation, Hin, NodeType};
use crate::sparse::CsrMatrix;

/// One hop of a metapath: information flows from `src` nodes to `dst` nodes
/// along `relation`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetapathStep {
    pub src: NodeType,
    pub relation: String,
    pub dst: NodeType,
}

/// A typed node sequence such as `Y-M-U` (year → movie → user).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Metapath {
    pub name: String,
    pub steps: Vec<MetapathStep>,
}

impl Metapath {
    /// Parses either the short form `Y-M-U`, where each relation is the
    /// default one for its endpoint types, or the explicit form
    /// `Y-has_year-M-rated-U`.
    pub fn parse(spec: &str) -> Result<Metapath> {
        let bad = |reason: String| Error::Metapath {
            name: spec.to_string(),
            reason,
        };
        let tokens: Vec<&str> = spec.split('-').map(str::trim).collect();
        let node = |tok: &str| {
            let mut chars = tok.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => NodeType::from_code(c.to_ascii_uppercase()),
                _ => None,
            }
        };
        let explicit = tokens.len() >= 3 && node(tokens[1]).is_none();
        let mut steps = Vec::new();
        if explicit {
            if tokens.len().is_multiple_of(2) {
                return Err(bad("explicit form alternates types and relations".into()));
            }
            for w in tokens.windows(3).step_by(2) {
                let src = node(w[0]).ok_or_else(|| bad(format!("unknown node type {:?}", w[0])))?;
                let dst = node(w[2]).ok_or_else(|| bad(format!("unknown node type {:?}", w[2])))?;
                steps.push(MetapathStep {
                    src,
                    relation: w[1].to_string(),
                    dst,
                });
            }
        } else {
            let types = tokens
                .iter()
                .map(|t| node(t).ok_or_else(|| bad(format!("unknown node type {t:?}"))))
                .collect::<Result<Vec<_>>>()?;
            for w in types.windows(2) {
                let relation = default_relation(w[0], w[1])
                    .ok_or_else(|| bad(format!("no relation links {} and {}", w[0], w[1])))?;
                steps.push(MetapathStep {
                    src: w[0],
                    relation: relation.to_string(),
                    dst: w[1],
                });
            }
        }
        if steps.is_empty() {
            return Err(bad("a metapath needs at least one hop".into()));
        }
        Ok(Metapath::from_steps(steps))
    }

    /// Builds a metapath and derives its canonical name: the short form when
    /// every relation is the default one, the explicit form otherwise.
    pub fn from_steps(steps: Vec<MetapathStep>) -> Metapath {
        let defaults = steps
            .iter()
            .all(|s| default_relation(s.src, s.dst) == Some(s.relation.as_str()));
        let mut name = String::new();
        if let Some(first) = steps.first() {
            name.push(first.src.code());
        }
        for s in &steps {
            if !defaults {
                name.push('-');
                name.push_str(&s.relation);
            }
            name.push('-');
            name.push(s.dst.code());
        }
        Metapath { name, steps }
    }

    pub fn n_hops(&self) -> usize {
        self.steps.len()
    }

    /// Type whose nodes receive the final representation.
    pub fn terminal(&self) -> NodeType {
        self.steps.last().expect("metapaths are non-empty").dst
    }

    pub fn node_types(&self) -> Vec<NodeType> {
        let mut v = vec![self.steps[0].src];
        v.extend(self.steps.iter().map(|s| s.dst));
        v
    }
}

impl fmt::Display for Metapath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Metapaths for MovieLens. The six CSV-derivable paths, or all nine when
/// actor/director/writer enrichment is loaded.
pub fn default_metapaths_movielens(enriched: bool) -> Vec<Metapath> {
    let mut names = vec!["U-M-U", "M-U-M", "Y-M-U", "G-M-U", "T-M-U", "T-U-M"];
    if enriched {
        names.extend(["A-M-U", "W-M-U", "D-M-U"]);
    }
    names
        .into_iter()
        .map(|n| Metapath::parse(n).expect("built-in metapaths parse"))
        .collect()
}

/// Checks chaining, that the path ends at a user or item, and that every
/// relation exists in `hin` and joins the step's endpoint types.
pub fn validate_metapath(mp: &Metapath, hin: &Hin) -> Result<()> {
    let bad = |reason: String| {
        Err(Error::Metapath {
            name: mp.name.clone(),
            reason,
        })
    };
    if mp.steps.is_empty() {
        return bad("no hops".into());
    }
    for (k, w) in mp.steps.windows(2).enumerate() {
        if w[0].dst != w[1].src {
            return bad(format!(
                "hop {} ends at {} but hop {} starts at {}",
                k + 1,
                w[0].dst,
                k + 2,
                w[1].src
            ));
        }
    }
    let t = mp.terminal();
    if !matches!(t, NodeType::User | NodeType::Item) {
        return bad(format!("ends at {t}; must end at a user or item"));
    }
    for s in &mp.steps {
        let Some(rel) = hin.relation(&s.relation) else {
            return bad(format!("unknown relation {:?}", s.relation));
        };
        let forward = rel.src == s.src && rel.dst == s.dst;
        let backward = rel.src == s.dst && rel.dst == s.src;
        if !forward && !backward {
            return bad(format!(
                "relation {:?} joins {} and {}, not {} and {}",
                s.relation, rel.src, rel.dst, s.src, s.dst
            ));
        }
    }
    Ok(())
}

/// Per-hop 0/1 propagation matrices over the full node-id space. Rows are
/// targets: entry `(t, s)` is 1 when hop `k` carries information from `s`
/// to `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepAdjacency {
    pub matrices: Vec<CsrMatrix>,
}

pub fn derive_step_adjacencies(mp: &Metapath, hin: &Hin) -> Result<StepAdjacency> {
    validate_metapath(mp, hin)?;
    let n = hin.num_nodes();
    let mut matrices = Vec::with_capacity(mp.n_hops());
    for s in &mp.steps {
        let rel = hin.relation(&s.relation).ok_or_else(|| Error::Metapath {
            name: mp.name.clone(),
            reason: format!("relation {:?} missing", s.relation),
        })?;
        let (r0, c0) = (hin.range(rel.src).start, hin.range(rel.dst).start);
        let forward = rel.src == s.src && rel.dst == s.dst;
        let edges = rel.matrix.triples().map(|(r, c, _)| {
            let (a, b) = (r0 + r, c0 + c);
            if forward {
                (b, a, 1.0)
            } else {
                (a, b, 1.0)
            }
        });
        let mut m = CsrMatrix::from_edges(n, n, edges)?;
        // duplicate relation entries would sum; adjacency is boolean
        if m.values().iter().any(|&v| v != 1.0) {
            m = m.pattern();
        }
        matrices.push(m);
    }
    Ok(StepAdjacency { matrices })
}

/// Every metapath with `min_hops..=max_hops` hops whose consecutive types
/// are linked by a relation present in `hin`, ending at a user or item.
pub fn enumerate_metapaths(hin: &Hin, min_hops: usize, max_hops: usize) -> Vec<Metapath> {
    let types: Vec<NodeType> = hin
        .type_ranges()
        .iter()
        .filter(|r| r.len > 0)
        .map(|r| r.node_type)
        .collect();
    let linked = |a: NodeType, b: NodeType| {
        default_relation(a, b).filter(|name| hin.relation(name).is_some())
    };
    let mut out = Vec::new();
    let mut stack: Vec<Vec<NodeType>> = types.iter().map(|&t| vec![t]).collect();
    while let Some(path) = stack.pop() {
        let hops = path.len() - 1;
        if hops >= min_hops && matches!(path[hops], NodeType::User | NodeType::Item) {
            let text: Vec<String> = path.iter().map(|t| t.code().to_string()).collect();
            out.push(Metapath::parse(&text.join("-")).expect("enumerated from defaults"));
        }
        if hops == max_hops {
            continue;
        }
        let last = path[hops];
        for &t in &types {
            if linked(last, t).is_some() {
                let mut next = path.clone();
                next.push(t);
                stack.push(next);
            }
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    out
}
