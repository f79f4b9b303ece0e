//! Heterogeneous information network: typed nodes, typed relations and the
//! user-item interaction log, plus ingestion, filtering, splitting and
//! sampling.

mod ingest;
mod io;
mod kcore;
mod sampling;
mod split;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub use ingest::{ingest_movielens_small, ingest_movielens_with, IngestOptions};
pub use io::{load_hin, save_hin};
pub use kcore::kcore_filter;
pub use sampling::{
    sample_eval_candidates, sample_feature_contrast, sample_train_negatives, CandidateList,
    CandidateTarget, Contrast, FeatureIndex, Positives, Triple,
};
pub use split::{leave_one_out_split, SplitDataset};

/// Relation between users and the items they interacted with.
pub const RATED: &str = "rated";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureKind {
    Year,
    Genre,
    Tag,
    Actor,
    Director,
    Writer,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 6] = [
        FeatureKind::Year,
        FeatureKind::Genre,
        FeatureKind::Tag,
        FeatureKind::Actor,
        FeatureKind::Director,
        FeatureKind::Writer,
    ];

    pub fn code(self) -> char {
        match self {
            FeatureKind::Year => 'Y',
            FeatureKind::Genre => 'G',
            FeatureKind::Tag => 'T',
            FeatureKind::Actor => 'A',
            FeatureKind::Director => 'D',
            FeatureKind::Writer => 'W',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Year => "year",
            FeatureKind::Genre => "genre",
            FeatureKind::Tag => "tag",
            FeatureKind::Actor => "actor",
            FeatureKind::Director => "director",
            FeatureKind::Writer => "writer",
        }
    }

    pub fn parse(s: &str) -> Option<FeatureKind> {
        let s = s.trim().to_ascii_lowercase();
        FeatureKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Node type tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeType {
    User,
    Item,
    Feature(FeatureKind),
}

impl NodeType {
    /// One-letter code used in metapath names (`U`, `M`, `Y`, ...).
    pub fn code(self) -> char {
        match self {
            NodeType::User => 'U',
            NodeType::Item => 'M',
            NodeType::Feature(k) => k.code(),
        }
    }

    pub fn from_code(c: char) -> Option<NodeType> {
        match c {
            'U' => Some(NodeType::User),
            'M' | 'I' => Some(NodeType::Item),
            _ => FeatureKind::ALL
                .into_iter()
                .find(|k| k.code() == c)
                .map(NodeType::Feature),
        }
    }

    pub fn is_feature(self) -> bool {
        matches!(self, NodeType::Feature(_))
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeType::User => f.write_str("user"),
            NodeType::Item => f.write_str("item"),
            NodeType::Feature(k) => f.write_str(k.name()),
        }
    }
}

/// Default relation name linking two node types, in either order.
pub fn default_relation(a: NodeType, b: NodeType) -> Option<&'static str> {
    use FeatureKind::*;
    use NodeType::*;
    let (x, y) = if a <= b { (a, b) } else { (b, a) };
    match (x, y) {
        (User, Item) => Some(RATED),
        (Item, Feature(Year)) => Some("has_year"),
        (Item, Feature(Genre)) => Some("has_genre"),
        (Item, Feature(Tag)) => Some("tagged_with"),
        (Item, Feature(Actor)) => Some("has_actor"),
        (Item, Feature(Director)) => Some("directed_by"),
        (Item, Feature(Writer)) => Some("written_by"),
        (User, Feature(Tag)) => Some("tagged"),
        _ => None,
    }
}

/// Contiguous id block holding every node of one type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeRange {
    pub node_type: NodeType,
    pub start: usize,
    pub len: usize,
}

impl TypeRange {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// A typed relation. The matrix is indexed by type-local ids:
/// rows are `src` nodes, columns `dst` nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Relation {
    pub name: String,
    pub src: NodeType,
    pub dst: NodeType,
    pub matrix: CsrMatrix,
}

/// One observed user-item interaction (global node ids).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub timestamp: i64,
}

/// The network. Node ids are dense and grouped by type: users, then items,
/// then one block per feature kind.
#[derive(Clone, Debug, PartialEq)]
pub struct Hin {
    ranges: Vec<TypeRange>,
    labels: Vec<String>,
    relations: Vec<Relation>,
    interactions: Vec<Interaction>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HinStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub nodes: usize,
    pub features: BTreeMap<String, usize>,
    pub relations: BTreeMap<String, usize>,
}

impl Hin {
    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn type_ranges(&self) -> &[TypeRange] {
        &self.ranges
    }

    /// Id range of a node type; empty when the type is absent.
    pub fn range(&self, t: NodeType) -> Range<usize> {
        self.ranges
            .iter()
            .find(|r| r.node_type == t)
            .map_or(0..0, TypeRange::range)
    }

    pub fn has_type(&self, t: NodeType) -> bool {
        !self.range(t).is_empty()
    }

    pub fn count(&self, t: NodeType) -> usize {
        self.range(t).len()
    }

    pub fn users(&self) -> Range<usize> {
        self.range(NodeType::User)
    }

    pub fn items(&self) -> Range<usize> {
        self.range(NodeType::Item)
    }

    pub fn node_type(&self, id: usize) -> Option<NodeType> {
        self.ranges
            .iter()
            .find(|r| r.range().contains(&id))
            .map(|r| r.node_type)
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Global id of a node by type and label.
    pub fn find(&self, t: NodeType, label: &str) -> Option<usize> {
        self.range(t).find(|&i| self.labels[i] == label)
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation(&self, name: &str) -> Option<&Relation> {
        self.relations.iter().find(|r| r.name == name)
    }

    /// Interactions sorted by `(user, item)`, one per pair.
    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn feature_kinds(&self) -> Vec<FeatureKind> {
        self.ranges
            .iter()
            .filter_map(|r| match r.node_type {
                NodeType::Feature(k) if r.len > 0 => Some(k),
                _ => None,
            })
            .collect()
    }

    pub fn stats(&self) -> HinStats {
        HinStats {
            users: self.count(NodeType::User),
            items: self.count(NodeType::Item),
            interactions: self.interactions.len(),
            nodes: self.num_nodes(),
            features: self
                .feature_kinds()
                .into_iter()
                .map(|k| (k.name().to_string(), self.count(NodeType::Feature(k))))
                .collect(),
            relations: self
                .relations
                .iter()
                .map(|r| (r.name.clone(), r.matrix.nnz()))
                .collect(),
        }
    }

    /// Interaction degree of every node (zero for feature nodes).
    pub fn interaction_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_nodes()];
        for it in &self.interactions {
            deg[it.user] += 1;
            deg[it.item] += 1;
        }
        deg
    }

    /// Same nodes and feature relations, with the interaction log (and the
    /// `rated` relation) replaced by `interactions`. Used to build the
    /// training graph that excludes held-out pairs.
    pub fn with_interactions(&self, interactions: &[Interaction]) -> Result<Hin> {
        let mut out = self.clone();
        out.interactions = dedup_interactions(interactions.to_vec());
        for it in &out.interactions {
            if !out.users().contains(&it.user) || !out.items().contains(&it.item) {
                return Err(Error::Contract(format!(
                    "interaction ({}, {}) does not join a user and an item",
                    it.user, it.item
                )));
            }
        }
        out.rebuild_rated()?;
        Ok(out)
    }

    fn rebuild_rated(&mut self) -> Result<()> {
        let (u0, i0) = (self.users().start, self.items().start);
        let matrix = CsrMatrix::from_edges(
            self.count(NodeType::User),
            self.count(NodeType::Item),
            self.interactions
                .iter()
                .map(|it| (it.user - u0, it.item - i0, 1.0)),
        )?;
        self.relations.retain(|r| r.name != RATED);
        self.relations.push(Relation {
            name: RATED.to_string(),
            src: NodeType::User,
            dst: NodeType::Item,
            matrix,
        });
        self.relations.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(())
    }

    /// Keeps only nodes whose mask entry is true, re-densifying ids while
    /// preserving relative order. Edges and interactions touching a dropped
    /// node disappear.
    pub fn induced(&self, keep: &[bool]) -> Result<Hin> {
        if keep.len() != self.num_nodes() {
            return Err(Error::dims("induced", &[keep.len()], &[self.num_nodes()]));
        }
        let mut new_id = vec![usize::MAX; self.num_nodes()];
        let mut labels = Vec::new();
        let mut ranges = Vec::new();
        for r in &self.ranges {
            let start = labels.len();
            for id in r.range() {
                if keep[id] {
                    new_id[id] = labels.len();
                    labels.push(self.labels[id].clone());
                }
            }
            ranges.push(TypeRange {
                node_type: r.node_type,
                start,
                len: labels.len() - start,
            });
        }
        let mut out = Hin {
            ranges,
            labels,
            relations: Vec::new(),
            interactions: Vec::new(),
        };
        for rel in &self.relations {
            if rel.name == RATED {
                continue;
            }
            let (s_old, d_old) = (self.range(rel.src).start, self.range(rel.dst).start);
            let (s_new, d_new) = (out.range(rel.src).start, out.range(rel.dst).start);
            let edges: Vec<_> = rel
                .matrix
                .triples()
                .filter_map(|(r, c, v)| {
                    let (a, b) = (new_id[s_old + r], new_id[d_old + c]);
                    (a != usize::MAX && b != usize::MAX).then(|| (a - s_new, b - d_new, v))
                })
                .collect();
            out.relations.push(Relation {
                name: rel.name.clone(),
                src: rel.src,
                dst: rel.dst,
                matrix: CsrMatrix::from_edges(out.count(rel.src), out.count(rel.dst), edges)?,
            });
        }
        out.interactions = self
            .interactions
            .iter()
            .filter(|it| keep[it.user] && keep[it.item])
            .map(|it| Interaction {
                user: new_id[it.user],
                item: new_id[it.item],
                timestamp: it.timestamp,
            })
            .collect();
        out.rebuild_rated()?;
        Ok(out)
    }

    /// Number of feature edges touching each node, over all feature relations.
    pub fn feature_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_nodes()];
        for rel in self.relations.iter().filter(|r| r.name != RATED) {
            let (s0, d0) = (self.range(rel.src).start, self.range(rel.dst).start);
            for (r, c, _) in rel.matrix.triples() {
                deg[s0 + r] += 1;
                deg[d0 + c] += 1;
            }
        }
        deg
    }
}

fn dedup_interactions(mut v: Vec<Interaction>) -> Vec<Interaction> {
    // latest timestamp wins for repeated pairs
    v.sort_by_key(|it| (it.user, it.item, std::cmp::Reverse(it.timestamp)));
    v.dedup_by_key(|it| (it.user, it.item));
    v
}

/// Sort key that orders numeric labels numerically and the rest lexically.
fn label_key(label: &str) -> (u8, u64, String) {
    match label.parse::<u64>() {
        Ok(n) => (0, n, String::new()),
        Err(_) => (1, 0, label.to_string()),
    }
}

/// Incremental construction by external labels.
#[derive(Default)]
pub struct HinBuilder {
    nodes: BTreeMap<NodeType, Vec<String>>,
    seen: HashSet<(NodeType, String)>,
    edges: BTreeMap<(String, NodeType, NodeType), Vec<(String, String, f32)>>,
    interactions: Vec<(String, String, i64)>,
}

impl HinBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, t: NodeType, label: &str) {
        if self.seen.insert((t, label.to_string())) {
            self.nodes.entry(t).or_default().push(label.to_string());
        }
    }

    pub fn contains(&self, t: NodeType, label: &str) -> bool {
        self.seen.contains(&(t, label.to_string()))
    }

    pub fn add_interaction(&mut self, user: &str, item: &str, timestamp: i64) {
        self.add_node(NodeType::User, user);
        self.add_node(NodeType::Item, item);
        self.interactions
            .push((user.to_string(), item.to_string(), timestamp));
    }

    /// Adds an edge from an existing user or item to a feature entity,
    /// creating the feature node when needed. The relation name defaults
    /// from the endpoint types.
    pub fn add_feature_edge(
        &mut self,
        endpoint: NodeType,
        label: &str,
        kind: FeatureKind,
        value: &str,
    ) -> Result<()> {
        if !self.contains(endpoint, label) {
            return Err(Error::Contract(format!(
                "feature edge from unknown {endpoint} {label}"
            )));
        }
        let dst = NodeType::Feature(kind);
        let name = default_relation(endpoint, dst)
            .ok_or_else(|| Error::Contract(format!("no relation between {endpoint} and {dst}")))?;
        self.add_node(dst, value);
        self.edges
            .entry((name.to_string(), endpoint, dst))
            .or_default()
            .push((label.to_string(), value.to_string(), 1.0));
        Ok(())
    }

    pub fn build(self) -> Result<Hin> {
        let mut order: Vec<NodeType> = vec![NodeType::User, NodeType::Item];
        order.extend(FeatureKind::ALL.into_iter().map(NodeType::Feature));

        let mut labels = Vec::new();
        let mut ranges = Vec::new();
        let mut index: HashMap<(NodeType, &str), usize> = HashMap::new();
        let mut sorted: BTreeMap<NodeType, Vec<String>> = BTreeMap::new();
        for t in &order {
            let mut ls = self.nodes.get(t).cloned().unwrap_or_default();
            ls.sort_by_key(|l| label_key(l));
            sorted.insert(*t, ls);
        }
        for t in &order {
            let ls = &sorted[t];
            let start = labels.len();
            labels.extend(ls.iter().cloned());
            ranges.push(TypeRange {
                node_type: *t,
                start,
                len: ls.len(),
            });
        }
        for r in &ranges {
            for id in r.range() {
                index.insert((r.node_type, labels[id].as_str()), id);
            }
        }
        let lookup = |t: NodeType, l: &str| index[&(t, l)];

        let interactions = dedup_interactions(
            self.interactions
                .iter()
                .map(|(u, i, ts)| Interaction {
                    user: lookup(NodeType::User, u),
                    item: lookup(NodeType::Item, i),
                    timestamp: *ts,
                })
                .collect(),
        );

        let start_of = |t: NodeType| {
            ranges
                .iter()
                .find(|r| r.node_type == t)
                .map_or(0, |r| r.start)
        };
        let count_of = |t: NodeType| {
            ranges
                .iter()
                .find(|r| r.node_type == t)
                .map_or(0, |r| r.len)
        };
        let mut relations = Vec::new();
        for ((name, src, dst), edges) in &self.edges {
            let (s0, d0) = (start_of(*src), start_of(*dst));
            let triples = edges
                .iter()
                .map(|(a, b, v)| (lookup(*src, a) - s0, lookup(*dst, b) - d0, *v));
            relations.push(Relation {
                name: name.clone(),
                src: *src,
                dst: *dst,
                matrix: CsrMatrix::from_edges(count_of(*src), count_of(*dst), triples)?,
            });
        }
        drop(index);
        let mut hin = Hin {
            ranges,
            labels,
            relations,
            interactions,
        };
        hin.rebuild_rated()?;
        Ok(hin)
    }
}
