use std::ops::Range;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Hin, NodeType, SplitDataset, RATED};
use crate::error::{Error, Result};

/// Every item each user interacted with (train, validation and test), sorted.
#[derive(Clone, Debug)]
pub struct Positives {
    user_start: usize,
    items: Vec<Vec<usize>>,
}

impl Positives {
    pub fn from_split(hin: &Hin, split: &SplitDataset) -> Self {
        let user_start = hin.users().start;
        let mut items = vec![Vec::new(); hin.users().len()];
        for it in split.all() {
            items[it.user - user_start].push(it.item);
        }
        for v in &mut items {
            v.sort_unstable();
            v.dedup();
        }
        Positives { user_start, items }
    }

    pub fn of(&self, user: usize) -> &[usize] {
        &self.items[user - self.user_start]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.of(user).binary_search(&item).is_ok()
    }

    /// Items in `items` the user never interacted with, ascending.
    pub fn unseen(&self, user: usize, items: Range<usize>) -> Vec<usize> {
        let pos = self.of(user);
        items.filter(|i| pos.binary_search(i).is_err()).collect()
    }
}

/// A BPR training triple: user, observed item, unobserved item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// `ratio` triples per training positive, negatives drawn uniformly (with
/// replacement) from the user's unseen items.
pub fn sample_train_negatives(
    split: &SplitDataset,
    hin: &Hin,
    ratio: usize,
    seed: u64,
) -> Result<Vec<Triple>> {
    if ratio == 0 {
        return Err(Error::Contract("negative ratio must be at least 1".into()));
    }
    let positives = Positives::from_split(hin, split);
    let items = hin.items();
    let n_items = items.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(split.train.len() * ratio);
    let mut dense_cache: Option<(usize, Vec<usize>)> = None;
    for it in &split.train {
        let pos = positives.of(it.user);
        if pos.len() >= n_items {
            return Err(Error::Sampling(format!(
                "user {} interacted with every item",
                hin.label(it.user)
            )));
        }
        let unseen = n_items - pos.len();
        for _ in 0..ratio {
            let neg = if unseen * 8 >= n_items {
                loop {
                    let cand = items.start + rng.random_range(0..n_items);
                    if pos.binary_search(&cand).is_err() {
                        break cand;
                    }
                }
            } else {
                // few unseen items: sample from the explicit list
                if dense_cache.as_ref().is_none_or(|(u, _)| *u != it.user) {
                    dense_cache = Some((it.user, positives.unseen(it.user, items.clone())));
                }
                let list = &dense_cache.as_ref().expect("filled above").1;
                list[rng.random_range(0..list.len())]
            };
            out.push(Triple {
                user: it.user,
                pos: it.item,
                neg,
            });
        }
    }
    Ok(out)
}

/// Which held-out interaction a candidate list ranks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateTarget {
    Test,
    Validation,
}

/// Items to rank for one user; contains `target` exactly once.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateList {
    pub user: usize,
    pub target: usize,
    pub items: Vec<usize>,
}

/// Per held-out user: the held-out item plus `n_candidates - 1` distinct
/// unseen items, shuffled.
pub fn sample_eval_candidates(
    split: &SplitDataset,
    hin: &Hin,
    target: CandidateTarget,
    n_candidates: usize,
    seed: u64,
) -> Result<Vec<CandidateList>> {
    if n_candidates < 11 {
        return Err(Error::Contract(format!(
            "need at least 11 candidates for a top-10 cut, got {n_candidates}"
        )));
    }
    let positives = Positives::from_split(hin, split);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let held = match target {
        CandidateTarget::Test => &split.test,
        CandidateTarget::Validation => &split.validation,
    };
    held.iter()
        .map(|it| {
            let unseen = positives.unseen(it.user, hin.items());
            if unseen.len() < n_candidates - 1 {
                return Err(Error::Sampling(format!(
                    "user {} has {} unseen items, {} needed",
                    hin.label(it.user),
                    unseen.len(),
                    n_candidates - 1
                )));
            }
            let mut items: Vec<usize> = index::sample(&mut rng, unseen.len(), n_candidates - 1)
                .into_iter()
                .map(|k| unseen[k])
                .collect();
            items.push(it.item);
            items.shuffle(&mut rng);
            Ok(CandidateList {
                user: it.user,
                target: it.item,
                items,
            })
        })
        .collect()
}

/// Outcome of drawing an entity-contrast pair for one node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Contrast {
    /// `pos` is connected to the node; `neg` has the same kind and is not.
    Pair { pos: usize, neg: usize },
    /// The node has no features, or is connected to every entity of the kind
    /// drawn for `pos`.
    Skip,
}

/// Feature-entity neighbourhoods of every user and item.
#[derive(Clone, Debug)]
pub struct FeatureIndex {
    neighbors: Vec<Vec<usize>>,
    kinds: Vec<Range<usize>>,
}

impl FeatureIndex {
    pub fn new(hin: &Hin) -> Self {
        let mut neighbors = vec![Vec::new(); hin.num_nodes()];
        for rel in hin.relations().iter().filter(|r| r.name != RATED) {
            let (s0, d0) = (hin.range(rel.src).start, hin.range(rel.dst).start);
            for (r, c, _) in rel.matrix.triples() {
                let (a, b) = (s0 + r, d0 + c);
                if rel.dst.is_feature() && !rel.src.is_feature() {
                    neighbors[a].push(b);
                } else if rel.src.is_feature() && !rel.dst.is_feature() {
                    neighbors[b].push(a);
                }
            }
        }
        for v in &mut neighbors {
            v.sort_unstable();
            v.dedup();
        }
        let kinds = hin
            .type_ranges()
            .iter()
            .filter(|r| r.node_type.is_feature() && r.len > 0)
            .map(|r| r.range())
            .collect();
        FeatureIndex { neighbors, kinds }
    }

    /// Feature entities connected to `node`, ascending.
    pub fn features_of(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn sample<R: Rng + ?Sized>(&self, node: usize, rng: &mut R) -> Contrast {
        let feats = &self.neighbors[node];
        if feats.is_empty() {
            return Contrast::Skip;
        }
        let pos = feats[rng.random_range(0..feats.len())];
        let kind = self
            .kinds
            .iter()
            .find(|r| r.contains(&pos))
            .expect("feature ids lie in a feature range")
            .clone();
        let lo = feats.partition_point(|&f| f < kind.start);
        let hi = feats.partition_point(|&f| f < kind.end);
        let connected = &feats[lo..hi];
        let free = kind.len() - connected.len();
        if free == 0 {
            return Contrast::Skip;
        }
        let neg = if free * 4 >= kind.len() {
            loop {
                let cand = kind.start + rng.random_range(0..kind.len());
                if connected.binary_search(&cand).is_err() {
                    break cand;
                }
            }
        } else {
            let mut k = rng.random_range(0..free);
            let mut pick = kind.start;
            for cand in kind.clone() {
                if connected.binary_search(&cand).is_err() {
                    if k == 0 {
                        pick = cand;
                        break;
                    }
                    k -= 1;
                }
            }
            pick
        };
        Contrast::Pair { pos, neg }
    }
}

/// One contrast draw for a user or item node.
pub fn sample_feature_contrast(hin: &Hin, node: usize, seed: u64) -> Result<Contrast> {
    match hin.node_type(node) {
        Some(NodeType::User | NodeType::Item) => {}
        other => {
            return Err(Error::Contract(format!(
                "contrast sampling needs a user or item, node {node} is {other:?}"
            )))
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(FeatureIndex::new(hin).sample(node, &mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::{leave_one_out_split, FeatureKind, HinBuilder};

    fn grid(users: usize, items: usize, per_user: usize) -> Hin {
        let mut b = HinBuilder::new();
        for u in 0..users {
            for k in 0..per_user {
                let i = (u * 7 + k * 3) % items;
                b.add_interaction(&u.to_string(), &i.to_string(), k as i64);
            }
        }
        b.build().unwrap()
    }

    #[test]
    fn ratio_four_gives_four_triples_per_positive() {
        let h = grid(10, 200, 13);
        let s = leave_one_out_split(&h, 1).unwrap();
        let triples = sample_train_negatives(&s, &h, 4, 9).unwrap();
        assert_eq!(triples.len(), s.train.len() * 4);
        let pos = Positives::from_split(&h, &s);
        assert!(triples.iter().all(|t| !pos.contains(t.user, t.neg)));
        assert_eq!(triples, sample_train_negatives(&s, &h, 4, 9).unwrap());
    }

    #[test]
    fn single_unseen_item_is_always_the_negative() {
        let mut b = HinBuilder::new();
        for i in 0..5 {
            b.add_interaction("1", &i.to_string(), i as i64);
        }
        b.add_interaction("2", "5", 0);
        let h = b.build().unwrap();
        let s = SplitDataset {
            train: h
                .interactions()
                .iter()
                .filter(|it| h.label(it.user) == "1")
                .copied()
                .collect(),
            validation: vec![],
            test: vec![],
        };
        let t = sample_train_negatives(&s, &h, 4, 0).unwrap();
        let five = h.find(NodeType::Item, "5").unwrap();
        assert!(t.iter().all(|t| t.neg == five));
    }

    #[test]
    fn saturated_user_cannot_be_sampled() {
        let mut b = HinBuilder::new();
        for i in 0..3 {
            b.add_interaction("1", &i.to_string(), i as i64);
        }
        let h = b.build().unwrap();
        let s = SplitDataset {
            train: h.interactions().to_vec(),
            validation: vec![],
            test: vec![],
        };
        assert!(matches!(
            sample_train_negatives(&s, &h, 1, 0),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn candidate_lists_follow_the_rules() {
        let h = grid(40, 300, 20);
        let s = leave_one_out_split(&h, 2).unwrap();
        let lists = sample_eval_candidates(&s, &h, CandidateTarget::Test, 100, 4).unwrap();
        let pos = Positives::from_split(&h, &s);
        for l in &lists {
            assert_eq!(l.items.len(), 100);
            assert_eq!(l.items.iter().filter(|&&i| i == l.target).count(), 1);
            let mut sorted = l.items.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 100);
            assert!(l
                .items
                .iter()
                .filter(|&&i| i != l.target)
                .all(|&i| !pos.contains(l.user, i)));
        }
        assert_eq!(
            lists,
            sample_eval_candidates(&s, &h, CandidateTarget::Test, 100, 4).unwrap()
        );
        assert!(matches!(
            sample_eval_candidates(&s, &h, CandidateTarget::Test, 10, 4),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            sample_eval_candidates(&s, &h, CandidateTarget::Test, 290, 4),
            Err(Error::Sampling(_))
        ));
    }

    fn genre_hin() -> Hin {
        let mut b = HinBuilder::new();
        b.add_interaction("1", "10", 0);
        b.add_interaction("1", "20", 0);
        b.add_feature_edge(NodeType::Item, "10", FeatureKind::Genre, "Action")
            .unwrap();
        for g in ["Comedy", "Drama", "Horror", "Noir", "Western"] {
            b.add_feature_edge(NodeType::Item, "20", FeatureKind::Genre, g)
                .unwrap();
        }
        b.build().unwrap()
    }

    #[test]
    fn contrast_pair_respects_kind_and_connectivity() {
        let h = genre_hin();
        let movie = h.find(NodeType::Item, "10").unwrap();
        let action = h
            .find(NodeType::Feature(FeatureKind::Genre), "Action")
            .unwrap();
        for seed in 0..20 {
            match sample_feature_contrast(&h, movie, seed).unwrap() {
                Contrast::Pair { pos, neg } => {
                    assert_eq!(pos, action);
                    assert_ne!(neg, action);
                    assert_eq!(
                        h.node_type(neg),
                        Some(NodeType::Feature(FeatureKind::Genre))
                    );
                }
                Contrast::Skip => panic!("movie has features"),
            }
        }
        let user = h.find(NodeType::User, "1").unwrap();
        assert_eq!(
            sample_feature_contrast(&h, user, 0).unwrap(),
            Contrast::Skip
        );
        let genre = h.range(NodeType::Feature(FeatureKind::Genre)).start;
        assert!(sample_feature_contrast(&h, genre, 0).is_err());
    }

    #[test]
    fn saturated_kind_is_skipped() {
        let mut b = HinBuilder::new();
        b.add_interaction("1", "10", 0);
        b.add_feature_edge(NodeType::Item, "10", FeatureKind::Genre, "Only")
            .unwrap();
        let h = b.build().unwrap();
        let movie = h.find(NodeType::Item, "10").unwrap();
        assert_eq!(
            sample_feature_contrast(&h, movie, 3).unwrap(),
            Contrast::Skip
        );
    }

    #[test]
    fn negative_feature_is_uniform() {
        // movie 20 has 5 genres out of 6, so its negative is always Action;
        // movie 10 has 1 of 6, its negatives should be uniform over 5.
        let h = genre_hin();
        let movie = h.find(NodeType::Item, "10").unwrap();
        let idx = FeatureIndex::new(&h);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let genres = h.range(NodeType::Feature(FeatureKind::Genre));
        let mut counts = vec![0f64; genres.len()];
        let draws = 10_000;
        for _ in 0..draws {
            if let Contrast::Pair { neg, .. } = idx.sample(movie, &mut rng) {
                counts[neg - genres.start] += 1.0;
            }
        }
        let action = h
            .find(NodeType::Feature(FeatureKind::Genre), "Action")
            .unwrap()
            - genres.start;
        assert_eq!(counts[action], 0.0);
        let expected = draws as f64 / 5.0;
        let chi2: f64 = counts
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != action)
            .map(|(_, &c)| (c - expected).powi(2) / expected)
            .sum();
        // 4 degrees of freedom, p = 0.001
        assert!(chi2 < 18.47, "chi2 = {chi2}");
    }
}
