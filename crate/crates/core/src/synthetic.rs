//! Synthetic networks for tests, benchmarks and sanity runs.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hin::{FeatureKind, Hin, HinBuilder, NodeType};

/// Users whose interactions are fully determined by a single genre.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlantedConfig {
    pub users: usize,
    pub items: usize,
    pub genres: usize,
    /// Interactions per user, all inside the user's genre.
    pub per_user: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            users: 200,
            items: 100,
            genres: 10,
            per_user: 6,
        }
    }
}

/// Item `i` belongs to genre `i % genres`; user `u` prefers genre
/// `u % genres` and rates `per_user` distinct items of it.
pub fn planted_hin(cfg: PlantedConfig, seed: u64) -> Result<Hin> {
    if cfg.genres == 0 || cfg.items < cfg.genres {
        return Err(Error::Config(
            "planted network needs items >= genres > 0".into(),
        ));
    }
    let per_genre = cfg.items / cfg.genres;
    if cfg.per_user < 3 || cfg.per_user > per_genre {
        return Err(Error::Config(format!(
            "per_user must lie in 3..={per_genre}, got {}",
            cfg.per_user
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = HinBuilder::new();
    let genre_items: Vec<Vec<usize>> = (0..cfg.genres)
        .map(|g| (0..cfg.items).filter(|i| i % cfg.genres == g).collect())
        .collect();
    for u in 0..cfg.users {
        let pool = &genre_items[u % cfg.genres];
        for (t, k) in sample(&mut rng, pool.len(), cfg.per_user)
            .into_iter()
            .enumerate()
        {
            b.add_interaction(&format!("u{u}"), &format!("i{}", pool[k]), t as i64);
        }
    }
    for i in 0..cfg.items {
        let label = format!("i{i}");
        if !b.contains(NodeType::Item, &label) {
            b.add_node(NodeType::Item, &label);
        }
        b.add_feature_edge(
            NodeType::Item,
            &label,
            FeatureKind::Genre,
            &format!("g{}", i % cfg.genres),
        )?;
    }
    b.build()
}

/// Sizes and edge densities of a random network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandomHinConfig {
    pub users: usize,
    pub items: usize,
    pub years: usize,
    pub genres: usize,
    pub tags: usize,
    /// Probability of each extra user-item interaction beyond the guaranteed three.
    pub rate_p: f64,
    /// Probability of each extra item-genre, item-tag and user-tag edge.
    pub feature_p: f64,
}

impl RandomHinConfig {
    pub fn small() -> Self {
        RandomHinConfig {
            users: 3,
            items: 4,
            years: 1,
            genres: 1,
            tags: 1,
            rate_p: 0.3,
            feature_p: 0.4,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.users + self.items + self.years + self.genres + self.tags
    }
}

/// Every user rates at least three items, every item has a year and a
/// genre, and each feature relation has at least one edge.
pub fn random_hin(cfg: RandomHinConfig, seed: u64) -> Result<Hin> {
    if cfg.items < 3 || cfg.users == 0 || cfg.years == 0 || cfg.genres == 0 || cfg.tags == 0 {
        return Err(Error::Config(
            "random network needs >= 3 items and one node of every type".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = HinBuilder::new();
    for u in 0..cfg.users {
        let user = format!("u{u}");
        let base = sample(&mut rng, cfg.items, 3).into_vec();
        let mut ts = 0;
        for i in 0..cfg.items {
            if base.contains(&i) || rng.random_bool(cfg.rate_p) {
                b.add_interaction(&user, &format!("i{i}"), ts);
                ts += 1;
            }
        }
    }
    for i in 0..cfg.items {
        let item = format!("i{i}");
        if !b.contains(NodeType::Item, &item) {
            b.add_node(NodeType::Item, &item);
        }
        let y = rng.random_range(0..cfg.years);
        b.add_feature_edge(NodeType::Item, &item, FeatureKind::Year, &format!("y{y}"))?;
        let g0 = rng.random_range(0..cfg.genres);
        for g in 0..cfg.genres {
            if g == g0 || rng.random_bool(cfg.feature_p) {
                b.add_feature_edge(NodeType::Item, &item, FeatureKind::Genre, &format!("g{g}"))?;
            }
        }
        for t in 0..cfg.tags {
            if (i == 0 && t == 0) || rng.random_bool(cfg.feature_p) {
                b.add_feature_edge(NodeType::Item, &item, FeatureKind::Tag, &format!("t{t}"))?;
            }
        }
    }
    for u in 0..cfg.users {
        for t in 0..cfg.tags {
            if (u == 0 && t == 0) || rng.random_bool(cfg.feature_p) {
                b.add_feature_edge(
                    NodeType::User,
                    &format!("u{u}"),
                    FeatureKind::Tag,
                    &format!("t{t}"),
                )?;
            }
        }
    }
    b.build()
}
