use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Hin, Interaction};
use crate::error::{Error, Result};

/// Leave-one-out partition of the interaction log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDataset {
    /// Training interactions sorted by `(user, item)`.
    pub train: Vec<Interaction>,
    /// One randomly chosen non-test interaction per user, in user order.
    pub validation: Vec<Interaction>,
    /// Each user's latest interaction, in user order.
    pub test: Vec<Interaction>,
}

impl SplitDataset {
    /// Every interaction of the split, train first.
    pub fn all(&self) -> impl Iterator<Item = &Interaction> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }
}

/// Holds out each user's latest interaction for testing and one random
/// remaining interaction for validation. Timestamp ties resolve to the larger
/// item id being the later one.
pub fn leave_one_out_split(hin: &Hin, seed: u64) -> Result<SplitDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_user: Vec<Vec<Interaction>> = vec![Vec::new(); hin.users().len()];
    let u0 = hin.users().start;
    for it in hin.interactions() {
        per_user[it.user - u0].push(*it);
    }
    let mut split = SplitDataset {
        train: Vec::with_capacity(hin.interactions().len()),
        validation: Vec::with_capacity(per_user.len()),
        test: Vec::with_capacity(per_user.len()),
    };
    for (u, mut list) in per_user.into_iter().enumerate() {
        if list.len() < 3 {
            return Err(Error::Contract(format!(
                "user {} has {} interactions; leave-one-out needs at least 3",
                hin.label(u0 + u),
                list.len()
            )));
        }
        list.sort_by_key(|it| (it.timestamp, it.item));
        let test = list.pop().expect("checked length");
        let v = rng.random_range(0..list.len());
        let val = list.remove(v);
        split.test.push(test);
        split.validation.push(val);
        split.train.extend(list);
    }
    split.train.sort_by_key(|it| (it.user, it.item));
    Ok(split)
}
