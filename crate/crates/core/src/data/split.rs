use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Train/validation/test partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle then a 60/20/20 partition; validation and test each take
/// `⌊n/5⌋` items and training keeps the remainder.
pub fn split_dataset<T: Clone>(ids: &[T], seed: u64) -> Result<Split<T>> {
    if ids.len() < 5 {
        return Err(Error::Split(format!("need at least 5 items, got {}", ids.len())));
    }
    let mut items = ids.to_vec();
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ids.len() / 5;
    let n_test = ids.len() / 5;
    let test = items.split_off(items.len() - n_test);
    let val = items.split_off(items.len() - n_val);
    Ok(Split { train: items, val, test })
}
