use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::types::InteractionTrial;
use crate::error::{Error, Result};

/// Per-group test count: `round(n * fraction)` kept within `[1, n - 1]` when `n >= 2`.
pub fn test_count(n: usize, fraction: f64) -> usize {
    if n < 2 {
        return 0;
    }
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Whole-trial split stratified by (pair type, action). Both halves keep the
/// input order.
pub fn split_trials(
    trials: &[InteractionTrial],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<InteractionTrial>, Vec<InteractionTrial>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let mut groups: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for (i, t) in trials.iter().enumerate() {
        groups.entry((t.pair_type, t.action)).or_default().push(i);
    }
    let mut is_test = vec![false; trials.len()];
    for (g, (_, mut idx)) in groups.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((g as u64) << 32));
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(test_count(idx.len(), test_fraction)) {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<_>, Vec<_>) = trials.iter().cloned().zip(is_test).partition(|(_, t)| *t);
    Ok((train.into_iter().map(|p| p.0).collect(), test.into_iter().map(|p| p.0).collect()))
}
