//! Dynamic time warping under absolute-difference cost.

use crate::error::{Error, Result};

/// Cumulative cost matrix, `(n + 1) x (m + 1)` with an infinite border.
fn accumulate(a: &[f64], b: &[f64]) -> Vec<f64> {
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    let mut acc = vec![f64::INFINITY; (n + 1) * w];
    acc[0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let best = acc[(i - 1) * w + j - 1].min(acc[(i - 1) * w + j]).min(acc[i * w + j - 1]);
            acc[i * w + j] = (a[i - 1] - b[j - 1]).abs() + best;
        }
    }
    acc
}

/// Total cost of the optimal monotone alignment (steps (1,0), (0,1), (1,1)).
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("dtw of an empty sequence".into()));
    }
    Ok(accumulate(a, b)[a.len() * (b.len() + 1) + b.len()])
}

/// Optimal cost and the index path from `(0, 0)` to `(n - 1, m - 1)`.
pub fn dtw_path(a: &[f64], b: &[f64]) -> Result<(f64, Vec<(usize, usize)>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("dtw of an empty sequence".into()));
    }
    let acc = accumulate(a, b);
    let w = b.len() + 1;
    let (mut i, mut j) = (a.len(), b.len());
    let mut path = vec![(i - 1, j - 1)];
    while i > 1 || j > 1 {
        let diag = acc[(i - 1) * w + j - 1];
        let up = acc[(i - 1) * w + j];
        let left = acc[i * w + j - 1];
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i - 1, j - 1));
    }
    path.reverse();
    Ok((acc[a.len() * w + b.len()], path))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DtwAlignment {
    /// Index of the reference sequence in the input.
    pub reference: usize,
    /// Every input warped onto the reference time axis.
    pub aligned: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
}

impl DtwAlignment {
    pub fn length(&self) -> usize {
        self.aligned[self.reference].len()
    }
}

/// Index of the lower-median-length sequence (first one on ties).
pub fn median_length_index(lengths: &[usize]) -> Option<usize> {
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let target = *sorted.get((sorted.len().checked_sub(1)?) / 2)?;
    lengths.iter().position(|&l| l == target)
}

/// Warps every sequence onto the median-length one; reference samples matched
/// by several source samples get their mean.
pub fn dtw_align(sequences: &[Vec<f64>]) -> Result<DtwAlignment> {
    if sequences.is_empty() || sequences.iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument("dtw_align needs non-empty sequences".into()));
    }
    let lengths: Vec<usize> = sequences.iter().map(Vec::len).collect();
    let reference = median_length_index(&lengths).expect("non-empty");
    let r = &sequences[reference];
    let mut aligned = Vec::with_capacity(sequences.len());
    let mut costs = Vec::with_capacity(sequences.len());
    for s in sequences {
        let (cost, path) = dtw_path(r, s)?;
        let mut sum = vec![0.0; r.len()];
        let mut count = vec![0usize; r.len()];
        for (i, j) in path {
            sum[i] += s[j];
            count[i] += 1;
        }
        aligned.push(sum.iter().zip(&count).map(|(s, c)| s / *c as f64).collect());
        costs.push(cost);
    }
    Ok(DtwAlignment {
        reference,
        aligned,
        costs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive minimum over monotone paths.
    fn brute_force(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
        let c = (a[i] - b[j]).abs();
        if i == 0 && j == 0 {
            return c;
        }
        let mut best = f64::INFINITY;
        if i > 0 {
            best = best.min(brute_force(a, b, i - 1, j));
        }
        if j > 0 {
            best = best.min(brute_force(a, b, i, j - 1));
        }
        if i > 0 && j > 0 {
            best = best.min(brute_force(a, b, i - 1, j - 1));
        }
        c + best
    }

    #[test]
    fn small_example() {
        assert_eq!(dtw_distance(&[1.0, 2.0, 3.0], &[1.0, 3.0]).unwrap(), 1.0);
    }

    #[test]
    fn identical_sequences() {
        let s = vec![0.5, 1.0, -2.0, 3.0];
        let out = dtw_align(&[s.clone(), s.clone(), s.clone()]).unwrap();
        assert!(out.aligned.iter().all(|a| a == &s));
        assert!(out.costs.iter().all(|&c| c == 0.0));
        let (_, path) = dtw_path(&s, &s).unwrap();
        assert_eq!(path, (0..4).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn dilated_copy_realigns() {
        let base: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin() + 0.01 * i as f64).collect();
        let dilated: Vec<f64> = base.iter().flat_map(|&v| [v, v]).collect();
        let out = dtw_align(&[base.clone(), dilated]).unwrap();
        assert_eq!(out.reference, 0);
        for (a, b) in out.aligned[1].iter().zip(&base) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn median_reference() {
        let seqs = vec![vec![0.0; 5], vec![0.0; 9], vec![0.0; 7]];
        let out = dtw_align(&seqs).unwrap();
        assert_eq!(out.reference, 2);
        assert!(out.aligned.iter().all(|a| a.len() == 7));
        assert_eq!(median_length_index(&[4, 6]), Some(0));
        assert!(dtw_align(&[]).is_err());
    }

    proptest! {
        #[test]
        fn matches_brute_force(a in prop::collection::vec(-3.0f64..3.0, 1..6), b in prop::collection::vec(-3.0f64..3.0, 1..6)) {
            let fast = dtw_distance(&a, &b).unwrap();
            let slow = brute_force(&a, &b, a.len() - 1, b.len() - 1);
            prop_assert!((fast - slow).abs() < 1e-12);
        }

        #[test]
        fn symmetric_and_self_zero(a in prop::collection::vec(-3.0f64..3.0, 1..30), b in prop::collection::vec(-3.0f64..3.0, 1..30)) {
            prop_assert_eq!(dtw_distance(&a, &a).unwrap(), 0.0);
            let ab = dtw_distance(&a, &b).unwrap();
            let ba = dtw_distance(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
        }
    }
}
