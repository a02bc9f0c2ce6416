use rand::RngCore;

use crate::{par, util, Error, Result};

/// Result of a paired sign-flip permutation test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PermutationOutcome {
    pub p_value: f64,
    /// `|mean(a_i - b_i)|`.
    pub observed: f64,
    /// Sign assignments evaluated.
    pub permutations: u64,
    /// True when all `2^n` assignments were enumerated.
    pub exact: bool,
}

const CHUNK: usize = 1024;
const MAX_EXACT_PAIRS: usize = 24;

fn abs_mean(diffs: &[f64], signs: u64) -> f64 {
    let s: f64 = diffs
        .iter()
        .enumerate()
        .map(|(i, d)| if signs >> (i % 64) & 1 == 1 { -d } else { *d })
        .sum();
    (s / diffs.len() as f64).abs()
}

fn at_least(stat: f64, observed: f64) -> bool {
    stat >= observed - 1e-12 * observed.abs().max(f64::MIN_POSITIVE)
}

/// Two-sided paired permutation test on `|mean(a - b)|`.
///
/// When `2^n <= n_permutations` every sign assignment is enumerated and the
/// exact p-value `#{stat >= observed} / 2^n` is returned. Otherwise random
/// sign flips give `p = (1 + #{stat >= observed}) / (1 + n_permutations)`.
/// Monte Carlo draws are seeded per block of 1024 permutations, so the
/// p-value does not depend on `threads`.
pub fn paired_permutation_test(
    scores_a: &[f64],
    scores_b: &[f64],
    n_permutations: u64,
    seed: u64,
    threads: usize,
) -> Result<PermutationOutcome> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::Invalid(format!(
            "paired lists differ in length ({} vs {})",
            scores_a.len(),
            scores_b.len()
        )));
    }
    if scores_a.len() < 2 {
        return Err(Error::Invalid("permutation test needs at least 2 pairs".into()));
    }
    if n_permutations < 1 {
        return Err(Error::Config("n_permutations must be >= 1".into()));
    }
    let diffs: Vec<f64> = scores_a.iter().zip(scores_b).map(|(a, b)| a - b).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("non-finite score difference".into()));
    }
    let n = diffs.len();
    let observed = abs_mean(&diffs, 0);

    if n <= MAX_EXACT_PAIRS && (1u64 << n) <= n_permutations {
        let total = 1u64 << n;
        let count = (0..total)
            .filter(|&signs| at_least(abs_mean(&diffs, signs), observed))
            .count() as u64;
        return Ok(PermutationOutcome {
            p_value: count as f64 / total as f64,
            observed,
            permutations: total,
            exact: true,
        });
    }

    let blocks = (n_permutations as usize).div_ceil(CHUNK);
    let counts = par::map_range(threads, blocks, |b| {
        let mut rng = util::rng(seed, &[0x9e57, b as u64]);
        let todo = CHUNK.min(n_permutations as usize - b * CHUNK);
        let mut signs = vec![0u64; n.div_ceil(64)];
        let mut count = 0u64;
        for _ in 0..todo {
            signs.iter_mut().for_each(|s| *s = rng.next_u64());
            let s: f64 = diffs
                .iter()
                .enumerate()
                .map(|(i, d)| if signs[i / 64] >> (i % 64) & 1 == 1 { -d } else { *d })
                .sum();
            if at_least((s / n as f64).abs(), observed) {
                count += 1;
            }
        }
        count
    });
    let count: u64 = counts.iter().sum();
    Ok(PermutationOutcome {
        p_value: (1 + count) as f64 / (1 + n_permutations) as f64,
        observed,
        permutations: n_permutations,
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_lists_give_one() {
        let a: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let r = paired_permutation_test(&a, &a, 10_000, 7, 1).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(!r.exact);
        let r = paired_permutation_test(&a[..5], &a[..5], 100, 7, 1).unwrap();
        assert_eq!((r.p_value, r.exact), (1.0, true));
    }

    #[test]
    fn length_mismatch_is_fatal() {
        assert!(paired_permutation_test(&[1.0, 2.0], &[1.0], 10, 1, 1).is_err());
        assert!(paired_permutation_test(&[1.0], &[1.0], 10, 1, 1).is_err());
    }

    #[test]
    fn thread_count_does_not_change_p() {
        let a: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).cos()).collect();
        let b: Vec<f64> = (0..60).map(|i| (i as f64 * 0.91).sin() * 0.8).collect();
        let p1 = paired_permutation_test(&a, &b, 5000, 3, 1).unwrap();
        let p4 = paired_permutation_test(&a, &b, 5000, 3, 4).unwrap();
        assert_eq!(p1, p4);
    }

    #[test]
    fn large_shift_is_significant() {
        let a: Vec<f64> = (0..50).map(|i| 10.0 + 0.01 * (i as f64).sin()).collect();
        let b = vec![0.0; 50];
        let r = paired_permutation_test(&a, &b, 10_000, 1, 1).unwrap();
        assert!(r.p_value <= 0.001, "{}", r.p_value);
        assert_eq!(r.p_value, 1.0 / 10_001.0);
    }
}
