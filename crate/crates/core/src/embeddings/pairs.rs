use rand::Rng;

use crate::util;

/// Skip-gram `(center, context)` pairs for one encoded post.
///
/// For each center position an effective half-width is drawn uniformly from
/// `1..=window`; every other position inside that half-width yields a pair.
pub fn generate_training_pairs(tokens: &[u32], window: usize, seed: u64) -> Vec<(u32, u32)> {
    let mut rng = util::rng(seed, &[]);
    let mut out = Vec::new();
    pairs_into(tokens, window, &mut rng, &mut out);
    out
}

pub(crate) fn pairs_into<R: Rng + ?Sized>(
    tokens: &[u32],
    window: usize,
    rng: &mut R,
    out: &mut Vec<(u32, u32)>,
) {
    let n = tokens.len();
    for i in 0..n {
        let b = rng.gen_range(1..=window);
        let lo = i.saturating_sub(b);
        let hi = (i + b).min(n - 1);
        for j in lo..=hi {
            if j != i {
                out.push((tokens[i], tokens[j]));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_one() {
        let p = generate_training_pairs(&[10, 11, 12], 1, 99);
        assert_eq!(p, vec![(10, 11), (11, 10), (11, 12), (12, 11)]);
    }

    #[test]
    fn single_token_and_empty() {
        assert!(generate_training_pairs(&[5], 5, 1).is_empty());
        assert!(generate_training_pairs(&[], 5, 1).is_empty());
    }

    #[test]
    fn reproducible() {
        let toks = [2, 3, 4, 5, 6];
        let a = generate_training_pairs(&toks, 2, 42);
        let b = generate_training_pairs(&toks, 2, 42);
        assert_eq!(a, b);
        // each center contributes between 1..=2 neighbours per side
        assert!(a.len() >= 8 && a.len() <= 14, "{}", a.len());
    }
}
