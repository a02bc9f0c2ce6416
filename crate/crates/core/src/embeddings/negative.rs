use rand::Rng;

use crate::corpus::Vocabulary;
use crate::{Error, Result};

/// Cumulative distribution over non-special vocabulary indices with
/// `P(w) ∝ freq(w)^power`.
#[derive(Clone, Debug)]
pub struct NegativeSamplingTable {
    indices: Vec<u32>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl NegativeSamplingTable {
    pub fn new(vocab: &Vocabulary, power: f64) -> Result<Self> {
        let indices: Vec<u32> = vocab.regular_indices().collect();
        let weights: Vec<f64> = indices
            .iter()
            .map(|&i| (vocab.count(i) as f64).powf(power))
            .collect();
        Self::from_weights(indices, weights)
    }

    pub fn from_weights(indices: Vec<u32>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if indices.is_empty() || !(total > 0.0) || !total.is_finite() {
            return Err(Error::Invalid(
                "negative sampling needs at least one word with positive weight".into(),
            ));
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cumulative.last_mut().expect("non-empty") = 1.0;
        Ok(NegativeSamplingTable {
            indices,
            probs,
            cumulative,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `(word index, probability)` pairs.
    pub fn probabilities(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn probability(&self, word: u32) -> f64 {
        self.indices
            .iter()
            .position(|&i| i == word)
            .map_or(0.0, |p| self.probs[p])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.gen();
        let pos = self.cumulative.partition_point(|&c| c <= u);
        self.indices[pos.min(self.indices.len() - 1)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(counts: &[(&str, u64)]) -> Vocabulary {
        Vocabulary::from_counts(counts.iter().map(|(w, c)| (w.to_string(), *c)), 1)
    }

    #[test]
    fn power_three_quarters() {
        let v = vocab(&[("a", 1), ("b", 16)]);
        let t = NegativeSamplingTable::new(&v, 0.75).unwrap();
        let pb = t.probability(v.get("b").unwrap());
        assert!((pb - 8.0 / 9.0).abs() < 1e-12);
        let total: f64 = t.probabilities().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn power_zero_is_uniform() {
        let v = vocab(&[("a", 1), ("b", 16), ("c", 3), ("d", 100)]);
        let t = NegativeSamplingTable::new(&v, 0.0).unwrap();
        for (_, p) in t.probabilities() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn single_word() {
        let v = vocab(&[("only", 7)]);
        let t = NegativeSamplingTable::new(&v, 0.75).unwrap();
        assert_eq!(t.probability(2), 1.0);
        let mut rng = crate::util::rng(1, &[]);
        assert!((0..100).all(|_| t.sample(&mut rng) == 2));
    }

    #[test]
    fn specials_never_sampled() {
        let v = vocab(&[("a", 1), ("b", 2)]);
        let t = NegativeSamplingTable::new(&v, 0.75).unwrap();
        assert_eq!(t.len(), 2);
        let mut rng = crate::util::rng(2, &[]);
        assert!((0..1000).all(|_| t.sample(&mut rng) >= 2));
    }

    #[test]
    fn empty_vocab_is_fatal() {
        let v = vocab(&[]);
        assert!(NegativeSamplingTable::new(&v, 0.75).is_err());
    }
}
