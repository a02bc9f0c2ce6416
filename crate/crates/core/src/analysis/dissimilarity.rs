use std::fmt::Write as _;

use crate::corpus::Vocabulary;
use crate::embeddings::EmbeddingSet;
use crate::util::cosine;
use crate::{Error, Result};

/// What the generic vector is compared against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DistanceMode {
    /// `G[w]` versus `G[w] + D_s[w]`.
    #[default]
    Personal,
    /// `G[w]` versus `D_s[w]` alone.
    Deviation,
}

impl std::str::FromStr for DistanceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "personal" => Ok(DistanceMode::Personal),
            "deviation" => Ok(DistanceMode::Deviation),
            _ => Err(Error::Config(format!("unknown distance mode `{s}`"))),
        }
    }
}

/// Cosine distance `1 - cos` between a word's generic vector and its vector
/// for `user`. Errors on zero-norm vectors.
pub fn word_dissimilarity(
    emb: &EmbeddingSet,
    user: &str,
    word: u32,
    mode: DistanceMode,
) -> Result<f64> {
    let u = emb.user_index(user)?;
    if word as usize >= emb.vocab_size() {
        return Err(Error::Invalid(format!("word index {word} out of range")));
    }
    let g = emb.generic_row(word);
    let d = emb.deviation_row(u, word);
    let other: Vec<f64> = match mode {
        DistanceMode::Personal => g.iter().zip(d).map(|(a, b)| a + b).collect(),
        DistanceMode::Deviation => d.to_vec(),
    };
    cosine(g, &other)
        .map(|c| if other == g { 0.0 } else { (1.0 - c).clamp(0.0, 2.0) })
        .ok_or_else(|| Error::Numeric(format!("zero-norm vector for `{}`", emb.words()[word as usize])))
}

/// The `top_n` most dissimilar words of one user, in ascending distance so
/// the most dissimilar word is last.
#[derive(Clone, Debug, PartialEq)]
pub struct DissimilarityRanking {
    pub user: String,
    /// `(word index, distance)`, non-decreasing in distance.
    pub entries: Vec<(u32, f64)>,
}

impl DissimilarityRanking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based position of `word`, if ranked.
    pub fn position(&self, word: u32) -> Option<usize> {
        self.entries.iter().position(|(w, _)| *w == word).map(|p| p + 1)
    }

    /// CSV with columns `user_id,position_pct,word,distance`.
    pub fn to_csv(&self, words: &[String]) -> String {
        let mut out = String::from("user_id,position_pct,word,distance\n");
        let n = self.entries.len();
        for (i, (w, d)) in self.entries.iter().enumerate() {
            let pct = 100.0 * (i + 1) as f64 / n as f64;
            let _ = writeln!(out, "{},{pct:?},{},{d:?}", self.user, words[*w as usize]);
        }
        out
    }
}

/// Ranks words with corpus frequency `>= min_freq` by dissimilarity and
/// keeps the `top_n` largest. Ties go to the lower word index both when
/// selecting and when ordering. Zero-norm words are skipped with a warning.
pub fn rank_dissimilar_words(
    emb: &EmbeddingSet,
    vocab: &Vocabulary,
    user: &str,
    top_n: usize,
    min_freq: u64,
    mode: DistanceMode,
) -> Result<DissimilarityRanking> {
    if top_n < 1 {
        return Err(Error::Config("top_n must be >= 1".into()));
    }
    if vocab.words() != emb.words() {
        return Err(Error::Invalid(
            "vocabulary does not match the embedding word list".into(),
        ));
    }
    emb.user_index(user)?;
    let mut scored = Vec::new();
    let mut skipped = 0usize;
    for w in vocab.regular_indices().filter(|&w| vocab.count(w) >= min_freq) {
        match word_dissimilarity(emb, user, w, mode) {
            Ok(d) => scored.push((w, d)),
            Err(Error::Numeric(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped > 0 {
        log::warn!("{user}: skipped {skipped} zero-norm words");
    }
    if scored.len() < top_n {
        log::warn!(
            "{user}: only {} eligible words for a top-{top_n} ranking",
            scored.len()
        );
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top_n);
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(DissimilarityRanking {
        user: user.to_owned(),
        entries: scored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn set(generic: Array2<f64>, dev: Array2<f64>) -> (EmbeddingSet, Vocabulary) {
        let n = generic.nrows();
        let words: Vec<String> = (2..n).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::from_word_list(
            ["<unk>", "</s>"].iter().map(|s| s.to_string()).chain(words).collect(),
            Some(vec![10; n]),
            1,
        )
        .unwrap();
        let emb = EmbeddingSet::from_parts(
            vocab.words().to_vec(),
            generic,
            vec!["s".into()],
            vec![dev],
            None,
        )
        .unwrap();
        (emb, vocab)
    }

    #[test]
    fn distances_zero_orthogonal_antipodal() {
        let (e, _) = set(
            array![[1., 0.], [1., 0.], [1., 0.], [1., 0.], [1., 0.]],
            array![[0., 0.], [0., 0.], [0., 0.], [-1., 1.], [-2., 0.]],
        );
        let d = |w| word_dissimilarity(&e, "s", w, DistanceMode::Personal).unwrap();
        assert_eq!(d(2), 0.0);
        assert!((d(3) - 1.0).abs() < 1e-15);
        assert!((d(4) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn deviation_mode_compares_against_deviation_alone() {
        let (e, _) = set(array![[1., 0.], [1., 0.], [1., 0.]], array![[0., 0.], [0., 0.], [0., 3.]]);
        assert!((word_dissimilarity(&e, "s", 2, DistanceMode::Deviation).unwrap() - 1.0).abs() < 1e-15);
        let (e, _) = set(array![[1., 0.], [1., 0.], [1., 0.]], Array2::zeros((3, 2)));
        assert!(word_dissimilarity(&e, "s", 2, DistanceMode::Deviation).is_err());
    }

    #[test]
    fn zero_deviation_ranking_uses_index_order() {
        let g = Array2::from_shape_fn((8, 3), |(i, j)| (i + j + 1) as f64);
        let (e, v) = set(g, Array2::zeros((8, 3)));
        let r = rank_dissimilar_words(&e, &v, "s", 3, 1, DistanceMode::Personal).unwrap();
        assert_eq!(r.entries.iter().map(|x| x.0).collect::<Vec<_>>(), vec![2, 3, 4]);
        assert!(r.entries.iter().all(|x| x.1 == 0.0));
    }

    #[test]
    fn planted_deviation_is_last() {
        let g = Array2::from_shape_fn((8, 3), |(i, j)| (i + j + 1) as f64);
        let mut dev = Array2::zeros((8, 3));
        dev.row_mut(5).assign(&array![-9.0, 4.0, 1.0]);
        dev.row_mut(6).assign(&array![0.1, 0.0, 0.0]);
        let (e, v) = set(g, dev);
        let r = rank_dissimilar_words(&e, &v, "s", 4, 1, DistanceMode::Personal).unwrap();
        assert_eq!(r.entries.last().unwrap().0, 5);
        assert!(r.entries.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(r.position(5), Some(4));
    }

    #[test]
    fn min_freq_filters_and_short_rankings_are_returned() {
        let g = Array2::from_elem((5, 2), 1.0);
        let (e, mut v) = set(g, Array2::zeros((5, 2)));
        v = Vocabulary::from_word_list(v.words().to_vec(), Some(vec![0, 0, 10, 2, 10]), 1).unwrap();
        let r = rank_dissimilar_words(&e, &v, "s", 10, 5, DistanceMode::Personal).unwrap();
        assert_eq!(r.entries.iter().map(|x| x.0).collect::<Vec<_>>(), vec![2, 4]);
    }
}
