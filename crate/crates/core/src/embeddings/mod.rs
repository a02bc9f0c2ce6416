//! Joint generic + per-user skip-gram embeddings.
//!
//! Every user `s` owns a deviation matrix `D_s`; the hidden layer for a
//! center word `w` is `G[w] + D_s[w]`, so one gradient step moves both the
//! shared generic row and the user's deviation row. The output (context)
//! matrix is shared by all users.

mod io;
mod negative;
mod pairs;
mod sgns;

use ndarray::Array2;
use rand::Rng;

pub use io::{export_word2vec, load_embeddings, save_embeddings, write_embeddings};
pub use negative::NegativeSamplingTable;
pub use pairs::generate_training_pairs;
pub use sgns::{
    learning_rate, sgns_loss_and_grads, train_embeddings, L2Scope, SgnsGrads, TrainReport,
};

use crate::corpus::Vocabulary;
use crate::util::{self, cosine};
use crate::{Error, Result};

/// Which embedding space a query refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space<'a> {
    Generic,
    User(&'a str),
}

impl<'a> Space<'a> {
    /// `GENERIC` (any case) selects the generic space; anything else is a user id.
    pub fn parse(s: &'a str) -> Self {
        if s.eq_ignore_ascii_case("generic") {
            Space::Generic
        } else {
            Space::User(s)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub initial_lr: f64,
    pub negatives: usize,
    pub epochs: usize,
    pub l2_lambda: f64,
    pub l2_scope: L2Scope,
    pub min_count: u64,
    /// Frequent-word subsampling threshold; 0 disables it.
    pub subsample_threshold: f64,
    pub negative_power: f64,
    pub seed: u64,
    pub generic_only: bool,
    /// Start every post with `</s>` so the boundary symbol gets a
    /// (personal) vector of its own.
    pub post_boundary: bool,
    pub threads: usize,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 100,
            window: 5,
            initial_lr: 0.025,
            negatives: 5,
            epochs: 5,
            l2_lambda: 1e-4,
            l2_scope: L2Scope::Deviations,
            min_count: 5,
            subsample_threshold: 0.0,
            negative_power: 0.75,
            seed: 1,
            generic_only: false,
            post_boundary: true,
            threads: 1,
        }
    }
}

impl SgnsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.dim < 1 {
            return bad("dim must be >= 1");
        }
        if self.window < 1 {
            return bad("window must be >= 1");
        }
        if self.negatives < 1 {
            return bad("negatives must be >= 1");
        }
        if !(self.initial_lr > 0.0) {
            return bad("initial_lr must be > 0");
        }
        if !(self.l2_lambda >= 0.0) {
            return bad("l2_lambda must be >= 0");
        }
        if self.min_count < 1 {
            return bad("min_count must be >= 1");
        }
        if !(self.subsample_threshold >= 0.0) {
            return bad("subsample_threshold must be >= 0");
        }
        Ok(())
    }
}

/// Generic matrix, per-user deviation matrices and the shared context
/// matrix, all `|V| × k`.
///
/// The context matrix only exists on freshly trained sets; it is not part
/// of the persisted format.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub(crate) words: Vec<String>,
    pub(crate) generic: Array2<f64>,
    pub(crate) users: Vec<String>,
    pub(crate) deviations: Vec<Array2<f64>>,
    pub(crate) context: Option<Array2<f64>>,
}

impl EmbeddingSet {
    /// Generic rows uniform in `[-0.5/k, 0.5/k]`; deviations and context zero.
    pub fn init(vocab: &Vocabulary, users: &[String], config: &SgnsConfig) -> Result<Self> {
        config.validate()?;
        let k = config.dim;
        let n = vocab.len();
        let mut rng = util::rng(config.seed, &[0x1417]);
        let bound = 0.5 / k as f64;
        let generic = Array2::from_shape_simple_fn((n, k), || rng.gen_range(-bound..=bound));
        let users: Vec<String> = if config.generic_only {
            Vec::new()
        } else {
            users.to_vec()
        };
        let deviations = users.iter().map(|_| Array2::zeros((n, k))).collect();
        Ok(EmbeddingSet {
            words: vocab.words().to_vec(),
            generic,
            users,
            deviations,
            context: Some(Array2::zeros((n, k))),
        })
    }

    /// Assembles a set from explicit matrices (shapes and finiteness checked).
    pub fn from_parts(
        words: Vec<String>,
        generic: Array2<f64>,
        users: Vec<String>,
        deviations: Vec<Array2<f64>>,
        context: Option<Array2<f64>>,
    ) -> Result<Self> {
        let shape = generic.dim();
        if shape.0 != words.len() {
            return Err(Error::Invalid(format!(
                "generic matrix has {} rows for {} words",
                shape.0,
                words.len()
            )));
        }
        if users.len() != deviations.len() {
            return Err(Error::Invalid("one deviation matrix per user required".into()));
        }
        let mut all = vec![&generic];
        all.extend(deviations.iter());
        all.extend(context.iter());
        for m in all {
            if m.dim() != shape {
                return Err(Error::Invalid("all matrices must share shape |V|×k".into()));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric("non-finite embedding entry".into()));
            }
        }
        Ok(EmbeddingSet {
            words,
            generic,
            users,
            deviations,
            context,
        })
    }

    pub fn dim(&self) -> usize {
        self.generic.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.generic.nrows()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_index(&self, word: &str) -> Option<u32> {
        self.words.iter().position(|w| w == word).map(|i| i as u32)
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn user_index(&self, user: &str) -> Result<usize> {
        self.users
            .iter()
            .position(|u| u == user)
            .ok_or_else(|| Error::UnknownUser(user.to_owned()))
    }

    pub fn is_generic_only(&self) -> bool {
        self.users.is_empty()
    }

    pub fn generic(&self) -> &Array2<f64> {
        &self.generic
    }

    pub fn deviation(&self, user: &str) -> Result<&Array2<f64>> {
        Ok(&self.deviations[self.user_index(user)?])
    }

    pub fn deviation_mut(&mut self, user: &str) -> Result<&mut Array2<f64>> {
        let i = self.user_index(user)?;
        Ok(&mut self.deviations[i])
    }

    pub fn generic_mut(&mut self) -> &mut Array2<f64> {
        &mut self.generic
    }

    pub fn context(&self) -> Option<&Array2<f64>> {
        self.context.as_ref()
    }

    pub fn context_mut(&mut self) -> Option<&mut Array2<f64>> {
        self.context.as_mut()
    }

    /// Drops the training-only context matrix.
    pub fn without_context(mut self) -> Self {
        self.context = None;
        self
    }

    pub fn generic_row(&self, word: u32) -> &[f64] {
        self.generic
            .row(word as usize)
            .to_slice()
            .expect("standard layout")
    }

    pub fn deviation_row(&self, user_idx: usize, word: u32) -> &[f64] {
        self.deviations[user_idx]
            .row(word as usize)
            .to_slice()
            .expect("standard layout")
    }

    fn check_word(&self, word: u32) -> Result<()> {
        if (word as usize) < self.vocab_size() {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "word index {word} out of range for |V|={}",
                self.vocab_size()
            )))
        }
    }

    /// `G[w]` for the generic space, `G[w] + D_s[w]` for user `s`.
    pub fn personal_vector(&self, space: Space<'_>, word: u32) -> Result<Vec<f64>> {
        self.check_word(word)?;
        let g = self.generic_row(word);
        match space {
            Space::Generic => Ok(g.to_vec()),
            Space::User(u) => {
                let d = self.deviation_row(self.user_index(u)?, word);
                Ok(g.iter().zip(d).map(|(a, b)| a + b).collect())
            }
        }
    }

    /// Full `|V| × k` matrix of vectors in `space`.
    pub fn space_matrix(&self, space: Space<'_>) -> Result<Array2<f64>> {
        match space {
            Space::Generic => Ok(self.generic.clone()),
            Space::User(u) => Ok(&self.generic + &self.deviations[self.user_index(u)?]),
        }
    }

    /// Words ranked by cosine similarity to `word` within `space`, excluding
    /// the query itself, special tokens and zero-norm vectors. Ties go to the
    /// lower word index.
    pub fn nearest_neighbors(
        &self,
        space: Space<'_>,
        word: u32,
        top_n: usize,
    ) -> Result<Vec<(u32, f64)>> {
        if top_n < 1 {
            return Err(Error::Config("top_n must be >= 1".into()));
        }
        let query = self.personal_vector(space, word)?;
        if util::norm(&query) == 0.0 {
            return Err(Error::Numeric(format!(
                "zero-norm query vector for `{}`",
                self.words[word as usize]
            )));
        }
        let mut scored = Vec::with_capacity(self.vocab_size());
        for w in 0..self.vocab_size() as u32 {
            if w == word || Vocabulary::is_special(w) {
                continue;
            }
            let v = self.personal_vector(space, w)?;
            if let Some(c) = cosine(&query, &v) {
                scored.push((w, c));
            }
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(top_n);
        Ok(scored)
    }
}

/// Convenience wrapper around [`EmbeddingSet::init`].
pub fn init_embeddings(vocab: &Vocabulary, users: &[String], config: &SgnsConfig) -> Result<EmbeddingSet> {
    EmbeddingSet::init(vocab, users, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::from_counts(words.iter().map(|w| (w.to_string(), 5)), 1)
    }

    fn tiny_set(generic: Array2<f64>, dev: Array2<f64>) -> EmbeddingSet {
        let words = ["<unk>", "</s>", "x", "y", "z"][..generic.nrows()]
            .iter()
            .map(|s| s.to_string())
            .collect();
        EmbeddingSet::from_parts(words, generic, vec!["s".into()], vec![dev], None).unwrap()
    }

    #[test]
    fn init_is_generic_and_bounded() {
        let v = vocab(&["a", "b", "c"]);
        let cfg = SgnsConfig { dim: 4, ..Default::default() };
        let users = vec!["u1".to_string(), "u2".to_string()];
        let e = EmbeddingSet::init(&v, &users, &cfg).unwrap();
        assert!(e.generic.iter().all(|x| x.abs() <= 0.125));
        for w in 0..v.len() as u32 {
            assert_eq!(
                e.personal_vector(Space::User("u2"), w).unwrap(),
                e.personal_vector(Space::Generic, w).unwrap()
            );
        }
        let again = EmbeddingSet::init(&v, &users, &cfg).unwrap();
        assert_eq!(e.generic, again.generic);
        assert!(e.context().unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn personal_is_sum() {
        let e = tiny_set(
            array![[0., 0.], [0., 0.], [1., 0.]],
            array![[0., 0.], [0., 0.], [0., 1.]],
        );
        assert_eq!(e.personal_vector(Space::User("s"), 2).unwrap(), vec![1.0, 1.0]);
        assert_eq!(e.personal_vector(Space::Generic, 2).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(
            e.personal_vector(Space::User("nobody"), 2),
            Err(Error::UnknownUser(u)) if u == "nobody"
        ));
    }

    #[test]
    fn neighbors_single_candidate() {
        let e = tiny_set(
            array![[0., 0.], [0., 0.], [1., 0.], [1., 1.]],
            Array2::zeros((4, 2)),
        );
        let nn = e.nearest_neighbors(Space::Generic, 2, 5).unwrap();
        assert_eq!(nn.len(), 1);
        assert_eq!(nn[0].0, 3);
        assert!((nn[0].1 - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn duplicate_vector_ranks_first() {
        let e = tiny_set(
            array![[0., 0.], [0., 0.], [0.3, 0.4], [1., 0.], [0.3, 0.4]],
            Array2::zeros((5, 2)),
        );
        let nn = e.nearest_neighbors(Space::User("s"), 2, 2).unwrap();
        assert_eq!(nn[0].0, 4);
        assert!((nn[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_query_is_error() {
        let e = tiny_set(array![[0., 0.], [0., 0.], [0., 0.], [1., 0.]], Array2::zeros((4, 2)));
        assert!(e.nearest_neighbors(Space::Generic, 2, 1).is_err());
    }

    #[test]
    fn space_parse() {
        assert_eq!(Space::parse("GENERIC"), Space::Generic);
        assert_eq!(Space::parse("userA"), Space::User("userA"));
    }
}
