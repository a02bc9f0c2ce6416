//! Recurrent next-word language model whose input layer is built from the
//! embeddings, in one of four modes.

mod eval;
mod io;
mod model;
mod train;

pub use eval::{
    evaluate, mrr, per_category_perplexity, per_category_perplexity_from_scores, perplexity, score_posts, CategoryScore, EvalReport,
    PostScore,
};
pub use io::{load_model, parse_model, save_model, write_model};
pub use model::{build_lm, forward, Gradients, LanguageModel, Sequence};
pub use train::{train_lm, EpochLog};

use crate::{Error, Result};

/// How the recurrent input for a word is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LmMode {
    /// Generic vector, width k.
    Generic,
    /// Generic vector from a 2k-dimensional generic-only set.
    GenericDouble,
    /// Generic vector ⧺ one trainable vector per user.
    SingleUserVector,
    /// Generic vector ⧺ personal (generic + deviation) vector.
    PersonalizedConcat,
}

impl LmMode {
    pub const ALL: [LmMode; 4] = [
        LmMode::Generic,
        LmMode::GenericDouble,
        LmMode::SingleUserVector,
        LmMode::PersonalizedConcat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LmMode::Generic => "generic",
            LmMode::GenericDouble => "generic-double",
            LmMode::SingleUserVector => "single-user-vector",
            LmMode::PersonalizedConcat => "personalized",
        }
    }

    pub fn is_user_conditioned(self) -> bool {
        matches!(self, LmMode::SingleUserVector | LmMode::PersonalizedConcat)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            LmMode::Generic => 0,
            LmMode::GenericDouble => 1,
            LmMode::SingleUserVector => 2,
            LmMode::PersonalizedConcat => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        LmMode::ALL.get(c as usize).copied()
    }
}

impl std::str::FromStr for LmMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LmMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown LM mode `{s}`")))
    }
}

impl std::fmt::Display for LmMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmConfig {
    pub mode: LmMode,
    pub layers: usize,
    pub hidden_size: usize,
    /// Probability of dropping a whole word type from a batch.
    pub emb_dropout: f64,
    pub out_dropout: f64,
    pub lr: f64,
    /// Factor applied to the learning rate when validation perplexity stalls.
    pub lr_decay: f64,
    pub clip: f64,
    /// Truncated-backprop window.
    pub seq_len: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub finetune_embeddings: bool,
    /// Worker threads for evaluation.
    pub threads: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            mode: LmMode::PersonalizedConcat,
            layers: 1,
            hidden_size: 256,
            emb_dropout: 0.1,
            out_dropout: 0.3,
            lr: 20.0,
            lr_decay: 0.5,
            clip: 0.25,
            seq_len: 35,
            batch_size: 20,
            max_epochs: 10,
            patience: 2,
            seed: 1,
            finetune_embeddings: false,
            threads: 1,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.emb_dropout) {
            return bad(format!("emb_dropout {} outside [0,1)", self.emb_dropout));
        }
        if !(0.0..1.0).contains(&self.out_dropout) {
            return bad(format!("out_dropout {} outside [0,1)", self.out_dropout));
        }
        if !(self.clip > 0.0) {
            return bad("clip must be > 0".into());
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0,1]".into());
        }
        if self.layers < 1 || self.hidden_size < 1 || self.seq_len < 1 || self.batch_size < 1 {
            return bad("layers, hidden_size, seq_len and batch_size must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
