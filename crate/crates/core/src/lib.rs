//! Personalized word embeddings.
//!
//! A generic embedding matrix and one deviation matrix per author are trained
//! jointly with a skip-gram objective whose hidden layer is the sum of the two
//! rows. The crate also measures how far each author's vectors drift from the
//! generic space, feeds the embeddings into a recurrent next-word model, and
//! attributes posts to authors by per-author model perplexity.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod attribution;
pub mod cli;
pub mod corpus;
pub mod embeddings;
mod error;
pub mod lm;
pub mod par;
pub mod synth;
pub mod util;

pub use error::{Error, Result};

pub use corpus::{tokenize, CorpusStore, Post, SplitSpec, Vocabulary, EOS, UNK};
pub use embeddings::{EmbeddingSet, SgnsConfig, Space};
pub use lm::{EvalReport, LanguageModel, LmConfig, LmMode};

