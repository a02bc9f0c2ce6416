//! Post ingestion, tokenization, vocabulary construction and deterministic
//! train/validation/test splitting.

mod store;
mod tokenize;
mod vocab;

pub use store::{
    ingest_files, ingest_posts, read_corpus_dir, sample_posts, split_corpus, write_corpus_dir,
    CorpusStore, IngestStats, Post, SplitSpec,
};
pub use tokenize::{tokenize, TOKENIZER_VERSION};
pub use vocab::{build_vocab, Vocabulary, EOS, EOS_INDEX, UNK, UNK_INDEX};
