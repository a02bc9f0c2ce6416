//! Per-user deviation analysis: how far each author's vectors move away
//! from the generic space, which word categories the most-moved words
//! fall into, and paired significance testing.

mod dissimilarity;
mod lexicon;
mod permutation;
mod profile;
mod tags;

pub use dissimilarity::{
    rank_dissimilar_words, word_dissimilarity, DissimilarityRanking, DistanceMode,
};
pub use lexicon::CategoryLexicon;
pub use permutation::{paired_permutation_test, PermutationOutcome};
pub use profile::{category_profile, CategoryProfile, Categorizer};
pub use tags::{assign_pos_tags, coarse_bucket, read_tag_observations, PosBucket, TagAssignment};
