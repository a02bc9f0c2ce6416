use std::collections::HashMap;

use super::store::CorpusStore;
use crate::util::sha256_hex;
use crate::{Error, Result};

pub const UNK: &str = "<unk>";
pub const EOS: &str = "</s>";
pub const UNK_INDEX: u32 = 0;
pub const EOS_INDEX: u32 = 1;
pub(crate) const NUM_SPECIALS: usize = 2;

/// Dense word ↔ index mapping with corpus frequencies.
///
/// Indices 0 and 1 are always `<unk>` and `</s>`. Ordinary words follow in
/// descending frequency, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
    min_count: u64,
}

impl Vocabulary {
    /// Builds a vocabulary from `(word, count)` pairs, keeping words with
    /// `count >= min_count`. Specials in the input are ignored.
    pub fn from_counts<I>(counts: I, min_count: u64) -> Self
    where
        I: IntoIterator<Item = (String, u64)>,
    {
        let mut kept: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count && w != UNK && w != EOS)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut words = vec![UNK.to_owned(), EOS.to_owned()];
        let mut freqs = vec![0, 0];
        for (w, c) in kept {
            words.push(w);
            freqs.push(c);
        }
        Self::from_parts(words, freqs, min_count)
    }

    /// Reassembles a vocabulary from an ordered word list, e.g. one read back
    /// from a model file. `words[0..2]` must be the specials.
    pub fn from_word_list(words: Vec<String>, counts: Option<Vec<u64>>, min_count: u64) -> Result<Self> {
        if words.len() < NUM_SPECIALS || words[0] != UNK || words[1] != EOS {
            return Err(Error::Invalid(format!(
                "word list must start with {UNK} and {EOS}"
            )));
        }
        let counts = counts.unwrap_or_else(|| vec![0; words.len()]);
        if counts.len() != words.len() {
            return Err(Error::Invalid("word/count length mismatch".into()));
        }
        let vocab = Self::from_parts(words, counts, min_count);
        if vocab.index.len() != vocab.words.len() {
            return Err(Error::Invalid("duplicate word in word list".into()));
        }
        Ok(vocab)
    }

    fn from_parts(words: Vec<String>, counts: Vec<u64>, min_count: u64) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Vocabulary {
            words,
            counts,
            index,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= NUM_SPECIALS
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, idx: u32) -> Option<&str> {
        self.words.get(idx as usize).map(String::as_str)
    }

    pub fn get(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    /// Index of `word`, or `UNK_INDEX` when it is out of vocabulary.
    pub fn encode(&self, word: &str) -> u32 {
        self.get(word).unwrap_or(UNK_INDEX)
    }

    pub fn count(&self, idx: u32) -> u64 {
        self.counts.get(idx as usize).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn is_special(idx: u32) -> bool {
        (idx as usize) < NUM_SPECIALS
    }

    /// Iterator over the indices of ordinary (non-special) words.
    pub fn regular_indices(&self) -> impl Iterator<Item = u32> {
        (NUM_SPECIALS as u32)..(self.words.len() as u32)
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.encode(t.as_ref())).collect()
    }

    /// Encodes a post for language modeling: tokens followed by `</s>`.
    pub fn encode_with_eos<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        let mut ids = self.encode_tokens(tokens);
        ids.push(EOS_INDEX);
        ids
    }

    /// SHA-256 (hex) of the newline-joined word list.
    pub fn hash(&self) -> String {
        sha256_hex(self.words.join("\n").as_bytes())
    }
}

/// Builds the vocabulary of all tokens that occur at least `min_count`
/// times across the whole corpus.
pub fn build_vocab(corpus: &CorpusStore, min_count: u64) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::Config("min_count must be >= 1".into()));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut num_posts = 0u64;
    for (_, post) in corpus.iter() {
        num_posts += 1;
        for tok in &post.tokens {
            *counts.entry(tok.clone()).or_insert(0) += 1;
        }
    }
    let mut vocab = Vocabulary::from_counts(counts.clone(), min_count);
    // Specials carry the number of unknown tokens and the number of posts.
    let unk: u64 = counts
        .iter()
        .filter(|(w, _)| vocab.get(w).is_none())
        .map(|(_, c)| *c)
        .sum();
    vocab.counts[UNK_INDEX as usize] = unk;
    vocab.counts[EOS_INDEX as usize] = num_posts;
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Post;

    fn corpus(texts: &[&str]) -> CorpusStore {
        CorpusStore::from_posts(texts.iter().map(|t| Post::new("u", *t)))
    }

    #[test]
    fn threshold_is_inclusive() {
        let c = corpus(&["cat cat cat cat cat dog dog dog dog"]);
        let v = build_vocab(&c, 5).unwrap();
        assert!(v.get("cat").is_some());
        assert!(v.get("dog").is_none());
        assert_eq!(v.encode("dog"), UNK_INDEX);
        assert_eq!(v.count(UNK_INDEX), 4);
    }

    #[test]
    fn min_count_one_keeps_everything() {
        let c = corpus(&["a b c", "c d"]);
        let v = build_vocab(&c, 1).unwrap();
        assert_eq!(v.len(), 2 + 4);
        assert_eq!(v.word(2), Some("c"));
    }

    #[test]
    fn empty_corpus_has_only_specials() {
        let v = build_vocab(&CorpusStore::default(), 5).unwrap();
        assert_eq!(v.words(), &[UNK.to_owned(), EOS.to_owned()]);
        assert!(v.is_empty());
    }

    #[test]
    fn specials_are_reserved() {
        let v = Vocabulary::from_counts(vec![("x".to_owned(), 3)], 1);
        assert_eq!(v.get(UNK), Some(UNK_INDEX));
        assert_eq!(v.get(EOS), Some(EOS_INDEX));
        assert_eq!(v.encode_with_eos(&["x", "y"]), vec![2, UNK_INDEX, EOS_INDEX]);
    }

    #[test]
    fn zero_min_count_rejected() {
        assert!(build_vocab(&CorpusStore::default(), 0).is_err());
    }
}
