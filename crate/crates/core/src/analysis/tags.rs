use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::{Error, Result};

/// Coarse part-of-speech buckets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PosBucket {
    DT,
    IN,
    JJ,
    NN,
    PR,
    RB,
    VB,
    PUNCT,
    OTHER,
}

impl PosBucket {
    pub const ALL: [PosBucket; 9] = [
        PosBucket::DT,
        PosBucket::IN,
        PosBucket::JJ,
        PosBucket::NN,
        PosBucket::PR,
        PosBucket::RB,
        PosBucket::VB,
        PosBucket::PUNCT,
        PosBucket::OTHER,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PosBucket::DT => "DT",
            PosBucket::IN => "IN",
            PosBucket::JJ => "JJ",
            PosBucket::NN => "NN",
            PosBucket::PR => "PR",
            PosBucket::RB => "RB",
            PosBucket::VB => "VB",
            PosBucket::PUNCT => "PUNCT",
            PosBucket::OTHER => "OTHER",
        }
    }
}

impl fmt::Display for PosBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Maps a fine Penn-style tag to its bucket by prefix.
pub fn coarse_bucket(tag: &str) -> PosBucket {
    if tag.starts_with("NN") {
        PosBucket::NN
    } else if tag.starts_with("VB") {
        PosBucket::VB
    } else if tag.starts_with("PRP") {
        PosBucket::PR
    } else if tag.starts_with("RB") {
        PosBucket::RB
    } else if tag.starts_with("JJ") {
        PosBucket::JJ
    } else if tag == "DT" {
        PosBucket::DT
    } else if tag == "IN" {
        PosBucket::IN
    } else if is_punct_tag(tag) {
        PosBucket::PUNCT
    } else {
        PosBucket::OTHER
    }
}

fn is_punct_tag(tag: &str) -> bool {
    matches!(tag, "-LRB-" | "-RRB-" | "-LSB-" | "-RSB-" | "-LCB-" | "-RCB-" | "HYPH" | "NFP")
        || (!tag.is_empty() && !tag.chars().any(char::is_alphanumeric))
}

/// Words whose dominant tag is consistent enough to be trusted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TagAssignment {
    map: HashMap<String, PosBucket>,
    threshold: f64,
}

impl TagAssignment {
    pub fn get(&self, word: &str) -> Option<PosBucket> {
        self.map.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// Assigns a word the bucket of its most frequent fine tag when that tag
/// covers at least `threshold` of the word's tagged occurrences (inclusive).
pub fn assign_pos_tags<I, W, T>(observations: I, threshold: f64) -> Result<TagAssignment>
where
    I: IntoIterator<Item = (W, T)>,
    W: Into<String>,
    T: AsRef<str>,
{
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("tag threshold {threshold} outside (0,1]")));
    }
    let mut counts: HashMap<String, BTreeMap<String, u64>> = HashMap::new();
    for (w, t) in observations {
        *counts
            .entry(w.into())
            .or_default()
            .entry(t.as_ref().to_owned())
            .or_insert(0) += 1;
    }
    let mut map = HashMap::new();
    for (word, tags) in counts {
        let total: u64 = tags.values().sum();
        // BTreeMap iteration makes the lexicographically first tag win ties.
        let (tag, &top) = tags
            .iter()
            .fold(None, |best: Option<(&String, &u64)>, (t, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((t, c)),
            })
            .expect("at least one tag");
        if top as f64 >= threshold * total as f64 {
            map.insert(word, coarse_bucket(tag));
        }
    }
    Ok(TagAssignment { map, threshold })
}

/// Reads `<word>\t<tag>` lines.
pub fn read_tag_observations(path: &Path) -> Result<Vec<(String, String)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (w, t) = line.split_once('\t').ok_or_else(|| Error::Parse {
            what: "tag observation",
            line: i + 1,
            reason: "expected `<word>\\t<tag>`".into(),
        })?;
        out.push((w.to_owned(), t.trim().to_owned()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(word: &str, tags: &[(&str, usize)]) -> Vec<(String, String)> {
        tags.iter()
            .flat_map(|(t, n)| std::iter::repeat_n((word.to_owned(), t.to_string()), *n))
            .collect()
    }

    #[test]
    fn consistent_word_is_tagged() {
        let a = assign_pos_tags(obs("dog", &[("NN", 20)]), 0.95).unwrap();
        assert_eq!(a.get("dog"), Some(PosBucket::NN));
    }

    #[test]
    fn threshold_boundary() {
        let a = assign_pos_tags(obs("run", &[("NN", 94), ("VB", 6)]), 0.95).unwrap();
        assert_eq!(a.get("run"), None);
        let a = assign_pos_tags(obs("walk", &[("NN", 95), ("VB", 5)]), 0.95).unwrap();
        assert_eq!(a.get("walk"), Some(PosBucket::NN));
    }

    #[test]
    fn buckets() {
        assert_eq!(coarse_bucket("NNS"), PosBucket::NN);
        assert_eq!(coarse_bucket("VBZ"), PosBucket::VB);
        assert_eq!(coarse_bucket("PRP$"), PosBucket::PR);
        assert_eq!(coarse_bucket("RBR"), PosBucket::RB);
        assert_eq!(coarse_bucket("JJS"), PosBucket::JJ);
        assert_eq!(coarse_bucket("DT"), PosBucket::DT);
        assert_eq!(coarse_bucket("IN"), PosBucket::IN);
        assert_eq!(coarse_bucket(","), PosBucket::PUNCT);
        assert_eq!(coarse_bucket("``"), PosBucket::PUNCT);
        assert_eq!(coarse_bucket("-LRB-"), PosBucket::PUNCT);
        assert_eq!(coarse_bucket("CD"), PosBucket::OTHER);
        assert_eq!(coarse_bucket("PDT"), PosBucket::OTHER);
    }

    #[test]
    fn bad_threshold() {
        assert!(assign_pos_tags(Vec::<(String, String)>::new(), 0.0).is_err());
        assert!(assign_pos_tags(Vec::<(String, String)>::new(), 1.5).is_err());
    }
}
