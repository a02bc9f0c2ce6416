use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// Word and word-stem → category lookup.
///
/// Lines look like `<word-or-stem> <category> [<category> ...]`; a trailing
/// `*` marks a stem that matches every word starting with it. Lines starting
/// with `#` are comments.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CategoryLexicon {
    categories: Vec<String>,
    exact: HashMap<String, BTreeSet<usize>>,
    stems: Vec<(String, BTreeSet<usize>)>,
}

impl CategoryLexicon {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = CategoryLexicon::default();
        let mut cat_index: HashMap<String, usize> = HashMap::new();
        let mut stems: HashMap<String, BTreeSet<usize>> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let entry = parts.next().expect("non-empty line");
            let cats: Vec<&str> = parts.collect();
            let err = |reason: &str| Error::Parse {
                what: "lexicon entry",
                line: i + 1,
                reason: reason.to_owned(),
            };
            if cats.is_empty() {
                return Err(err("entry has no category"));
            }
            let (key, is_stem) = match entry.strip_suffix('*') {
                Some(prefix) => (prefix, true),
                None => (entry, false),
            };
            if key.is_empty() || key.contains('*') {
                return Err(err("`*` may only end a non-empty stem"));
            }
            let ids: BTreeSet<usize> = cats
                .iter()
                .map(|c| {
                    let next = lex.categories.len();
                    *cat_index.entry((*c).to_owned()).or_insert_with(|| {
                        lex.categories.push((*c).to_owned());
                        next
                    })
                })
                .collect();
            let key = key.to_lowercase();
            let target = if is_stem {
                stems.entry(key).or_default()
            } else {
                lex.exact.entry(key).or_default()
            };
            target.extend(ids);
        }
        let mut stems: Vec<_> = stems.into_iter().collect();
        stems.sort();
        lex.stems = stems;
        Ok(lex)
    }

    /// Category names in order of first appearance.
    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    /// Union of exact-match categories and those of every matching stem,
    /// in order of first appearance in the file.
    pub fn lookup(&self, word: &str) -> Vec<&str> {
        let mut ids: BTreeSet<usize> = BTreeSet::new();
        if let Some(set) = self.exact.get(word) {
            ids.extend(set);
        }
        for (prefix, set) in &self.stems {
            if word.starts_with(prefix.as_str()) {
                ids.extend(set);
            }
        }
        ids.into_iter().map(|i| self.categories[i].as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stem_wildcard() {
        let lex = CategoryLexicon::parse("happ* Affect\n").unwrap();
        assert_eq!(lex.lookup("happiness"), vec!["Affect"]);
        assert_eq!(lex.lookup("happ"), vec!["Affect"]);
        assert!(lex.lookup("unhappy").is_empty());
    }

    #[test]
    fn unknown_word() {
        let lex = CategoryLexicon::parse("# comment\nthe Funct\n").unwrap();
        assert!(lex.lookup("zebra").is_empty());
        assert_eq!(lex.lookup("the"), vec!["Funct"]);
    }

    #[test]
    fn exact_and_stem_union() {
        let lex = CategoryLexicon::parse("health Bio\nheal* Bio Percept\n").unwrap();
        assert_eq!(lex.lookup("health"), vec!["Bio", "Percept"]);
        assert_eq!(lex.categories(), &["Bio".to_owned(), "Percept".to_owned()]);
    }

    #[test]
    fn malformed_line_reports_number() {
        match CategoryLexicon::parse("ok Funct\n\nlonely\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(CategoryLexicon::parse("* Funct\n").is_err());
        assert!(CategoryLexicon::parse("a*b Funct\n").is_err());
    }

    #[test]
    fn bundled_demo_lexicon_parses() {
        let text = include_str!("../../data/demo_lexicon.txt");
        let lex = CategoryLexicon::parse(text).unwrap();
        assert!(lex.categories().len() >= 9);
        assert!(lex.lookup("happy").contains(&"Affect"));
    }
}
