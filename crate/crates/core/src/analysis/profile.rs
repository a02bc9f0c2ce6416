use std::fmt::Write as _;

use super::dissimilarity::DissimilarityRanking;
use super::lexicon::CategoryLexicon;
use super::tags::{PosBucket, TagAssignment};
use crate::util::quantile_sorted;
use crate::{Error, Result};

/// A word → categories scheme. Every word maps to at least one category;
/// words the scheme does not cover map to its pseudo-category.
pub trait Categorizer {
    fn category_names(&self) -> Vec<String>;
    /// Indices into [`Categorizer::category_names`].
    fn categorize(&self, word: &str) -> Vec<usize>;
}

impl Categorizer for CategoryLexicon {
    fn category_names(&self) -> Vec<String> {
        let mut names = self.categories().to_vec();
        names.push("NotInLexicon".to_owned());
        names
    }

    fn categorize(&self, word: &str) -> Vec<usize> {
        let cats = self.lookup(word);
        if cats.is_empty() {
            return vec![self.categories().len()];
        }
        cats.iter()
            .map(|c| {
                self.categories()
                    .iter()
                    .position(|x| x == c)
                    .expect("lookup returns known categories")
            })
            .collect()
    }
}

impl Categorizer for TagAssignment {
    fn category_names(&self) -> Vec<String> {
        PosBucket::ALL
            .iter()
            .map(|b| b.name().to_owned())
            .chain(std::iter::once("NotTagged".to_owned()))
            .collect()
    }

    fn categorize(&self, word: &str) -> Vec<usize> {
        match self.get(word) {
            Some(b) => vec![PosBucket::ALL.iter().position(|x| *x == b).expect("bucket")],
            None => vec![PosBucket::ALL.len()],
        }
    }
}

/// Sliding-window category proportions along dissimilarity rankings.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryProfile {
    pub window_frac: f64,
    pub categories: Vec<String>,
    /// Window end as a percentage of the way through the ranking.
    pub positions: Vec<f64>,
    /// `(user, [category][position])`.
    pub per_user: Vec<(String, Vec<Vec<f64>>)>,
    /// `[category][position]` aggregates across users.
    pub mean: Vec<Vec<f64>>,
    pub q25: Vec<Vec<f64>>,
    pub q75: Vec<Vec<f64>>,
}

impl CategoryProfile {
    /// CSV with columns `position_pct,category,mean,q25,q75`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("position_pct,category,mean,q25,q75\n");
        for (p, pct) in self.positions.iter().enumerate() {
            for (c, name) in self.categories.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{pct:?},{name},{:?},{:?},{:?}",
                    self.mean[c][p], self.q25[c][p], self.q75[c][p]
                );
            }
        }
        out
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }
}

fn window_len(n: usize, frac: f64) -> usize {
    ((n as f64 * frac).round() as usize).clamp(1, n)
}

/// Computes, for every window end along each user's ranking, the share of
/// the window's words that carry each category, then aggregates mean and
/// interquartile range across users.
///
/// The x-grid comes from the longest ranking; shorter rankings are sampled
/// at the nearest window end with the same percentage.
pub fn category_profile<C: Categorizer + ?Sized>(
    rankings: &[DissimilarityRanking],
    words: &[String],
    categories: &C,
    window_frac: f64,
) -> Result<CategoryProfile> {
    if !(window_frac > 0.0 && window_frac <= 1.0) {
        return Err(Error::Config(format!("window_frac {window_frac} outside (0,1]")));
    }
    if rankings.is_empty() || rankings.iter().any(|r| r.is_empty()) {
        return Err(Error::Invalid("category profile needs non-empty rankings".into()));
    }
    let names = categories.category_names();
    let ncat = names.len();

    let longest = rankings.iter().map(|r| r.len()).max().expect("non-empty");
    let w_long = window_len(longest, window_frac);
    let positions: Vec<f64> = (w_long..=longest)
        .map(|end| 100.0 * end as f64 / longest as f64)
        .collect();

    let mut per_user = Vec::with_capacity(rankings.len());
    for r in rankings {
        let n = r.len();
        let w = window_len(n, window_frac);
        // prefix[c][i] = number of the first i ranked words carrying c
        let mut prefix = vec![vec![0usize; n + 1]; ncat];
        for (i, (word, _)) in r.entries.iter().enumerate() {
            let word = words.get(*word as usize).ok_or_else(|| {
                Error::Invalid(format!("ranked word index {word} outside word list"))
            })?;
            let cats = categories.categorize(word);
            for (c, row) in prefix.iter_mut().enumerate() {
                row[i + 1] = row[i] + usize::from(cats.contains(&c));
            }
        }
        let series: Vec<Vec<f64>> = prefix
            .iter()
            .map(|row| {
                positions
                    .iter()
                    .map(|pct| {
                        let end = ((pct * n as f64 / 100.0).round() as usize).clamp(w, n);
                        (row[end] - row[end - w]) as f64 / w as f64
                    })
                    .collect()
            })
            .collect();
        per_user.push((r.user.clone(), series));
    }

    let npos = positions.len();
    let mut mean = vec![vec![0.0; npos]; ncat];
    let mut q25 = vec![vec![0.0; npos]; ncat];
    let mut q75 = vec![vec![0.0; npos]; ncat];
    let mut column = Vec::with_capacity(per_user.len());
    for c in 0..ncat {
        for p in 0..npos {
            column.clear();
            column.extend(per_user.iter().map(|(_, s)| s[c][p]));
            mean[c][p] = column.iter().sum::<f64>() / column.len() as f64;
            column.sort_by(f64::total_cmp);
            q25[c][p] = quantile_sorted(&column, 0.25);
            q75[c][p] = quantile_sorted(&column, 0.75);
        }
    }
    Ok(CategoryProfile {
        window_frac,
        categories: names,
        positions,
        per_user,
        mean,
        q25,
        q75,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::assign_pos_tags;

    fn ranking(user: &str, n: usize) -> DissimilarityRanking {
        DissimilarityRanking {
            user: user.to_owned(),
            entries: (0..n).map(|i| (i as u32, i as f64)).collect(),
        }
    }

    #[test]
    fn pure_noun_window() {
        let words: Vec<String> = (0..10).map(|i| format!("n{i}")).collect();
        let tags = assign_pos_tags(words.iter().map(|w| (w.clone(), "NN")), 0.95).unwrap();
        let p = category_profile(&[ranking("u", 10)], &words, &tags, 0.2).unwrap();
        let nn = p.category_index("NN").unwrap();
        for (c, series) in p.mean.iter().enumerate() {
            let want = if c == nn { 1.0 } else { 0.0 };
            assert!(series.iter().all(|&x| x == want));
        }
    }

    #[test]
    fn single_user_has_zero_iqr() {
        let words: Vec<String> = (0..20).map(|i| if i % 3 == 0 { "the".into() } else { format!("x{i}") }).collect();
        let lex = CategoryLexicon::parse("the Funct\n").unwrap();
        let p = category_profile(&[ranking("u", 20)], &words, &lex, 0.25).unwrap();
        for c in 0..p.categories.len() {
            assert_eq!(p.q25[c], p.q75[c]);
            assert_eq!(p.q25[c], p.mean[c]);
        }
    }

    #[test]
    fn empty_ranking_is_error() {
        let lex = CategoryLexicon::default();
        assert!(category_profile(&[ranking("u", 0)], &[], &lex, 0.2).is_err());
        assert!(category_profile(&[], &[], &lex, 0.2).is_err());
        assert!(category_profile(&[ranking("u", 3)], &["a".into(), "b".into(), "c".into()], &lex, 0.0).is_err());
    }

    #[test]
    fn csv_header() {
        let words: Vec<String> = (0..4).map(|i| format!("w{i}")).collect();
        let lex = CategoryLexicon::parse("w1 A\n").unwrap();
        let p = category_profile(&[ranking("u", 4)], &words, &lex, 0.5).unwrap();
        let csv = p.to_csv();
        assert!(csv.starts_with("position_pct,category,mean,q25,q75\n50.0,A,0.5,"));
        assert_eq!(csv.lines().count(), 1 + 3 * 2);
    }
}
