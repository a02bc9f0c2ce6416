use std::fmt::Write as _;

use super::model::{LanguageModel, Sequence};
use crate::analysis::Categorizer;
use crate::{par, Error, Result};

/// Token-level scores for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct PostScore {
    pub targets: Vec<u32>,
    /// `−ln p(target)` per step.
    pub nll: Vec<f64>,
    /// 1 + number of words with strictly higher probability.
    pub ranks: Vec<u32>,
}

impl PostScore {
    pub fn total_nll(&self) -> f64 {
        self.nll.iter().sum()
    }

    pub fn mean_nll(&self) -> f64 {
        self.total_nll() / self.nll.len() as f64
    }

    pub fn perplexity(&self) -> f64 {
        self.mean_nll().exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryScore {
    pub category: String,
    /// `None` when no target falls in the category.
    pub perplexity: Option<f64>,
    pub tokens: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub perplexity: f64,
    pub mrr: f64,
    pub tokens: usize,
    pub categories: Vec<CategoryScore>,
}

impl EvalReport {
    /// `metric,category,value,token_count`; empty categories leave `value` blank.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,category,value,token_count\n");
        writeln!(s, "perplexity,all,{:?},{}", self.perplexity, self.tokens).unwrap();
        writeln!(s, "mrr,all,{:?},{}", self.mrr, self.tokens).unwrap();
        for c in &self.categories {
            match c.perplexity {
                Some(p) => writeln!(s, "perplexity,{},{:?},{}", c.category, p, c.tokens),
                None => writeln!(s, "perplexity,{},,{}", c.category, c.tokens),
            }
            .unwrap();
        }
        s
    }
}

/// Scores every sequence without dropout. Sequences are batched in the
/// given order; batches run on up to `lm.config().threads` workers.
pub fn score_posts(lm: &LanguageModel, seqs: &[Sequence]) -> Result<Vec<PostScore>> {
    for s in seqs {
        lm.check_sequence(s)?;
        if s.is_empty() {
            return Err(Error::Invalid("cannot score an empty sequence".into()));
        }
    }
    let bs = lm.config.batch_size;
    let batches: Vec<&[Sequence]> = seqs.chunks(bs).collect();
    let per_batch = par::map(lm.config.threads, &batches, |batch| score_batch(lm, batch));
    let mut out = Vec::with_capacity(seqs.len());
    for b in per_batch {
        out.extend(b?);
    }
    Ok(out)
}

fn score_batch(lm: &LanguageModel, batch: &[Sequence]) -> Result<Vec<PostScore>> {
    let refs: Vec<&Sequence> = batch.iter().collect();
    let b = refs.len();
    let steps = refs.iter().map(|s| s.len()).max().unwrap_or(0);
    let masks = lm.make_masks(&refs, None);
    let mut state = lm.initial_state(b);
    let mut out: Vec<PostScore> = refs
        .iter()
        .map(|s| PostScore {
            targets: Vec::with_capacity(s.len()),
            nll: Vec::with_capacity(s.len()),
            ranks: Vec::with_capacity(s.len()),
        })
        .collect();
    let mut t0 = 0;
    while t0 < steps {
        let t1 = (t0 + lm.config.seq_len).min(steps);
        let fw = lm.forward_chunk(&refs, t0, t1, &mut state, &masks);
        for (r, target, nll, rank) in fw.scores() {
            if !nll.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite log-probability for target {target} at step {}",
                    t0 + r / b
                )));
            }
            let p = &mut out[r % b];
            p.targets.push(target);
            p.nll.push(nll);
            p.ranks.push(rank);
        }
        t0 = t1;
    }
    Ok(out)
}

fn nonempty(seqs: &[Sequence]) -> Result<()> {
    if seqs.is_empty() {
        return Err(Error::Invalid("evaluation split is empty".into()));
    }
    Ok(())
}

fn summarize(scores: &[PostScore]) -> (f64, f64, usize) {
    let mut nll = 0.0;
    let mut rr = 0.0;
    let mut n = 0usize;
    for s in scores {
        nll += s.total_nll();
        rr += s.ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>();
        n += s.nll.len();
    }
    ((nll / n as f64).exp(), rr / n as f64, n)
}

/// `exp` of the mean target NLL, `</s>` targets included.
pub fn perplexity(lm: &LanguageModel, seqs: &[Sequence]) -> Result<f64> {
    nonempty(seqs)?;
    Ok(summarize(&score_posts(lm, seqs)?).0)
}

pub fn mrr(lm: &LanguageModel, seqs: &[Sequence]) -> Result<f64> {
    nonempty(seqs)?;
    Ok(summarize(&score_posts(lm, seqs)?).1)
}

/// Perplexity restricted to targets in each category. A target in several
/// categories counts toward each of them.
pub fn per_category_perplexity(
    lm: &LanguageModel,
    seqs: &[Sequence],
    categories: &dyn Categorizer,
) -> Result<Vec<CategoryScore>> {
    nonempty(seqs)?;
    Ok(per_category_perplexity_from_scores(lm, &score_posts(lm, seqs)?, categories))
}

/// Per-category table from scores already computed by [`score_posts`].
pub fn per_category_perplexity_from_scores(
    lm: &LanguageModel,
    scores: &[PostScore],
    categories: &dyn Categorizer,
) -> Vec<CategoryScore> {
    let names = categories.category_names();
    let cats: Vec<Vec<usize>> = lm.words.iter().map(|w| categories.categorize(w)).collect();
    let mut sum = vec![0.0; names.len()];
    let mut cnt = vec![0usize; names.len()];
    for s in scores {
        for (&t, &nll) in s.targets.iter().zip(&s.nll) {
            for &c in &cats[t as usize] {
                sum[c] += nll;
                cnt[c] += 1;
            }
        }
    }
    names
        .into_iter()
        .enumerate()
        .map(|(i, category)| CategoryScore {
            category,
            perplexity: (cnt[i] > 0).then(|| (sum[i] / cnt[i] as f64).exp()),
            tokens: cnt[i],
        })
        .collect()
}

/// Perplexity, MRR and, given a categorizer, the per-category table.
pub fn evaluate(
    lm: &LanguageModel,
    seqs: &[Sequence],
    categories: Option<&dyn Categorizer>,
) -> Result<(EvalReport, Vec<PostScore>)> {
    nonempty(seqs)?;
    let scores = score_posts(lm, seqs)?;
    let (perplexity, mrr, tokens) = summarize(&scores);
    let categories = categories
        .map(|c| per_category_perplexity_from_scores(lm, &scores, c))
        .unwrap_or_default();
    Ok((
        EvalReport {
            perplexity,
            mrr,
            tokens,
            categories,
        },
        scores,
    ))
}
