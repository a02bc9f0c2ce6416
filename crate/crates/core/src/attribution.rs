//! Authorship attribution: one language model per author, each held-out
//! post assigned to the author whose model gives it the lowest perplexity.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStore, Post, Vocabulary};
use crate::embeddings::EmbeddingSet;
use crate::lm::{self, build_lm, LanguageModel, LmConfig, Sequence};
use crate::{par, util, Error, Result};

/// How each author's posts are divided. Held-out posts are drawn first so
/// the evaluation set does not depend on `train_n` or `val_n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionPlan {
    pub train_n: usize,
    pub val_n: usize,
    pub heldout_n: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuthorPosts {
    /// `(index in the author's post list, post)`
    pub train: Vec<(usize, Post)>,
    pub val: Vec<(usize, Post)>,
    pub heldout: Vec<(usize, Post)>,
}

impl AttributionPlan {
    pub fn required(&self) -> usize {
        self.train_n + self.val_n + self.heldout_n
    }

    pub fn split(&self, corpus: &CorpusStore, user: &str) -> Result<AuthorPosts> {
        if !corpus.contains_user(user) {
            return Err(Error::UnknownUser(user.to_owned()));
        }
        let posts = corpus.posts(user);
        if posts.len() < self.required() {
            return Err(Error::InsufficientPosts {
                user: user.to_owned(),
                available: posts.len(),
                required: self.required(),
            });
        }
        let mut idx: Vec<usize> = (0..posts.len()).collect();
        idx.shuffle(&mut util::rng(self.seed, &[util::str_tag(user), 0xa77]));
        let take = |r: std::ops::Range<usize>| -> Vec<(usize, Post)> {
            let mut v: Vec<usize> = idx[r].to_vec();
            v.sort_unstable();
            v.into_iter().map(|i| (i, posts[i].clone())).collect()
        };
        let h = self.heldout_n;
        Ok(AuthorPosts {
            heldout: take(0..h),
            train: take(h..h + self.train_n),
            val: take(h + self.train_n..h + self.train_n + self.val_n),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub user_id: String,
    pub file: String,
    pub train_posts: usize,
    pub val_posts: usize,
    pub seed: u64,
    pub epochs: usize,
    pub best_val_perplexity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub vocab_hash: String,
    pub mode: String,
    pub plan: AttributionPlan,
    pub authors: Vec<ManifestEntry>,
}

/// Per-author models over one shared vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct AuthorModelSet {
    pub vocab: Vocabulary,
    pub models: BTreeMap<String, LanguageModel>,
    pub manifest: ModelManifest,
}

impl AuthorModelSet {
    pub fn authors(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }
}

fn author_seed(seed: u64, user: &str) -> u64 {
    util::derive_seed(seed, &[util::str_tag(user), 0xa0])
}

fn encode(vocab: &Vocabulary, posts: &[(usize, Post)], user: Option<usize>) -> Vec<Sequence> {
    posts
        .iter()
        .map(|(_, p)| Sequence::from_tokens(vocab, user, &p.tokens))
        .collect()
}

/// Trains one model per user on that user's posts only. The shared
/// vocabulary is the embedding word list. Models train in parallel on up
/// to `threads` workers; each is deterministic given its seed.
pub fn train_author_models(
    corpus: &CorpusStore,
    users: &[String],
    lm_config: &LmConfig,
    embset: &EmbeddingSet,
    plan: &AttributionPlan,
    threads: usize,
) -> Result<AuthorModelSet> {
    if users.is_empty() {
        return Err(Error::Invalid("no authors given".into()));
    }
    let vocab = Vocabulary::from_word_list(embset.words().to_vec(), None, 1)?;
    let splits = users
        .iter()
        .map(|u| plan.split(corpus, u))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(&String, &AuthorPosts)> = users.iter().zip(&splits).collect();
    let trained = par::map(threads, &jobs, |(user, split)| -> Result<(LanguageModel, ManifestEntry)> {
        let seed = author_seed(plan.seed, user);
        let cfg = LmConfig {
            seed,
            threads: 1,
            ..lm_config.clone()
        };
        let me = std::slice::from_ref(*user);
        let mut model = build_lm(&cfg, embset, &vocab, me)?;
        let uid = cfg.mode.is_user_conditioned().then_some(0);
        let train = encode(&vocab, &split.train, uid);
        let val = encode(&vocab, &split.val, uid);
        let log = lm::train_lm(&mut model, &train, &val)?;
        let best = log
            .iter()
            .map(|e| e.val_perplexity)
            .fold(f64::INFINITY, f64::min);
        model.metadata.insert("author".into(), (*user).clone());
        let entry = ManifestEntry {
            user_id: (*user).clone(),
            file: format!("{user}.lm"),
            train_posts: train.len(),
            val_posts: val.len(),
            seed,
            epochs: log.len(),
            best_val_perplexity: best,
        };
        log::info!("author {user}: {} epochs, best val ppl {best:.3}", log.len());
        Ok((model, entry))
    });
    let mut models = BTreeMap::new();
    let mut authors = Vec::new();
    for r in trained {
        let (m, e) = r?;
        models.insert(e.user_id.clone(), m);
        authors.push(e);
    }
    authors.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    Ok(AuthorModelSet {
        manifest: ModelManifest {
            vocab_hash: vocab.hash(),
            mode: lm_config.mode.to_string(),
            plan: plan.clone(),
            authors,
        },
        vocab,
        models,
    })
}

/// Held-out posts of every user as `(post_id, true author, post)`, where
/// `post_id` is `user:index`.
pub fn heldout_posts(corpus: &CorpusStore, users: &[String], plan: &AttributionPlan) -> Result<Vec<(String, String, Post)>> {
    let mut out = Vec::new();
    for u in users {
        for (i, p) in plan.split(corpus, u)?.heldout {
            out.push((format!("{u}:{i}"), u.clone(), p));
        }
    }
    Ok(out)
}

fn author_sequence(model: &LanguageModel, vocab: &Vocabulary, tokens: &[String]) -> Sequence {
    Sequence::from_tokens(vocab, model.mode().is_user_conditioned().then_some(0), tokens)
}

/// Authors ranked by ascending perplexity on `tokens`, ties by author id.
pub fn attribute_post(tokens: &[String], models: &AuthorModelSet) -> Result<Vec<(String, f64)>> {
    if tokens.is_empty() {
        return Err(Error::Invalid("cannot attribute an empty post".into()));
    }
    let mut ranking = Vec::with_capacity(models.models.len());
    for (author, m) in &models.models {
        let seq = author_sequence(m, &models.vocab, tokens);
        ranking.push((author.clone(), lm::perplexity(m, std::slice::from_ref(&seq))?));
    }
    sort_ranking(&mut ranking);
    Ok(ranking)
}

fn sort_ranking(r: &mut [(String, f64)]) {
    r.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
}

#[derive(Clone, Debug, PartialEq)]
pub struct PostAttribution {
    pub post_id: String,
    pub true_author: String,
    /// Ascending perplexity.
    pub ranking: Vec<(String, f64)>,
}

impl PostAttribution {
    pub fn rank_of(&self, author: &str) -> usize {
        1 + self
            .ranking
            .iter()
            .position(|(a, _)| a == author)
            .expect("ranking covers all authors")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionResult {
    pub posts: Vec<PostAttribution>,
    pub accuracy: f64,
    pub mrr: f64,
}

impl AttributionResult {
    fn from_posts(posts: Vec<PostAttribution>) -> Self {
        let n = posts.len().max(1) as f64;
        let ranks: Vec<usize> = posts.iter().map(|p| p.rank_of(&p.true_author)).collect();
        AttributionResult {
            accuracy: ranks.iter().filter(|&&r| r == 1).count() as f64 / n,
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            posts,
        }
    }

    /// The same rankings scored against randomly permuted true labels.
    pub fn with_shuffled_labels(&self, seed: u64) -> AttributionResult {
        let mut labels: Vec<String> = self.posts.iter().map(|p| p.true_author.clone()).collect();
        labels.shuffle(&mut util::rng(seed, &[0x5f1]));
        let posts = self
            .posts
            .iter()
            .zip(labels)
            .map(|(p, l)| PostAttribution {
                true_author: l,
                ..p.clone()
            })
            .collect();
        AttributionResult::from_posts(posts)
    }

    /// `post_id,true_author,predicted_author,rank_of_true,top1,top1_ppl,...`
    /// up to three candidates.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "post_id,true_author,predicted_author,rank_of_true,top1,top1_ppl,top2,top2_ppl,top3,top3_ppl\n",
        );
        for p in &self.posts {
            write!(
                s,
                "{},{},{},{}",
                p.post_id,
                p.true_author,
                p.ranking[0].0,
                p.rank_of(&p.true_author)
            )
            .unwrap();
            for i in 0..3 {
                match p.ranking.get(i) {
                    Some((a, ppl)) => write!(s, ",{a},{ppl:?}").unwrap(),
                    None => s.push_str(",,"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Scores every held-out post under every author model. Posts are scored
/// in batches per model; batches run on up to `threads` workers.
pub fn evaluate_attribution(
    heldout: &[(String, String, Post)],
    models: &AuthorModelSet,
    threads: usize,
) -> Result<AttributionResult> {
    if let Some((id, a, _)) = heldout.iter().find(|(_, a, _)| !models.models.contains_key(a)) {
        return Err(Error::Invalid(format!(
            "post {id}: true author `{a}` has no model"
        )));
    }
    if let Some((id, ..)) = heldout.iter().find(|(.., p)| p.tokens.is_empty()) {
        return Err(Error::Invalid(format!("post {id} is empty")));
    }
    let mut per_author: Vec<(String, Vec<f64>)> = Vec::new();
    for (author, m) in &models.models {
        let mut m = m.clone();
        m.config.threads = threads;
        let seqs: Vec<Sequence> = heldout
            .iter()
            .map(|(_, _, p)| author_sequence(&m, &models.vocab, &p.tokens))
            .collect();
        let scores = lm::score_posts(&m, &seqs)?;
        per_author.push((author.clone(), scores.iter().map(|s| s.perplexity()).collect()));
    }
    let posts = heldout
        .iter()
        .enumerate()
        .map(|(i, (id, truth, _))| {
            let mut ranking: Vec<(String, f64)> = per_author
                .iter()
                .map(|(a, ppl)| (a.clone(), ppl[i]))
                .collect();
            sort_ranking(&mut ranking);
            PostAttribution {
                post_id: id.clone(),
                true_author: truth.clone(),
                ranking,
            }
        })
        .collect();
    Ok(AttributionResult::from_posts(posts))
}

fn check_author_id(user: &str) -> Result<()> {
    if user.is_empty() || user.starts_with('.') || user.contains(['/', '\\']) {
        return Err(Error::Invalid(format!(
            "author id `{user}` cannot be used as a file name"
        )));
    }
    Ok(())
}

/// Writes `<user>.lm` for every author plus `manifest.json`.
pub fn save_author_models(set: &AuthorModelSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (user, m) in &set.models {
        check_author_id(user)?;
        lm::save_model(m, &dir.join(format!("{user}.lm")))?;
    }
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&set.manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_author_models(dir: &Path) -> Result<AuthorModelSet> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|e| Error::corrupt(&path, e.to_string()))?;
    let mut models = BTreeMap::new();
    for a in &manifest.authors {
        check_author_id(&a.user_id)?;
        let m = lm::load_model(&dir.join(&a.file))?;
        models.insert(a.user_id.clone(), m);
    }
    let first = models
        .values()
        .next()
        .ok_or_else(|| Error::corrupt(&path, "manifest lists no authors"))?;
    let vocab = Vocabulary::from_word_list(first.words().to_vec(), None, 1)?;
    if vocab.hash() != manifest.vocab_hash || models.values().any(|m| m.words() != vocab.words()) {
        return Err(Error::corrupt(&path, "author models do not share the manifest vocabulary"));
    }
    Ok(AuthorModelSet {
        vocab,
        models,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(ranks: &[usize], n: usize) -> AttributionResult {
        let posts = ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let ranking = (0..n).map(|j| (format!("a{j}"), j as f64)).collect();
                PostAttribution {
                    post_id: i.to_string(),
                    true_author: format!("a{}", r - 1),
                    ranking,
                }
            })
            .collect();
        AttributionResult::from_posts(posts)
    }

    #[test]
    fn accuracy_and_mrr() {
        let r = result(&[1, 1, 1], 3);
        assert_eq!((r.accuracy, r.mrr), (1.0, 1.0));
        let r = result(&[2, 2], 5);
        assert_eq!((r.accuracy, r.mrr), (0.0, 0.5));
        let r = result(&[1, 2, 4, 3], 5);
        assert!(r.accuracy <= r.mrr);
    }

    #[test]
    fn ties_break_by_author_id() {
        let mut r = vec![("b".to_string(), 2.0), ("c".into(), 1.0), ("a".into(), 2.0)];
        sort_ranking(&mut r);
        let names: Vec<&str> = r.iter().map(|x| x.0.as_str()).collect();
        assert_eq!(names, ["c", "a", "b"]);
    }

    #[test]
    fn plan_split_is_disjoint_and_checked() {
        let posts = (0..10).map(|i| Post::from_tokens("u", vec![format!("w{i}")]));
        let c = CorpusStore::from_posts(posts);
        let plan = AttributionPlan {
            train_n: 5,
            val_n: 2,
            heldout_n: 3,
            seed: 4,
        };
        let s = plan.split(&c, "u").unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.heldout).map(|x| x.0).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let big = AttributionPlan { train_n: 6, ..plan.clone() };
        assert!(matches!(big.split(&c, "u"), Err(Error::InsufficientPosts { .. })));
        // Held-out posts do not depend on the training size.
        let small = AttributionPlan { train_n: 1, ..plan };
        assert_eq!(small.split(&c, "u").unwrap().heldout, s.heldout);
    }

    #[test]
    fn csv_pads_short_rankings() {
        let r = result(&[1, 2], 2);
        let csv = r.to_csv();
        assert!(csv.lines().nth(1).unwrap().ends_with(",,"));
    }
}
