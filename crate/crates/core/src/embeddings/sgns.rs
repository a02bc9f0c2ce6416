use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;

use super::negative::NegativeSamplingTable;
use super::pairs::pairs_into;
use super::{EmbeddingSet, SgnsConfig, Space};
use crate::corpus::{CorpusStore, Vocabulary, EOS_INDEX};
use crate::util::{self, log_sigmoid, sigmoid};
use crate::{par, Error, Result};

/// Rows covered by the L2 penalty.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum L2Scope {
    /// Only the touched deviation row.
    Deviations,
    /// The touched deviation row and the touched generic row.
    All,
}

impl std::str::FromStr for L2Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deviations" => Ok(L2Scope::Deviations),
            "all" => Ok(L2Scope::All),
            _ => Err(Error::Config(format!("unknown l2 scope `{s}`"))),
        }
    }
}

/// Loss and gradients of one skip-gram event.
#[derive(Clone, Debug, PartialEq)]
pub struct SgnsGrads {
    pub loss: f64,
    /// Gradient of the data term with respect to the hidden layer.
    pub hidden: Vec<f64>,
    pub generic: Vec<f64>,
    /// `None` in the generic space.
    pub deviation: Option<Vec<f64>>,
    /// Gradients of context rows, accumulated per distinct row in
    /// first-seen order (positive first, then negatives).
    pub context: Vec<(u32, Vec<f64>)>,
}

/// Negative-sampling loss for one `(center, context)` event of `space`:
///
/// `-ln σ(c·h) - Σ ln σ(-n_i·h) + λ‖D_s[center]‖²` with `h = G[center] + D_s[center]`.
pub fn sgns_loss_and_grads(
    emb: &EmbeddingSet,
    space: Space<'_>,
    center: u32,
    context: u32,
    negatives: &[u32],
    l2_lambda: f64,
    scope: L2Scope,
) -> Result<SgnsGrads> {
    let ctx = emb
        .context
        .as_ref()
        .ok_or_else(|| Error::Invalid("embedding set has no context matrix".into()))?;
    let n = emb.vocab_size() as u32;
    if center >= n || context >= n || negatives.iter().any(|&w| w >= n) {
        return Err(Error::Invalid("word index out of range".into()));
    }
    let g = emb.generic_row(center);
    let dev = match space {
        Space::Generic => None,
        Space::User(u) => Some(emb.deviation_row(emb.user_index(u)?, center)),
    };
    let h: Vec<f64> = match dev {
        Some(d) => g.iter().zip(d).map(|(a, b)| a + b).collect(),
        None => g.to_vec(),
    };
    let row = |w: u32| ctx.row(w as usize).to_slice().expect("standard layout");

    let k = h.len();
    let mut grad_h = vec![0.0; k];
    let mut ctx_grads: Vec<(u32, Vec<f64>)> = Vec::new();
    let mut add_ctx = |w: u32, coef: f64, h: &[f64]| {
        let slot = match ctx_grads.iter().position(|(i, _)| *i == w) {
            Some(p) => p,
            None => {
                ctx_grads.push((w, vec![0.0; k]));
                ctx_grads.len() - 1
            }
        };
        for (g, x) in ctx_grads[slot].1.iter_mut().zip(h) {
            *g += coef * x;
        }
    };

    let pos = util::dot(row(context), &h);
    let mut loss = -log_sigmoid(pos);
    let coef = sigmoid(pos) - 1.0;
    for (gh, c) in grad_h.iter_mut().zip(row(context)) {
        *gh += coef * c;
    }
    add_ctx(context, coef, &h);
    for &neg in negatives {
        let s = util::dot(row(neg), &h);
        loss -= log_sigmoid(-s);
        let coef = sigmoid(s);
        for (gh, c) in grad_h.iter_mut().zip(row(neg)) {
            *gh += coef * c;
        }
        add_ctx(neg, coef, &h);
    }

    let mut generic = grad_h.clone();
    if scope == L2Scope::All {
        loss += l2_lambda * util::dot(g, g);
        for (x, gi) in generic.iter_mut().zip(g) {
            *x += 2.0 * l2_lambda * gi;
        }
    }
    let deviation = dev.map(|d| {
        loss += l2_lambda * util::dot(d, d);
        grad_h
            .iter()
            .zip(d)
            .map(|(gh, di)| gh + 2.0 * l2_lambda * di)
            .collect()
    });
    if !loss.is_finite() || grad_h.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite skip-gram loss for center {center}, context {context}"
        )));
    }
    Ok(SgnsGrads {
        loss,
        hidden: grad_h,
        generic,
        deviation,
        context: ctx_grads,
    })
}

/// Linearly decayed learning rate after `processed` of `total` pairs,
/// floored at `initial · 1e-4`.
pub fn learning_rate(initial: f64, processed: u64, total: u64) -> f64 {
    let frac = if total == 0 {
        0.0
    } else {
        processed as f64 / total as f64
    };
    initial * (1.0 - frac).max(1e-4)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean per-pair loss of each epoch.
    pub epoch_loss: Vec<f64>,
    pub total_pairs: u64,
}

/// Raw row access shared by the sequential and the lock-free parallel
/// trainer. Parallel workers race on rows the way classic asynchronous
/// embedding SGD does; single-threaded use is exact.
struct SharedParams {
    generic: *mut f64,
    context: *mut f64,
    deviations: Vec<*mut f64>,
    dim: usize,
}

unsafe impl Send for SharedParams {}
unsafe impl Sync for SharedParams {}

impl SharedParams {
    /// # Safety
    /// `base` must point to a live `|V|×dim` row-major buffer and `row < |V|`.
    #[allow(clippy::mut_from_ref)]
    unsafe fn row<'a>(&self, base: *mut f64, row: u32) -> &'a mut [f64] {
        std::slice::from_raw_parts_mut(base.add(row as usize * self.dim), self.dim)
    }
}

struct Scratch {
    hidden: Vec<f64>,
    grad: Vec<f64>,
    coefs: Vec<(u32, f64)>,
    pairs: Vec<(u32, u32)>,
    kept: Vec<u32>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Scratch {
            hidden: vec![0.0; dim],
            grad: vec![0.0; dim],
            coefs: Vec::new(),
            pairs: Vec::new(),
            kept: Vec::new(),
        }
    }
}

/// One SGD step; returns the event loss (before the update).
///
/// # Safety
/// Row indices must be in range for the buffers in `params`.
#[allow(clippy::too_many_arguments)]
unsafe fn sgd_step(
    params: &SharedParams,
    user: Option<usize>,
    center: u32,
    context: u32,
    negatives: &[u32],
    lr: f64,
    lambda: f64,
    scope: L2Scope,
    s: &mut Scratch,
) -> f64 {
    let dim = params.dim;
    {
        let g = params.row(params.generic, center);
        s.hidden.copy_from_slice(g);
        if let Some(u) = user {
            let d = params.row(params.deviations[u], center);
            for (h, x) in s.hidden.iter_mut().zip(d.iter()) {
                *h += x;
            }
        }
    }
    s.grad.iter_mut().for_each(|x| *x = 0.0);
    s.coefs.clear();
    let mut loss = 0.0;
    for (i, &w) in std::iter::once(&context).chain(negatives).enumerate() {
        let c = params.row(params.context, w);
        let score = util::dot(c, &s.hidden);
        let coef = if i == 0 {
            loss -= log_sigmoid(score);
            sigmoid(score) - 1.0
        } else {
            loss -= log_sigmoid(-score);
            sigmoid(score)
        };
        for (g, x) in s.grad.iter_mut().zip(c.iter()) {
            *g += coef * x;
        }
        s.coefs.push((w, coef));
    }
    for &(w, coef) in &s.coefs {
        let c = params.row(params.context, w);
        for (x, h) in c.iter_mut().zip(&s.hidden) {
            *x -= lr * coef * h;
        }
    }
    let g = params.row(params.generic, center);
    if scope == L2Scope::All {
        loss += lambda * util::dot(g, g);
        for (x, gr) in g.iter_mut().zip(&s.grad) {
            *x -= lr * (gr + 2.0 * lambda * *x);
        }
    } else {
        for (x, gr) in g.iter_mut().zip(&s.grad) {
            *x -= lr * gr;
        }
    }
    if let Some(u) = user {
        let d = params.row(params.deviations[u], center);
        loss += lambda * util::dot(d, d);
        for (x, gr) in d.iter_mut().zip(&s.grad) {
            *x -= lr * (gr + 2.0 * lambda * *x);
        }
    }
    debug_assert_eq!(dim, s.hidden.len());
    loss
}

struct Encoded {
    /// `posts[user][post]` with unknown and special tokens removed, except
    /// for an optional leading `</s>`.
    posts: Vec<Vec<Vec<u32>>>,
    keep_prob: Option<Vec<f64>>,
}

impl Encoded {
    fn new(corpus: &CorpusStore, vocab: &Vocabulary, config: &SgnsConfig) -> Self {
        let posts = corpus
            .users()
            .map(|u| {
                corpus
                    .posts(u)
                    .iter()
                    .map(|p| {
                        let start = config.post_boundary.then_some(EOS_INDEX);
                        start
                            .into_iter()
                            .chain(
                                p.tokens
                                    .iter()
                                    .map(|t| vocab.encode(t))
                                    .filter(|&i| !Vocabulary::is_special(i)),
                            )
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let keep_prob = (config.subsample_threshold > 0.0).then(|| {
            let total: u64 = vocab.regular_indices().map(|i| vocab.count(i)).sum();
            let t = config.subsample_threshold * total as f64;
            (0..vocab.len() as u32)
                .map(|i| {
                    let f = vocab.count(i) as f64;
                    if f <= 0.0 || Vocabulary::is_special(i) {
                        1.0
                    } else {
                        ((f / t).sqrt() + 1.0) * t / f
                    }
                })
                .collect()
        });
        Encoded { posts, keep_prob }
    }

    fn events(&self, seed: u64, epoch: usize) -> Vec<(u32, u32)> {
        let mut ev: Vec<(u32, u32)> = self
            .posts
            .iter()
            .enumerate()
            .flat_map(|(u, ps)| (0..ps.len()).map(move |p| (u as u32, p as u32)))
            .collect();
        ev.shuffle(&mut util::rng(seed, &[epoch as u64, 0xE7]));
        ev
    }

    /// Fills `s.pairs` for one post; deterministic in (seed, epoch, user, post).
    fn pairs(&self, config: &SgnsConfig, epoch: usize, user: u32, post: u32, s: &mut Scratch) {
        let tags = [epoch as u64, u64::from(user), u64::from(post)];
        let tokens = &self.posts[user as usize][post as usize];
        s.pairs.clear();
        let toks: &[u32] = match &self.keep_prob {
            Some(keep) => {
                let mut rng = util::rng(config.seed, &[tags[0], tags[1], tags[2], 2]);
                s.kept.clear();
                for &t in tokens {
                    if rng.gen::<f64>() < keep[t as usize] {
                        s.kept.push(t);
                    }
                }
                &s.kept
            }
            None => tokens,
        };
        let mut rng = util::rng(config.seed, &[tags[0], tags[1], tags[2], 0]);
        let mut pairs = std::mem::take(&mut s.pairs);
        pairs_into(toks, config.window, &mut rng, &mut pairs);
        s.pairs = pairs;
    }
}

/// Trains generic and per-user embeddings with SGD over all users' pairs.
///
/// Users are the corpus users (empty when `generic_only`). The learning rate
/// decays linearly over the total number of pairs of all epochs.
pub fn train_embeddings(
    corpus: &CorpusStore,
    vocab: &Vocabulary,
    config: &SgnsConfig,
) -> Result<(EmbeddingSet, TrainReport)> {
    config.validate()?;
    let table = NegativeSamplingTable::new(vocab, config.negative_power)?;
    let users = corpus.user_ids();
    let mut emb = EmbeddingSet::init(vocab, &users, config)?;
    let enc = Encoded::new(corpus, vocab, config);

    let mut epoch_events = Vec::with_capacity(config.epochs);
    let mut total: u64 = 0;
    {
        let mut s = Scratch::new(config.dim);
        for epoch in 0..config.epochs {
            let ev = enc.events(config.seed, epoch);
            for &(u, p) in &ev {
                enc.pairs(config, epoch, u, p, &mut s);
                total += s.pairs.len() as u64;
            }
            epoch_events.push(ev);
        }
    }

    let generic_only = config.generic_only;
    let params = SharedParams {
        generic: emb.generic.as_mut_ptr(),
        context: emb.context.as_mut().expect("fresh set has context").as_mut_ptr(),
        deviations: emb.deviations.iter_mut().map(|d| d.as_mut_ptr()).collect(),
        dim: config.dim,
    };
    let processed = AtomicU64::new(0);
    let mut report = TrainReport {
        epoch_loss: Vec::with_capacity(config.epochs),
        total_pairs: total,
    };

    for (epoch, events) in epoch_events.iter().enumerate() {
        let run_shard = |shard: &[(u32, u32)]| -> Result<(f64, u64)> {
            let mut s = Scratch::new(config.dim);
            let mut negs = Vec::with_capacity(config.negatives);
            let mut loss_sum = 0.0;
            let mut count = 0u64;
            for &(u, p) in shard {
                enc.pairs(config, epoch, u, p, &mut s);
                let mut neg_rng =
                    util::rng(config.seed, &[epoch as u64, u64::from(u), u64::from(p), 1]);
                let pairs = std::mem::take(&mut s.pairs);
                let done = processed.fetch_add(pairs.len() as u64, Ordering::Relaxed);
                for (i, &(center, ctx)) in pairs.iter().enumerate() {
                    let lr = learning_rate(config.initial_lr, done + i as u64, total);
                    negs.clear();
                    for _ in 0..config.negatives {
                        let w = table.sample(&mut neg_rng);
                        if w != ctx {
                            negs.push(w);
                        }
                    }
                    let user = (!generic_only).then_some(u as usize);
                    // SAFETY: indices come from the vocabulary the buffers were sized for.
                    let l = unsafe {
                        sgd_step(
                            &params,
                            user,
                            center,
                            ctx,
                            &negs,
                            lr,
                            config.l2_lambda,
                            config.l2_scope,
                            &mut s,
                        )
                    };
                    if !l.is_finite() {
                        return Err(Error::Numeric(format!(
                            "non-finite loss in epoch {epoch}, user {u}, post {p}, pair {i}"
                        )));
                    }
                    loss_sum += l;
                    count += 1;
                }
                s.pairs = pairs;
            }
            Ok((loss_sum, count))
        };

        let (loss, count) = if par::is_parallel(config.threads) {
            let chunk = events.len().div_ceil(config.threads).max(1);
            let shards: Vec<&[(u32, u32)]> = events.chunks(chunk).collect();
            par::map(config.threads, &shards, |sh| run_shard(sh))
                .into_iter()
                .try_fold((0.0, 0u64), |acc, r| r.map(|(l, c)| (acc.0 + l, acc.1 + c)))?
        } else {
            run_shard(events)?
        };
        let mean = if count == 0 { 0.0 } else { loss / count as f64 };
        log::info!("sgns epoch {}: mean loss {mean:.5} over {count} pairs", epoch + 1);
        report.epoch_loss.push(mean);
    }
    drop(params);
    if emb.generic.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite generic embedding after training".into()));
    }
    Ok((emb, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn zero_set(n: usize, k: usize) -> EmbeddingSet {
        let words = (0..n).map(|i| format!("w{i}")).collect();
        EmbeddingSet::from_parts(
            words,
            Array2::zeros((n, k)),
            vec!["s".into()],
            vec![Array2::zeros((n, k))],
            Some(Array2::zeros((n, k))),
        )
        .unwrap()
    }

    #[test]
    fn zero_parameters_give_six_ln2() {
        let e = zero_set(10, 4);
        let g = sgns_loss_and_grads(&e, Space::User("s"), 2, 3, &[4, 5, 6, 7, 8], 0.0, L2Scope::Deviations)
            .unwrap();
        assert!((g.loss - 6.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(g.generic.iter().all(|&x| x == 0.0));
        assert!(g.deviation.unwrap().iter().all(|&x| x == 0.0));
        assert!(g.context.iter().all(|(_, v)| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn generic_space_has_no_deviation_gradient() {
        let e = zero_set(6, 3);
        let g = sgns_loss_and_grads(&e, Space::Generic, 2, 3, &[4], 0.5, L2Scope::Deviations).unwrap();
        assert!(g.deviation.is_none());
    }

    #[test]
    fn lr_schedule() {
        assert_eq!(learning_rate(0.025, 0, 100), 0.025);
        assert_eq!(learning_rate(0.025, 50, 100), 0.025 * 0.5);
        assert_eq!(learning_rate(0.025, 100, 100), 0.025 * 1e-4);
        assert_eq!(learning_rate(0.025, 99_999, 100_000), 0.025 * 1e-4);
    }

    #[test]
    fn step_matches_gradient() {
        // One in-place SGD step equals params - lr * analytic gradient.
        let n = 8;
        let k = 5;
        let mut rng = util::rng(3, &[]);
        let mut rand_m = || Array2::from_shape_simple_fn((n, k), || rng.gen_range(-0.5..0.5));
        let words = (0..n).map(|i| format!("w{i}")).collect();
        let (g0, d0, c0) = (rand_m(), rand_m(), rand_m());
        let e = EmbeddingSet::from_parts(words, g0, vec!["s".into()], vec![d0], Some(c0)).unwrap();
        let negs = [4u32, 6, 4];
        let lr = 0.1;
        let lambda = 0.03;
        let grads = sgns_loss_and_grads(&e, Space::User("s"), 2, 3, &negs, lambda, L2Scope::Deviations).unwrap();

        let mut stepped = e.clone();
        let params = SharedParams {
            generic: stepped.generic.as_mut_ptr(),
            context: stepped.context.as_mut().unwrap().as_mut_ptr(),
            deviations: vec![stepped.deviations[0].as_mut_ptr()],
            dim: k,
        };
        let mut s = Scratch::new(k);
        let loss = unsafe { sgd_step(&params, Some(0), 2, 3, &negs, lr, lambda, L2Scope::Deviations, &mut s) };
        assert!((loss - grads.loss).abs() < 1e-12);
        for j in 0..k {
            let want = e.generic[[2, j]] - lr * grads.generic[j];
            assert!((stepped.generic[[2, j]] - want).abs() < 1e-12);
            let want = e.deviations[0][[2, j]] - lr * grads.deviation.as_ref().unwrap()[j];
            assert!((stepped.deviations[0][[2, j]] - want).abs() < 1e-12);
        }
        for (w, gr) in &grads.context {
            for (j, g) in gr.iter().enumerate() {
                let want = e.context.as_ref().unwrap()[[*w as usize, j]] - lr * g;
                assert!((stepped.context.as_ref().unwrap()[[*w as usize, j]] - want).abs() < 1e-12);
            }
        }
    }
}
