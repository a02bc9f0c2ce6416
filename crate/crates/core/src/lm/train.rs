use rand::seq::SliceRandom;
use rand::RngCore;

use super::eval::perplexity;
use super::model::{LanguageModel, Params, Sequence};
use crate::{util, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training NLL per target token, with dropout.
    pub train_nll: f64,
    pub val_perplexity: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub improved: bool,
}

/// Sequences per sort window when forming batches of similar length.
const BUCKET_BATCHES: usize = 16;

fn epoch_batches(n: usize, lens: &[usize], batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = util::rng(seed, &[epoch as u64, 0x7a1]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for w in order.chunks_mut(batch * BUCKET_BATCHES) {
        w.sort_by_key(|&i| lens[i]);
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch).map(<[usize]>::to_vec).collect();
    batches.shuffle(&mut rng);
    batches
}

/// SGD with global-norm clipping and truncated backprop through time.
///
/// Validation perplexity is measured after every epoch; the best
/// parameters are kept, the learning rate is multiplied by `lr_decay`
/// whenever validation does not improve, and training stops after
/// `patience` such epochs in a row. Training hyperparameters are taken
/// from the model's own configuration.
pub fn train_lm(
    lm: &mut LanguageModel,
    train: &[Sequence],
    val: &[Sequence],
) -> Result<Vec<EpochLog>> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Invalid("training and validation splits must be non-empty".into()));
    }
    for s in train.iter().chain(val) {
        lm.check_sequence(s)?;
    }
    let cfg = lm.config.clone();
    let trainable = lm.trainable_names();
    let lens: Vec<usize> = train.iter().map(Sequence::len).collect();
    let mut lr = cfg.lr;
    let mut best = f64::INFINITY;
    let mut best_params: Params = lm.params.clone();
    let mut stalls = 0;
    let mut log = Vec::new();
    let mut grads = lm.params.zeros_like();

    for epoch in 0..cfg.max_epochs {
        let mut nll_sum = 0.0;
        let mut n_tok = 0usize;
        for (bi, batch) in epoch_batches(train.len(), &lens, cfg.batch_size, cfg.seed, epoch)
            .into_iter()
            .enumerate()
        {
            let refs: Vec<&Sequence> = batch.iter().map(|&i| &train[i]).collect();
            let mut mask_rng = util::rng(cfg.seed, &[epoch as u64, bi as u64, 0xd1]);
            let masks = lm.make_masks(&refs, Some(mask_rng.next_u64()));
            let steps = refs.iter().map(|s| s.len()).max().unwrap_or(0);
            let mut state = lm.initial_state(refs.len());
            let mut t0 = 0;
            while t0 < steps {
                let t1 = (t0 + cfg.seq_len).min(steps);
                let fw = lm.forward_chunk(&refs, t0, t1, &mut state, &masks);
                let scores = fw.scores();
                let chunk_nll: f64 = scores.iter().map(|s| s.2).sum();
                if !chunk_nll.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite training loss at epoch {epoch}, batch {bi}, steps {t0}..{t1}, lr {lr}"
                    )));
                }
                let n = scores.len();
                nll_sum += chunk_nll;
                n_tok += n;
                for (_, g) in grads.tensors_mut() {
                    g.fill(0.0);
                }
                lm.backward_chunk(&fw, &masks, n.max(1) as f64, &mut grads);
                sgd_step(&mut lm.params, &grads, &trainable, lr, cfg.clip)?;
                t0 = t1;
            }
        }
        let val_ppl = perplexity(lm, val)?;
        let improved = val_ppl < best;
        log.push(EpochLog {
            epoch,
            train_nll: nll_sum / n_tok.max(1) as f64,
            val_perplexity: val_ppl,
            lr,
            improved,
        });
        log::info!(
            "epoch {epoch}: train nll {:.4}, val ppl {:.4}, lr {lr}",
            nll_sum / n_tok.max(1) as f64,
            val_ppl
        );
        if improved {
            best = val_ppl;
            best_params = lm.params.clone();
            stalls = 0;
        } else {
            stalls += 1;
            lr *= cfg.lr_decay;
            if stalls >= cfg.patience {
                break;
            }
        }
    }
    lm.params = best_params;
    Ok(log)
}

fn sgd_step(params: &mut Params, grads: &Params, trainable: &[String], lr: f64, clip: f64) -> Result<()> {
    let gt = grads.tensors();
    let norm = gt
        .iter()
        .filter(|(n, ..)| trainable.contains(n))
        .flat_map(|(.., d)| d.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if !norm.is_finite() {
        return Err(Error::Numeric(format!("non-finite gradient norm {norm}")));
    }
    let scale = if norm > clip { lr * clip / norm } else { lr };
    for ((name, p), (.., g)) in params.tensors_mut().into_iter().zip(gt) {
        if trainable.contains(&name) {
            for (x, d) in p.iter_mut().zip(g) {
                *x -= scale * d;
            }
        }
    }
    Ok(())
}
