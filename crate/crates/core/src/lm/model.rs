use std::collections::HashMap;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use super::{LmConfig, LmMode};
use crate::corpus::{Vocabulary, EOS_INDEX};
use crate::embeddings::EmbeddingSet;
use crate::util::{self, sigmoid};
use crate::{Error, Result};

/// One post for the language model: its tokens followed by `</s>`.
///
/// The model reads `</s>` as the start symbol, so a sequence of `n` tokens
/// yields `n` predictions, the last of which is the closing `</s>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sequence {
    /// Index into the model's user list; `None` for unconditioned modes.
    pub user: Option<usize>,
    pub tokens: Vec<u32>,
    /// Input at the first step; `</s>` unless built by [`forward`].
    start: u32,
}

impl Sequence {
    pub fn new(user: Option<usize>, tokens: Vec<u32>) -> Self {
        Sequence {
            user,
            tokens,
            start: EOS_INDEX,
        }
    }

    pub fn from_tokens<S: AsRef<str>>(vocab: &Vocabulary, user: Option<usize>, tokens: &[S]) -> Self {
        Sequence::new(user, vocab.encode_with_eos(tokens))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn input(&self, t: usize) -> u32 {
        if t == 0 {
            self.start
        } else {
            self.tokens[t - 1]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LstmLayer {
    /// `in × 4H`, gate blocks ordered input, forget, cell, output.
    pub w_x: Array2<f64>,
    pub w_h: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Params {
    pub layers: Vec<LstmLayer>,
    /// `|V| × H`, independent of the input embeddings.
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
    pub user_vecs: Option<Array2<f64>>,
    /// Word half of the input (the whole input for the generic modes).
    pub word_emb: Array2<f64>,
}

impl Params {
    pub(crate) fn zeros_like(&self) -> Params {
        Params {
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer {
                    w_x: Array2::zeros(l.w_x.dim()),
                    w_h: Array2::zeros(l.w_h.dim()),
                    b: Array1::zeros(l.b.dim()),
                })
                .collect(),
            w_out: Array2::zeros(self.w_out.dim()),
            b_out: Array1::zeros(self.b_out.dim()),
            user_vecs: self.user_vecs.as_ref().map(|u| Array2::zeros(u.dim())),
            word_emb: Array2::zeros(self.word_emb.dim()),
        }
    }

    /// All tensors in declared order: `(name, rows, cols, data)`.
    pub(crate) fn tensors(&self) -> Vec<(String, usize, usize, &[f64])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("lstm{i}.w_x"), l.w_x.nrows(), l.w_x.ncols(), slice(&l.w_x)));
            out.push((format!("lstm{i}.w_h"), l.w_h.nrows(), l.w_h.ncols(), slice(&l.w_h)));
            out.push((format!("lstm{i}.b"), 1, l.b.len(), l.b.as_slice().expect("contiguous")));
        }
        out.push(("out.w".into(), self.w_out.nrows(), self.w_out.ncols(), slice(&self.w_out)));
        out.push(("out.b".into(), 1, self.b_out.len(), self.b_out.as_slice().expect("contiguous")));
        if let Some(u) = &self.user_vecs {
            out.push(("user_vectors".into(), u.nrows(), u.ncols(), slice(u)));
        }
        out.push((
            "word_embeddings".into(),
            self.word_emb.nrows(),
            self.word_emb.ncols(),
            slice(&self.word_emb),
        ));
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("lstm{i}.w_x"), slice_mut(&mut l.w_x)));
            out.push((format!("lstm{i}.w_h"), slice_mut(&mut l.w_h)));
            out.push((format!("lstm{i}.b"), l.b.as_slice_mut().expect("contiguous")));
        }
        out.push(("out.w".into(), slice_mut(&mut self.w_out)));
        out.push(("out.b".into(), self.b_out.as_slice_mut().expect("contiguous")));
        if let Some(u) = &mut self.user_vecs {
            out.push(("user_vectors".into(), slice_mut(u)));
        }
        out.push(("word_embeddings".into(), slice_mut(&mut self.word_emb)));
        out
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

/// Gradients for the trainable tensors of a model.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub(crate) inner: Params,
    pub(crate) trainable: Vec<String>,
}

impl Gradients {
    /// Names of the trainable tensors, in declared order.
    pub fn names(&self) -> &[String] {
        &self.trainable
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        if !self.trainable.iter().any(|n| n == name) {
            return None;
        }
        self.inner
            .tensors()
            .into_iter()
            .find(|(n, ..)| n == name)
            .map(|(.., d)| d)
    }

    pub fn norm(&self) -> f64 {
        self.inner
            .tensors()
            .into_iter()
            .filter(|(n, ..)| self.trainable.contains(n))
            .flat_map(|(.., d)| d.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

/// Recurrent LM over a fixed vocabulary with an untied output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageModel {
    pub(crate) config: LmConfig,
    pub(crate) words: Vec<String>,
    pub(crate) users: Vec<String>,
    /// Width of the word half of the input.
    pub(crate) emb_dim: usize,
    pub(crate) params: Params,
    /// `G + D_s` per user (personalized mode only); frozen.
    pub(crate) personal: Vec<Array2<f64>>,
    /// Free-form key/value pairs persisted with the model.
    pub metadata: std::collections::BTreeMap<String, String>,
}

/// Builds a model whose input embeddings are copied from `emb`.
///
/// Recurrent and output weights are uniform in `±1/√H`; single-user vectors
/// are uniform in `±0.01`.
pub fn build_lm(
    config: &LmConfig,
    emb: &EmbeddingSet,
    vocab: &Vocabulary,
    users: &[String],
) -> Result<LanguageModel> {
    config.validate()?;
    if vocab.words() != emb.words() {
        return Err(Error::Invalid(
            "vocabulary does not match the embedding word list".into(),
        ));
    }
    let mode = config.mode;
    if mode == LmMode::GenericDouble && !emb.is_generic_only() {
        return Err(Error::Config(
            "generic-double mode needs a generic-only embedding set of doubled width".into(),
        ));
    }
    if mode == LmMode::PersonalizedConcat {
        let missing: Vec<&str> = users
            .iter()
            .filter(|u| emb.user_index(u).is_err())
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "embedding set lacks deviations for users: {}",
                missing.join(", ")
            )));
        }
    }
    let k = emb.dim();
    let v = emb.vocab_size();
    let h = config.hidden_size;
    let input = match mode {
        LmMode::Generic | LmMode::GenericDouble => k,
        LmMode::SingleUserVector | LmMode::PersonalizedConcat => 2 * k,
    };
    let mut rng = util::rng(config.seed, &[0x1a7e]);
    let bound = 1.0 / (h as f64).sqrt();
    let mut uniform = |rows: usize, cols: usize, b: f64| {
        Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-b..=b))
    };
    let mut layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let in_w = if l == 0 { input } else { h };
        let w_x = uniform(in_w, 4 * h, bound);
        let w_h = uniform(h, 4 * h, bound);
        let b = uniform(1, 4 * h, bound).into_shape_with_order(4 * h).expect("1×n");
        layers.push(LstmLayer { w_x, w_h, b });
    }
    let w_out = uniform(v, h, bound);
    let b_out = uniform(1, v, bound).into_shape_with_order(v).expect("1×n");
    let user_vecs = (mode == LmMode::SingleUserVector).then(|| uniform(users.len(), k, 0.01));
    let personal = if mode == LmMode::PersonalizedConcat {
        users
            .iter()
            .map(|u| emb.space_matrix(crate::Space::User(u)))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(LanguageModel {
        config: config.clone(),
        words: emb.words().to_vec(),
        users: if mode.is_user_conditioned() {
            users.to_vec()
        } else {
            Vec::new()
        },
        emb_dim: k,
        params: Params {
            layers,
            w_out,
            b_out,
            user_vecs,
            word_emb: emb.generic().clone(),
        },
        personal,
        metadata: Default::default(),
    })
}

/// Per-batch dropout masks. Word types are dropped as a whole, with one
/// decision per type shared by every occurrence and by both input halves.
pub(crate) struct Masks {
    word_scale: HashMap<u32, f64>,
    /// `B × H` locked across time.
    out: Option<Array2<f64>>,
}

impl Masks {
    fn none() -> Self {
        Masks {
            word_scale: HashMap::new(),
            out: None,
        }
    }

    fn scale(&self, word: u32) -> f64 {
        self.word_scale.get(&word).copied().unwrap_or(1.0)
    }
}

struct LayerCache {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
}

/// Recurrent state carried between truncated-backprop windows.
#[derive(Clone, Debug)]
pub(crate) struct State {
    h: Vec<Array2<f64>>,
    c: Vec<Array2<f64>>,
}

pub(crate) struct ChunkForward {
    batch: usize,
    caches: Vec<LayerCache>,
    inputs: Vec<u32>,
    users: Vec<Option<usize>>,
    /// Top hidden layer after output dropout, `T·B × H`.
    top: Array2<f64>,
    pub(crate) logits: Array2<f64>,
    pub(crate) targets: Vec<Option<u32>>,
}

impl ChunkForward {
    pub(crate) fn rows(&self) -> usize {
        self.targets.len()
    }

    /// `(row, target, nll, rank)` for rows with a target. Rank counts words
    /// with a strictly larger logit, so ties favour the target.
    pub(crate) fn scores(&self) -> Vec<(usize, u32, f64, u32)> {
        let mut out = Vec::new();
        for (r, t) in self.targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = self.logits.row(r);
            let tl = row[t as usize];
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            let rank = 1 + row.iter().filter(|&&x| x > tl).count() as u32;
            out.push((r, t, lse - tl, rank));
        }
        out
    }
}

impl LanguageModel {
    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn mode(&self) -> LmMode {
        self.config.mode
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn user_index(&self, user: &str) -> Option<usize> {
        self.users.iter().position(|u| u == user)
    }

    pub fn input_width(&self) -> usize {
        self.params.layers[0].w_x.nrows()
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    pub(crate) fn trainable_names(&self) -> Vec<String> {
        self.params
            .tensors()
            .into_iter()
            .map(|(n, ..)| n)
            .filter(|n| n != "word_embeddings" || self.config.finetune_embeddings)
            .collect()
    }

    /// Mutable views of every parameter tensor, trainable or not.
    pub fn parameters_mut(&mut self) -> Vec<(String, &mut [f64])> {
        self.params.tensors_mut()
    }

    /// Builds the recurrent input for the input row of `word`.
    fn fill_input(&self, word: u32, user: Option<usize>, scale: f64, out: &mut [f64]) {
        let k = self.emb_dim;
        let wrow = self.params.word_emb.row(word as usize);
        let wk = wrow.len();
        for (o, x) in out[..wk].iter_mut().zip(wrow.iter()) {
            *o = x * scale;
        }
        match self.config.mode {
            LmMode::Generic | LmMode::GenericDouble => {}
            LmMode::SingleUserVector => {
                let u = self.params.user_vecs.as_ref().expect("user vectors");
                out[k..].copy_from_slice(u.row(user.expect("user-conditioned")).as_slice().expect("row"));
            }
            LmMode::PersonalizedConcat => {
                let p = self.personal[user.expect("user-conditioned")].row(word as usize);
                for (o, x) in out[k..].iter_mut().zip(p.iter()) {
                    *o = x * scale;
                }
            }
        }
    }

    pub(crate) fn check_sequence(&self, seq: &Sequence) -> Result<()> {
        let v = self.vocab_size() as u32;
        if let Some(&bad) = seq.tokens.iter().find(|&&t| t >= v) {
            return Err(Error::Invalid(format!("token index {bad} out of range for |V|={v}")));
        }
        if self.mode().is_user_conditioned() {
            match seq.user {
                Some(u) if u < self.users.len() => {}
                Some(u) => return Err(Error::Invalid(format!("user index {u} out of range"))),
                None => {
                    return Err(Error::Invalid(format!(
                        "{} mode needs a user for every sequence",
                        self.mode()
                    )))
                }
            }
        }
        Ok(())
    }

    pub(crate) fn initial_state(&self, batch: usize) -> State {
        let h = self.config.hidden_size;
        State {
            h: vec![Array2::zeros((batch, h)); self.config.layers],
            c: vec![Array2::zeros((batch, h)); self.config.layers],
        }
    }

    pub(crate) fn make_masks(&self, seqs: &[&Sequence], seed: Option<u64>) -> Masks {
        let Some(seed) = seed else {
            return Masks::none();
        };
        let mut rng = util::rng(seed, &[0xd0]);
        let mut word_scale = HashMap::new();
        let pe = self.config.emb_dropout;
        if pe > 0.0 {
            let mut types: Vec<u32> = seqs
                .iter()
                .flat_map(|s| (0..s.len()).map(move |t| s.input(t)))
                .collect();
            types.sort_unstable();
            types.dedup();
            for w in types {
                let keep = rng.gen::<f64>() >= pe;
                word_scale.insert(w, if keep { 1.0 / (1.0 - pe) } else { 0.0 });
            }
        }
        let po = self.config.out_dropout;
        let out = (po > 0.0).then(|| {
            Array2::from_shape_simple_fn((seqs.len(), self.config.hidden_size), || {
                if rng.gen::<f64>() >= po {
                    1.0 / (1.0 - po)
                } else {
                    0.0
                }
            })
        });
        Masks { word_scale, out }
    }

    /// Runs time steps `t0..t1` for a batch, starting from `state` and
    /// leaving the final state in it.
    pub(crate) fn forward_chunk(
        &self,
        seqs: &[&Sequence],
        t0: usize,
        t1: usize,
        state: &mut State,
        masks: &Masks,
    ) -> ChunkForward {
        let b = seqs.len();
        let steps = t1 - t0;
        let rows = steps * b;
        let width = self.input_width();
        let mut x = Array2::zeros((rows, width));
        let mut inputs = Vec::with_capacity(rows);
        let mut users = Vec::with_capacity(rows);
        let mut targets = Vec::with_capacity(rows);
        for t in t0..t1 {
            for (i, seq) in seqs.iter().enumerate() {
                let r = (t - t0) * b + i;
                let (word, target) = if t < seq.len() {
                    (seq.input(t), Some(seq.tokens[t]))
                } else {
                    (EOS_INDEX, None)
                };
                self.fill_input(
                    word,
                    seq.user,
                    masks.scale(word),
                    x.row_mut(r).as_slice_mut().expect("row"),
                );
                inputs.push(word);
                users.push(seq.user);
                targets.push(target);
            }
        }

        let mut caches = Vec::with_capacity(self.config.layers);
        let mut layer_in = x;
        for (l, layer) in self.params.layers.iter().enumerate() {
            let (cache, h_all) = lstm_forward(layer, layer_in, &mut state.h[l], &mut state.c[l], b);
            caches.push(cache);
            layer_in = h_all;
        }
        let mut top = layer_in;
        if let Some(mask) = &masks.out {
            for (r, mut row) in top.rows_mut().into_iter().enumerate() {
                row *= &mask.row(r % b);
            }
        }
        let mut logits = top.dot(&self.params.w_out.t());
        logits += &self.params.b_out;
        ChunkForward {
            batch: b,
            caches,
            inputs,
            users,
            top,
            logits,
            targets,
        }
    }

    /// Accumulates gradients of `Σ nll / denom` over the chunk into `grads`.
    pub(crate) fn backward_chunk(
        &self,
        fw: &ChunkForward,
        masks: &Masks,
        denom: f64,
        grads: &mut Params,
    ) {
        let b = fw.batch;
        let mut dlogits = fw.logits.clone();
        for (r, mut row) in dlogits.rows_mut().into_iter().enumerate() {
            match fw.targets[r] {
                None => row.fill(0.0),
                Some(t) => {
                    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                    row.mapv_inplace(|x| (x - max).exp());
                    let z = row.sum();
                    row.mapv_inplace(|x| x / z / denom);
                    row[t as usize] -= 1.0 / denom;
                }
            }
        }
        grads.w_out += &dlogits.t().dot(&fw.top);
        grads.b_out += &dlogits.sum_axis(Axis(0));
        let mut dh = dlogits.dot(&self.params.w_out);
        if let Some(mask) = &masks.out {
            for (r, mut row) in dh.rows_mut().into_iter().enumerate() {
                row *= &mask.row(r % b);
            }
        }
        for l in (0..self.config.layers).rev() {
            dh = lstm_backward(&self.params.layers[l], &fw.caches[l], &dh, &mut grads.layers[l], b);
        }
        let dx = dh;
        let k = self.emb_dim;
        let finetune = self.config.finetune_embeddings;
        for r in 0..fw.rows() {
            let row = dx.row(r);
            if finetune {
                let w = fw.inputs[r];
                let scale = masks.scale(w);
                if scale != 0.0 {
                    let wk = grads.word_emb.ncols();
                    let mut g = grads.word_emb.row_mut(w as usize);
                    for j in 0..wk {
                        g[j] += row[j] * scale;
                    }
                }
            }
            if let Some(uv) = &mut grads.user_vecs {
                let u = fw.users[r].expect("user-conditioned");
                let mut g = uv.row_mut(u);
                for j in 0..k {
                    g[j] += row[k + j];
                }
            }
        }
    }

    /// Mean next-token NLL of `seqs` and its gradient, backpropagating
    /// through whole sequences. With `dropout_seed` the training-time masks
    /// for that seed are applied.
    pub fn loss_and_grads(
        &self,
        seqs: &[Sequence],
        dropout_seed: Option<u64>,
    ) -> Result<(f64, Gradients)> {
        for s in seqs {
            self.check_sequence(s)?;
        }
        let refs: Vec<&Sequence> = seqs.iter().collect();
        let steps = refs.iter().map(|s| s.len()).max().unwrap_or(0);
        let masks = self.make_masks(&refs, dropout_seed);
        let mut state = self.initial_state(refs.len());
        let fw = self.forward_chunk(&refs, 0, steps, &mut state, &masks);
        let scores = fw.scores();
        let n = scores.len().max(1) as f64;
        let loss = scores.iter().map(|s| s.2).sum::<f64>() / n;
        let mut grads = self.params.zeros_like();
        self.backward_chunk(&fw, &masks, n, &mut grads);
        Ok((
            loss,
            Gradients {
                inner: grads,
                trainable: self.trainable_names(),
            },
        ))
    }
}

fn lstm_forward(
    layer: &LstmLayer,
    x: Array2<f64>,
    h: &mut Array2<f64>,
    c: &mut Array2<f64>,
    b: usize,
) -> (LayerCache, Array2<f64>) {
    let hs = layer.w_h.nrows();
    let rows = x.nrows();
    let steps = rows / b;
    let mut gates = x.dot(&layer.w_x);
    gates += &layer.b;
    let mut h_prev = Array2::zeros((rows, hs));
    let mut c_prev = Array2::zeros((rows, hs));
    let mut tanh_c = Array2::zeros((rows, hs));
    let mut h_all = Array2::zeros((rows, hs));
    for t in 0..steps {
        let r0 = t * b;
        h_prev.slice_mut(s![r0..r0 + b, ..]).assign(h);
        c_prev.slice_mut(s![r0..r0 + b, ..]).assign(c);
        let rec = h.dot(&layer.w_h);
        let mut z = gates.slice_mut(s![r0..r0 + b, ..]);
        z += &rec;
        for i in 0..b {
            let r = r0 + i;
            for j in 0..hs {
                let ig = sigmoid(z[[i, j]]);
                let fg = sigmoid(z[[i, hs + j]]);
                let gg = z[[i, 2 * hs + j]].tanh();
                let og = sigmoid(z[[i, 3 * hs + j]]);
                z[[i, j]] = ig;
                z[[i, hs + j]] = fg;
                z[[i, 2 * hs + j]] = gg;
                z[[i, 3 * hs + j]] = og;
                let cn = fg * c[[i, j]] + ig * gg;
                let tc = cn.tanh();
                c[[i, j]] = cn;
                h[[i, j]] = og * tc;
                tanh_c[[r, j]] = tc;
                h_all[[r, j]] = og * tc;
            }
        }
    }
    (
        LayerCache {
            x,
            h_prev,
            c_prev,
            gates,
            tanh_c,
        },
        h_all,
    )
}

/// Returns the gradient with respect to the layer input.
fn lstm_backward(
    layer: &LstmLayer,
    cache: &LayerCache,
    dh_all: &Array2<f64>,
    grads: &mut LstmLayer,
    b: usize,
) -> Array2<f64> {
    let hs = layer.w_h.nrows();
    let rows = dh_all.nrows();
    let steps = rows / b;
    let mut dz = Array2::zeros((rows, 4 * hs));
    let mut dh_next: Array2<f64> = Array2::zeros((b, hs));
    let mut dc_next: Array2<f64> = Array2::zeros((b, hs));
    for t in (0..steps).rev() {
        let r0 = t * b;
        for i in 0..b {
            let r = r0 + i;
            for j in 0..hs {
                let ig = cache.gates[[r, j]];
                let fg = cache.gates[[r, hs + j]];
                let gg = cache.gates[[r, 2 * hs + j]];
                let og = cache.gates[[r, 3 * hs + j]];
                let tc = cache.tanh_c[[r, j]];
                let dh = dh_all[[r, j]] + dh_next[[i, j]];
                let d_o = dh * tc;
                let dc = dh * og * (1.0 - tc * tc) + dc_next[[i, j]];
                dc_next[[i, j]] = dc * fg;
                dz[[r, j]] = dc * gg * ig * (1.0 - ig);
                dz[[r, hs + j]] = dc * cache.c_prev[[r, j]] * fg * (1.0 - fg);
                dz[[r, 2 * hs + j]] = dc * ig * (1.0 - gg * gg);
                dz[[r, 3 * hs + j]] = d_o * og * (1.0 - og);
            }
        }
        dh_next = dz.slice(s![r0..r0 + b, ..]).dot(&layer.w_h.t());
    }
    grads.w_x += &cache.x.t().dot(&dz);
    grads.w_h += &cache.h_prev.t().dot(&dz);
    grads.b += &dz.sum_axis(Axis(0));
    dz.dot(&layer.w_x.t())
}

/// Next-token distributions for `inputs` read left to right (no start
/// symbol is prepended). `user` is required by the user-conditioned modes
/// and ignored otherwise. Without `dropout_seed` no dropout is applied.
pub fn forward(
    lm: &LanguageModel,
    inputs: &[u32],
    user: Option<&str>,
    dropout_seed: Option<u64>,
) -> Result<Array2<f64>> {
    let user_idx = if lm.mode().is_user_conditioned() {
        let u = user.ok_or_else(|| Error::Invalid(format!("{} mode needs a user", lm.mode())))?;
        Some(
            lm.user_index(u)
                .ok_or_else(|| Error::UnknownUser(u.to_owned()))?,
        )
    } else {
        None
    };
    if inputs.is_empty() {
        return Ok(Array2::zeros((0, lm.vocab_size())));
    }
    let v = lm.vocab_size() as u32;
    if let Some(&bad) = inputs.iter().find(|&&t| t >= v) {
        return Err(Error::Invalid(format!("token index {bad} out of range for |V|={v}")));
    }
    // Targets are placeholders; only the logits are used.
    let mut tokens = inputs[1..].to_vec();
    tokens.push(EOS_INDEX);
    let seq = Sequence {
        user: user_idx,
        tokens,
        start: inputs[0],
    };
    let refs = [&seq];
    let masks = lm.make_masks(&refs, dropout_seed);
    let mut state = lm.initial_state(1);
    let fw = lm.forward_chunk(&refs, 0, seq.len(), &mut state, &masks);
    Ok(softmax_rows(fw.logits))
}

pub(crate) fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let z = row.sum();
        row.mapv_inplace(|x| x / z);
    }
    logits
}

#[cfg(test)]
impl LanguageModel {
    pub(crate) fn fill_input_for_test(&self, word: u32, user: Option<usize>, out: &mut [f64]) {
        self.fill_input(word, user, 1.0, out)
    }

    pub(crate) fn fill_input_scaled_for_test(&self, word: u32, user: Option<usize>, scale: f64, out: &mut [f64]) {
        self.fill_input(word, user, scale, out)
    }
}

#[cfg(test)]
impl Masks {
    pub(crate) fn scale_for_test(&self, word: u32) -> f64 {
        self.scale(word)
    }
}
