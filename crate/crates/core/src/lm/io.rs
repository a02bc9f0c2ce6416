//! Binary model container.
//!
//! Layout: magic, header (mode, sizes, seed, vocab hash), training
//! settings, word list, user list, metadata, named parameter blocks
//! (`rows × cols` little-endian f64) and a trailing SHA-256 of everything
//! before it.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::model::{LanguageModel, LstmLayer, Params};
use super::{LmConfig, LmMode};
use crate::util::sha256;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"PWELM1\n\0";

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::corrupt(
                self.path,
                format!("truncated at byte {} (wanted {n} more)", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::corrupt(self.path, "invalid UTF-8 string"))
    }
}

fn vocab_hash(words: &[String]) -> String {
    crate::util::sha256_hex(words.join("\n").as_bytes())
}

/// Serializes a model to bytes.
pub fn write_model(lm: &LanguageModel) -> Vec<u8> {
    let c = &lm.config;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u8(c.mode.code());
    w.u32(c.layers);
    w.u32(c.hidden_size);
    w.u32(lm.emb_dim);
    w.u32(lm.words.len());
    w.u32(lm.users.len());
    w.u64(c.seed);
    w.str(&vocab_hash(&lm.words));
    for v in [c.emb_dropout, c.out_dropout, c.lr, c.lr_decay, c.clip] {
        w.f64(v);
    }
    for v in [c.seq_len, c.batch_size, c.max_epochs, c.patience, c.threads] {
        w.u32(v);
    }
    w.u8(c.finetune_embeddings as u8);
    for s in lm.words.iter().chain(&lm.users) {
        w.str(s);
    }
    w.u32(lm.metadata.len());
    for (k, v) in &lm.metadata {
        w.str(k);
        w.str(v);
    }
    let mut blocks = lm.params.tensors();
    let personal: Vec<(String, &Array2<f64>)> = lm
        .personal
        .iter()
        .enumerate()
        .map(|(i, m)| (format!("personal.{i}"), m))
        .collect();
    for (name, m) in &personal {
        blocks.push((name.clone(), m.nrows(), m.ncols(), m.as_slice().expect("standard layout")));
    }
    w.u32(blocks.len());
    for (name, rows, cols, data) in blocks {
        w.str(&name);
        w.u32(rows);
        w.u32(cols);
        for &x in data {
            w.f64(x);
        }
    }
    let digest = sha256(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

pub fn save_model(lm: &LanguageModel, path: &Path) -> Result<()> {
    std::fs::write(path, write_model(lm)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<LanguageModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_model(&bytes, path)
}

/// Parses bytes written by [`write_model`]. `path` is only used in errors.
pub fn parse_model(bytes: &[u8], path: &Path) -> Result<LanguageModel> {
    if bytes.len() < MAGIC.len() + 32 {
        return Err(Error::corrupt(path, "file too short"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::corrupt(path, "not a model file (bad magic)"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if sha256(body) != digest {
        return Err(Error::corrupt(path, "checksum mismatch (truncated or modified)"));
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
        path,
    };
    let mode = LmMode::from_code(r.u8()?).ok_or_else(|| Error::corrupt(path, "unknown mode"))?;
    let layers = r.u32()?;
    let hidden_size = r.u32()?;
    let emb_dim = r.u32()?;
    let n_words = r.u32()?;
    let n_users = r.u32()?;
    let seed = r.u64()?;
    let hash = r.str()?;
    let emb_dropout = r.f64()?;
    let out_dropout = r.f64()?;
    let lr = r.f64()?;
    let lr_decay = r.f64()?;
    let clip = r.f64()?;
    let seq_len = r.u32()?;
    let batch_size = r.u32()?;
    let max_epochs = r.u32()?;
    let patience = r.u32()?;
    let threads = r.u32()?;
    let finetune_embeddings = r.u8()? != 0;
    let config = LmConfig {
        mode,
        layers,
        hidden_size,
        emb_dropout,
        out_dropout,
        lr,
        lr_decay,
        clip,
        seq_len,
        batch_size,
        max_epochs,
        patience,
        seed,
        finetune_embeddings,
        threads,
    };
    config
        .validate()
        .map_err(|e| Error::corrupt(path, format!("bad settings: {e}")))?;
    let words = (0..n_words).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    if vocab_hash(&words) != hash {
        return Err(Error::corrupt(path, "vocabulary hash mismatch"));
    }
    let users = (0..n_users).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let n_meta = r.u32()?;
    let mut metadata = BTreeMap::new();
    for _ in 0..n_meta {
        let k = r.str()?;
        metadata.insert(k, r.str()?);
    }
    let n_blocks = r.u32()?;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let name = r.str()?;
        let rows = r.u32()?;
        let cols = r.u32()?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::corrupt(path, "block size overflow"))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::corrupt(path, "block size overflow"))?)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        blocks.push((name, rows, cols, data));
    }
    if r.pos != body.len() {
        return Err(Error::corrupt(path, "trailing bytes after parameter blocks"));
    }

    let mut it = blocks.into_iter();
    let mut next = |want: String| -> Result<Array2<f64>> {
        let (name, rows, cols, data) = it
            .next()
            .ok_or_else(|| Error::corrupt(path, format!("missing block {want}")))?;
        if name != want {
            return Err(Error::corrupt(path, format!("expected block {want}, found {name}")));
        }
        Ok(Array2::from_shape_vec((rows, cols), data).expect("size checked"))
    };
    let vec1 = |a: Array2<f64>| -> Array1<f64> {
        let n = a.len();
        a.into_shape_with_order(n).expect("row vector")
    };
    let mut lstm = Vec::with_capacity(layers);
    for i in 0..layers {
        let w_x = next(format!("lstm{i}.w_x"))?;
        let w_h = next(format!("lstm{i}.w_h"))?;
        let b = vec1(next(format!("lstm{i}.b"))?);
        lstm.push(LstmLayer { w_x, w_h, b });
    }
    let w_out = next("out.w".into())?;
    let b_out = vec1(next("out.b".into())?);
    let user_vecs = if mode == LmMode::SingleUserVector {
        Some(next("user_vectors".into())?)
    } else {
        None
    };
    let word_emb = next("word_embeddings".into())?;
    let personal = if mode == LmMode::PersonalizedConcat {
        (0..n_users)
            .map(|i| next(format!("personal.{i}")))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    if it.next().is_some() {
        return Err(Error::corrupt(path, "unexpected extra parameter block"));
    }
    let params = Params {
        layers: lstm,
        w_out,
        b_out,
        user_vecs,
        word_emb,
    };
    check_shapes(&params, &personal, mode, n_words, emb_dim, hidden_size, n_users)
        .map_err(|m| Error::corrupt(path, m))?;
    Ok(LanguageModel {
        config,
        words,
        users,
        emb_dim,
        params,
        personal,
        metadata,
    })
}

fn check_shapes(
    p: &Params,
    personal: &[Array2<f64>],
    mode: LmMode,
    v: usize,
    k: usize,
    h: usize,
    users: usize,
) -> std::result::Result<(), String> {
    let input = match mode {
        LmMode::Generic | LmMode::GenericDouble => p.word_emb.ncols(),
        _ => 2 * k,
    };
    let word_w = if mode == LmMode::GenericDouble { p.word_emb.ncols() } else { k };
    let mut ok = p.word_emb.dim() == (v, word_w) && p.w_out.dim() == (v, h) && p.b_out.len() == v;
    for (i, l) in p.layers.iter().enumerate() {
        let in_w = if i == 0 { input } else { h };
        ok &= l.w_x.dim() == (in_w, 4 * h) && l.w_h.dim() == (h, 4 * h) && l.b.len() == 4 * h;
    }
    if let Some(u) = &p.user_vecs {
        ok &= u.dim() == (users, k);
    }
    ok &= personal.iter().all(|m| m.dim() == (v, k));
    if ok {
        Ok(())
    } else {
        Err("parameter shapes inconsistent with header".into())
    }
}
