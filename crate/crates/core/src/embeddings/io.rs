//! Text persistence:
//!
//! ```text
//! PWE1 <|V|> <k> <num_users>
//! #space GENERIC
//! <word> <k decimals>          (one line per vocabulary word)
//! #space <user_id>             (one block per user, deviation rows)
//! ...
//! #end <sha256 of every preceding byte>
//! ```
//!
//! Decimals use the shortest representation that parses back to the same
//! `f64`, so a round trip is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::EmbeddingSet;
use crate::util::sha256_hex;
use crate::{Error, Result};

const MAGIC: &str = "PWE1";

fn write_block(out: &mut String, label: &str, words: &[String], m: &Array2<f64>) {
    let _ = writeln!(out, "#space {label}");
    for (w, row) in words.iter().zip(m.rows()) {
        out.push_str(w);
        for x in row {
            // `{:?}` keeps round-trip precision and always prints a decimal point.
            let _ = write!(out, " {x:?}");
        }
        out.push('\n');
    }
}

/// Serializes `emb` to the text format.
pub fn write_embeddings(emb: &EmbeddingSet) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{MAGIC} {} {} {}",
        emb.vocab_size(),
        emb.dim(),
        emb.users.len()
    );
    write_block(&mut out, "GENERIC", &emb.words, &emb.generic);
    for (u, d) in emb.users.iter().zip(&emb.deviations) {
        write_block(&mut out, u, &emb.words, d);
    }
    let sum = sha256_hex(out.as_bytes());
    let _ = writeln!(out, "#end {sum}");
    out
}

pub fn save_embeddings(emb: &EmbeddingSet, path: &Path) -> Result<()> {
    fs::write(path, write_embeddings(emb)).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(raw).map_err(|_| Error::corrupt(path, "not UTF-8"))?;
    parse_embeddings(&text).map_err(|reason| Error::corrupt(path, reason))
}

pub(crate) fn parse_embeddings(text: &str) -> std::result::Result<EmbeddingSet, String> {
    let end_pos = text
        .rfind("#end ")
        .ok_or("missing #end line (truncated file?)")?;
    if end_pos > 0 && !text[..end_pos].ends_with('\n') {
        return Err("malformed #end line".into());
    }
    let trailer = text[end_pos + 5..].trim_end_matches('\n');
    if trailer.contains('\n') {
        return Err("data after #end line".into());
    }
    let body = &text[..end_pos];
    if sha256_hex(body.as_bytes()) != trailer {
        return Err("checksum mismatch".into());
    }

    let mut lines = body.lines().enumerate();
    let (_, header) = lines.next().ok_or("empty file")?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 4 || fields[0] != MAGIC {
        return Err(format!("unsupported header `{header}` (expected {MAGIC})"));
    }
    let parse_n = |s: &str| s.parse::<usize>().map_err(|e| format!("bad header count `{s}`: {e}"));
    let (n, k, num_users) = (parse_n(fields[1])?, parse_n(fields[2])?, parse_n(fields[3])?);

    let mut read_block = |expect_words: Option<&[String]>| -> std::result::Result<(String, Vec<String>, Array2<f64>), String> {
        let (ln, line) = lines.next().ok_or("missing #space block")?;
        let label = line
            .strip_prefix("#space ")
            .ok_or_else(|| format!("line {}: expected #space", ln + 1))?
            .to_owned();
        let mut words = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * k);
        for r in 0..n {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| format!("block `{label}` ends after {r} rows"))?;
            let mut parts = line.split(' ');
            let word = parts.next().unwrap_or_default();
            if let Some(ws) = expect_words {
                if ws[r] != word {
                    return Err(format!("line {}: word `{word}` out of order", ln + 1));
                }
            }
            words.push(word.to_owned());
            let before = data.len();
            for p in parts {
                let x: f64 = p
                    .parse()
                    .map_err(|e| format!("line {}: bad value `{p}`: {e}", ln + 1))?;
                if !x.is_finite() {
                    return Err(format!("line {}: non-finite value", ln + 1));
                }
                data.push(x);
            }
            if data.len() - before != k {
                return Err(format!("line {}: expected {k} values", ln + 1));
            }
        }
        let m = Array2::from_shape_vec((n, k), data).map_err(|e| e.to_string())?;
        Ok((label, words, m))
    };

    let (label, words, generic) = read_block(None)?;
    if label != "GENERIC" {
        return Err(format!("first block must be GENERIC, found `{label}`"));
    }
    let mut users = Vec::with_capacity(num_users);
    let mut deviations = Vec::with_capacity(num_users);
    for _ in 0..num_users {
        let (label, _, m) = read_block(Some(&words))?;
        users.push(label);
        deviations.push(m);
    }
    if lines.next().is_some() {
        return Err("unexpected lines after last block".into());
    }
    EmbeddingSet::from_parts(words, generic, users, deviations, None).map_err(|e| e.to_string())
}

/// word2vec text export of the generic space: `<|V|> <k>` then one row per word.
pub fn export_word2vec(emb: &EmbeddingSet, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", emb.vocab_size(), emb.dim());
    for (w, row) in emb.words.iter().zip(emb.generic.rows()) {
        out.push_str(w);
        for x in row {
            let _ = write!(out, " {x:?}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> EmbeddingSet {
        EmbeddingSet::from_parts(
            vec!["<unk>".into(), "</s>".into(), "héllo".into()],
            array![[0.1, -0.0], [1e-300, 3.0], [-2.5e-7, 1.0 / 3.0]],
            vec!["alice".into(), "bob smith".into()],
            vec![Array2::zeros((3, 2)), array![[1.0, 2.0], [3.0, 4.0], [5.0, f64::MIN_POSITIVE]]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        let e = sample();
        let back = parse_embeddings(&write_embeddings(&e)).unwrap();
        assert_eq!(back, e);
        for (a, b) in e.generic.iter().zip(back.generic.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn generic_only_round_trip() {
        let mut e = sample();
        e.users.clear();
        e.deviations.clear();
        let text = write_embeddings(&e);
        assert!(text.starts_with("PWE1 3 2 0\n#space GENERIC\n"));
        assert_eq!(parse_embeddings(&text).unwrap(), e);
    }

    #[test]
    fn truncation_and_tampering_fail() {
        let text = write_embeddings(&sample());
        for cut in [0, 10, text.len() / 2, text.len() - 3] {
            assert!(parse_embeddings(&text[..cut]).is_err(), "cut at {cut}");
        }
        let tampered = text.replacen("0.1", "0.2", 1);
        assert_eq!(parse_embeddings(&tampered).unwrap_err(), "checksum mismatch");
        let wrong_magic = text.replacen("PWE1", "PWE9", 1);
        assert!(parse_embeddings(&wrong_magic).is_err());
    }
}
