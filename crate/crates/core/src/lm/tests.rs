use ndarray::Array2;
use rand::Rng;

use super::*;
use crate::corpus::Vocabulary;
use crate::embeddings::{EmbeddingSet, SgnsConfig};
use crate::util;

fn vocab(n: usize) -> Vocabulary {
    let mut words = vec!["<unk>".to_string(), "</s>".to_string()];
    words.extend((0..n - 2).map(|i| format!("w{i}")));
    Vocabulary::from_word_list(words, None, 1).unwrap()
}

fn embset(v: &Vocabulary, users: &[String], k: usize, seed: u64) -> EmbeddingSet {
    let cfg = SgnsConfig {
        dim: k,
        seed,
        ..SgnsConfig::default()
    };
    let mut e = EmbeddingSet::init(v, users, &cfg).unwrap();
    let mut rng = util::rng(seed, &[9]);
    for u in users {
        e.deviation_mut(u)
            .unwrap()
            .mapv_inplace(|_| rng.gen_range(-0.3..0.3));
    }
    e.generic_mut().mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    e
}

fn tiny(mode: LmMode) -> (LanguageModel, Vec<Sequence>) {
    let v = vocab(12);
    let users: Vec<String> = vec!["a".into(), "b".into()];
    let k = 4;
    let e = if mode == LmMode::GenericDouble {
        let cfg = SgnsConfig {
            dim: 2 * k,
            generic_only: true,
            ..SgnsConfig::default()
        };
        EmbeddingSet::init(&v, &[], &cfg).unwrap()
    } else {
        embset(&v, &users, k, 3)
    };
    let cfg = LmConfig {
        mode,
        hidden_size: 8,
        emb_dropout: 0.3,
        out_dropout: 0.2,
        finetune_embeddings: true,
        ..LmConfig::default()
    };
    let lm = build_lm(&cfg, &e, &v, &users).unwrap();
    let mut rng = util::rng(5, &[]);
    let seqs = (0..3)
        .map(|i| {
            let len = 3 + i * 2;
            let mut t: Vec<u32> = (0..len - 1).map(|_| rng.gen_range(0..12)).collect();
            t.push(1);
            Sequence::new(mode.is_user_conditioned().then_some(i % 2), t)
        })
        .collect();
    (lm, seqs)
}

#[test]
fn gradients_match_finite_differences_in_every_mode() {
    for mode in LmMode::ALL {
        let (mut lm, seqs) = tiny(mode);
        let (_, grads) = lm.loss_and_grads(&seqs, Some(11)).unwrap();
        let names = grads.names().to_vec();
        let analytic: Vec<(String, Vec<f64>)> = names
            .iter()
            .map(|n| (n.clone(), grads.get(n).unwrap().to_vec()))
            .collect();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (name, g) in &analytic {
            for i in (0..g.len()).step_by(7) {
                let orig = param(&mut lm, name)[i];
                param(&mut lm, name)[i] = orig + h;
                let lp = lm.loss_and_grads(&seqs, Some(11)).unwrap().0;
                param(&mut lm, name)[i] = orig - h;
                let lm_ = lm.loss_and_grads(&seqs, Some(11)).unwrap().0;
                param(&mut lm, name)[i] = orig;
                let fd = (lp - lm_) / (2.0 * h);
                let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-4, "{mode}: max rel err {worst}");
    }
}

fn param<'a>(lm: &'a mut LanguageModel, name: &str) -> &'a mut [f64] {
    lm.parameters_mut()
        .into_iter()
        .find(|(n, _)| n == name)
        .unwrap()
        .1
}

#[test]
fn frozen_embeddings_have_no_gradient() {
    let (mut lm, seqs) = tiny(LmMode::PersonalizedConcat);
    lm.config.finetune_embeddings = false;
    let (_, g) = lm.loss_and_grads(&seqs, None).unwrap();
    assert!(g.get("word_embeddings").is_none());
    assert!(g.get("out.w").is_some());
}

#[test]
fn distributions_are_normalized() {
    for mode in LmMode::ALL {
        let (lm, _) = tiny(mode);
        let user = mode.is_user_conditioned().then_some("b");
        let p = forward(&lm, &[1, 3, 4, 5, 3], user, None).unwrap();
        assert_eq!(p.nrows(), 5);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_rejects_bad_input() {
    let (lm, _) = tiny(LmMode::PersonalizedConcat);
    assert!(forward(&lm, &[1, 40], Some("a"), None).is_err());
    assert!(forward(&lm, &[1, 2], None, None).is_err());
    assert!(matches!(
        forward(&lm, &[1, 2], Some("zz"), None),
        Err(crate::Error::UnknownUser(_))
    ));
}

#[test]
fn personalized_input_is_generic_concat_personal() {
    let (lm, _) = tiny(LmMode::PersonalizedConcat);
    assert_eq!(lm.input_width(), 8);
    let mut buf = vec![0.0; 8];
    lm.fill_input_for_test(5, Some(1), &mut buf);
    let g = lm.params.word_emb.row(5).to_vec();
    let p = lm.personal[1].row(5).to_vec();
    assert_eq!(&buf[..4], &g[..]);
    assert_eq!(&buf[4..], &p[..]);
}

#[test]
fn zero_deviation_personalized_equals_doubled_generic() {
    let v = vocab(12);
    let users: Vec<String> = vec!["a".into()];
    let cfg = SgnsConfig {
        dim: 4,
        ..SgnsConfig::default()
    };
    let e = EmbeddingSet::init(&v, &users, &cfg).unwrap();
    let g = e.generic().clone();
    let mut doubled = Array2::zeros((12, 8));
    doubled.slice_mut(ndarray::s![.., ..4]).assign(&g);
    doubled.slice_mut(ndarray::s![.., 4..]).assign(&g);
    let e2 = EmbeddingSet::from_parts(v.words().to_vec(), doubled, vec![], vec![], None).unwrap();
    let base = LmConfig {
        hidden_size: 8,
        ..LmConfig::default()
    };
    let pc = build_lm(
        &LmConfig {
            mode: LmMode::PersonalizedConcat,
            ..base.clone()
        },
        &e,
        &v,
        &users,
    )
    .unwrap();
    let mut gd = build_lm(
        &LmConfig {
            mode: LmMode::GenericDouble,
            ..base
        },
        &e2,
        &v,
        &[],
    )
    .unwrap();
    gd.params.layers = pc.params.layers.clone();
    gd.params.w_out = pc.params.w_out.clone();
    gd.params.b_out = pc.params.b_out.clone();
    let toks = [1, 4, 7, 2, 9, 4];
    let a = forward(&pc, &toks, Some("a"), None).unwrap();
    let b = forward(&gd, &toks, None, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dropout_mask_is_shared_between_halves() {
    let (mut lm, _) = tiny(LmMode::PersonalizedConcat);
    lm.config.emb_dropout = 0.5;
    let seq = Sequence::new(Some(0), vec![3, 4, 3, 5, 4, 1]);
    let masks = lm.make_masks(&[&seq], Some(42));
    let mut dropped = 0;
    for w in [1u32, 3, 4, 5] {
        let s = masks.scale_for_test(w);
        assert!(s == 0.0 || (s - 2.0).abs() < 1e-12);
        let mut buf = vec![0.0; 8];
        lm.fill_input_scaled_for_test(w, Some(0), s, &mut buf);
        if s == 0.0 {
            dropped += 1;
            assert!(buf.iter().all(|&x| x == 0.0));
        }
    }
    let _ = dropped;
    let none = lm.make_masks(&[&seq], None);
    assert_eq!(none.scale_for_test(3), 1.0);
}

#[test]
fn uniform_output_has_perplexity_vocab_size() {
    let (mut lm, seqs) = tiny(LmMode::Generic);
    lm.params.w_out.fill(0.0);
    lm.params.b_out.fill(0.0);
    let ppl = perplexity(&lm, &seqs).unwrap();
    assert!((ppl - 12.0).abs() / 12.0 < 1e-9);
    let (rep, scores) = evaluate(&lm, &seqs, None).unwrap();
    let mean: f64 = scores.iter().map(|s| s.total_nll()).sum::<f64>() / rep.tokens as f64;
    assert!((rep.perplexity.ln() - mean).abs() < 1e-9);
    // All logits tie, so every target has rank 1.
    assert_eq!(rep.mrr, 1.0);
}

#[test]
fn learns_alternating_sequence() {
    let mut words = vec!["<unk>".to_string(), "</s>".to_string()];
    words.extend(["a".to_string(), "b".to_string()]);
    let v = Vocabulary::from_word_list(words, None, 1).unwrap();
    let cfg = SgnsConfig {
        dim: 4,
        generic_only: true,
        ..SgnsConfig::default()
    };
    let e = EmbeddingSet::init(&v, &[], &cfg).unwrap();
    let lcfg = LmConfig {
        mode: LmMode::Generic,
        hidden_size: 16,
        emb_dropout: 0.0,
        out_dropout: 0.0,
        lr: 1.0,
        max_epochs: 30,
        patience: 5,
        batch_size: 4,
        seq_len: 20,
        ..LmConfig::default()
    };
    let mut lm = build_lm(&lcfg, &e, &v, &[]).unwrap();
    let seq: Vec<u32> = (0..100).map(|i| 2 + (i % 2) as u32).chain([1]).collect();
    let train = vec![Sequence::new(None, seq.clone()); 32];
    let val = vec![Sequence::new(None, seq); 2];
    let log = train_lm(&mut lm, &train, &val).unwrap();
    let ppl = perplexity(&lm, &val).unwrap();
    assert!(ppl < 1.1, "ppl {ppl}, log {log:?}");

    let mut lm2 = build_lm(&lcfg, &e, &v, &[]).unwrap();
    let log2 = train_lm(&mut lm2, &train, &val).unwrap();
    assert_eq!(log, log2);
}

#[test]
fn model_file_round_trips_and_detects_truncation() {
    for mode in LmMode::ALL {
        let (mut lm, _) = tiny(mode);
        lm.metadata.insert("k".into(), "v".into());
        let bytes = write_model(&lm);
        let back = parse_model(&bytes, std::path::Path::new("m")).unwrap();
        assert_eq!(back, lm);
        assert_eq!(write_model(&back), bytes);
        for cut in [1, 33, bytes.len() / 2] {
            assert!(parse_model(&bytes[..bytes.len() - cut], std::path::Path::new("m")).is_err());
        }
    }
}

#[test]
fn build_checks_mode_requirements() {
    let v = vocab(12);
    let users: Vec<String> = vec!["a".into()];
    let e = embset(&v, &users, 4, 1);
    let cfg = LmConfig {
        hidden_size: 8,
        ..LmConfig::default()
    };
    let err = build_lm(&cfg, &e, &v, &["a".into(), "x".into(), "y".into()]).unwrap_err();
    assert!(err.to_string().contains("x, y"));
    let gd = LmConfig {
        mode: LmMode::GenericDouble,
        ..cfg.clone()
    };
    assert!(build_lm(&gd, &e, &v, &[]).is_err());
    let lm = build_lm(&LmConfig { mode: LmMode::Generic, ..cfg }, &e, &v, &users).unwrap();
    assert_eq!(lm.input_width(), 4);
}
