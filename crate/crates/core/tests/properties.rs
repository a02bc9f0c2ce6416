use std::collections::HashMap;

use ndarray::Array2;
use proptest::prelude::*;

use pwe::analysis::{word_dissimilarity, DistanceMode};
use pwe::corpus::{build_vocab, split_corpus, CorpusStore, UNK_INDEX};
use pwe::embeddings::{sgns_loss_and_grads, L2Scope, NegativeSamplingTable};
use pwe::{EmbeddingSet, Post, Space, SplitSpec, Vocabulary};

fn corpus_strategy() -> impl Strategy<Value = CorpusStore> {
    prop::collection::vec(
        (0..4usize, prop::collection::vec(0..30usize, 1..12)),
        12..120,
    )
    .prop_map(|posts| {
        CorpusStore::from_posts(posts.into_iter().map(|(u, toks)| {
            Post::from_tokens(format!("user{u}"), toks.into_iter().map(|t| format!("t{t}")).collect())
        }))
    })
}

fn words(n: usize) -> Vec<String> {
    let mut w = vec!["<unk>".to_string(), "</s>".to_string()];
    w.extend((2..n).map(|i| format!("w{i}")));
    w
}

fn matrix(n: usize, k: usize, vals: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((n, k), |(i, j)| vals[(i * k + j) % vals.len()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_partition(corpus in corpus_strategy(), seed in 0u64..1000) {
        let spec = SplitSpec::new(0.6, 0.2, 0.2, seed).unwrap();
        let Ok((train, val, test)) = split_corpus(&corpus, &spec) else {
            return Ok(());
        };
        for user in corpus.users() {
            let mut all: Vec<&Post> = train.posts(user).iter()
                .chain(val.posts(user))
                .chain(test.posts(user))
                .collect();
            prop_assert_eq!(all.len(), corpus.post_count(user));
            let (a, b, c) = spec.sizes(corpus.post_count(user));
            prop_assert_eq!((train.post_count(user), val.post_count(user), test.post_count(user)), (a, b, c));
            let mut original: Vec<&Post> = corpus.posts(user).iter().collect();
            let key = |p: &&Post| p.tokens.clone();
            all.sort_by_key(key);
            original.sort_by_key(key);
            prop_assert_eq!(all, original);
        }
        let again = split_corpus(&corpus, &spec).unwrap();
        prop_assert_eq!(again, (train, val, test));
    }

    #[test]
    fn vocabulary_is_closed_over_frequent_tokens(corpus in corpus_strategy(), min_count in 1u64..6) {
        let vocab = build_vocab(&corpus, min_count).unwrap();
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for (_, p) in corpus.iter() {
            for t in &p.tokens {
                *counts.entry(t).or_default() += 1;
            }
        }
        for (w, c) in &counts {
            let idx = vocab.encode(w);
            if *c >= min_count {
                prop_assert_eq!(vocab.word(idx), Some(*w));
                prop_assert_eq!(vocab.count(idx), *c);
            } else {
                prop_assert_eq!(idx, UNK_INDEX);
            }
        }
        for idx in vocab.regular_indices() {
            prop_assert!(vocab.count(idx) >= min_count);
        }
    }

    #[test]
    fn distances_are_bounded_and_scale_invariant(
        vals in prop::collection::vec(-3.0f64..3.0, 24),
        dvals in prop::collection::vec(-3.0f64..3.0, 24),
        scale in 0.01f64..100.0,
    ) {
        let n = 6;
        let k = 4;
        let build = |c: f64| EmbeddingSet::from_parts(
            words(n),
            matrix(n, k, &vals) * c,
            vec!["s".into()],
            vec![matrix(n, k, &dvals) * c],
            None,
        ).unwrap();
        let (base, scaled) = (build(1.0), build(scale));
        for w in 2..n as u32 {
            for mode in [DistanceMode::Personal, DistanceMode::Deviation] {
                let (Ok(d), Ok(ds)) = (
                    word_dissimilarity(&base, "s", w, mode),
                    word_dissimilarity(&scaled, "s", w, mode),
                ) else { continue };
                prop_assert!((0.0..=2.0).contains(&d));
                prop_assert!((d - ds).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn negative_table_follows_smoothed_counts(counts in prop::collection::vec(1u64..500, 2..40)) {
        let list = words(counts.len() + 2);
        let mut all = vec![0, 0];
        all.extend(&counts);
        let vocab = Vocabulary::from_word_list(list, Some(all), 1).unwrap();
        let table = NegativeSamplingTable::new(&vocab, 0.75).unwrap();
        let z: f64 = counts.iter().map(|&c| (c as f64).powf(0.75)).sum();
        for (i, &c) in counts.iter().enumerate() {
            let p = table.probability(i as u32 + 2);
            prop_assert!((p - (c as f64).powf(0.75) / z).abs() < 1e-12);
        }
        prop_assert_eq!(table.probability(0), 0.0);
        prop_assert_eq!(table.probability(1), 0.0);
        let total: f64 = table.probabilities().map(|(_, p)| p).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn skip_gram_gradients_are_consistent(
        vals in prop::collection::vec(-1.0f64..1.0, 40),
        dvals in prop::collection::vec(-1.0f64..1.0, 40),
        cvals in prop::collection::vec(-1.0f64..1.0, 40),
        center in 2u32..10,
        context in 2u32..10,
        negs in prop::collection::vec(2u32..10, 1..5),
        lambda in 0.0f64..0.1,
    ) {
        let (n, k) = (10, 4);
        let emb = EmbeddingSet::from_parts(
            words(n),
            matrix(n, k, &vals),
            vec!["s".into()],
            vec![matrix(n, k, &dvals)],
            Some(matrix(n, k, &cvals)),
        ).unwrap();
        let g = sgns_loss_and_grads(&emb, Space::User("s"), center, context, &negs, lambda, L2Scope::Deviations).unwrap();
        prop_assert!(g.loss >= 0.0);
        prop_assert_eq!(&g.generic, &g.hidden);
        let d = emb.deviation_row(0, center);
        let dev = g.deviation.as_ref().unwrap();
        for ((gd, gh), di) in dev.iter().zip(&g.hidden).zip(d) {
            prop_assert!((gd - gh - 2.0 * lambda * di).abs() < 1e-12);
        }
        let mut seen: Vec<u32> = vec![context];
        seen.extend(negs.iter().copied());
        seen.dedup();
        for (w, _) in &g.context {
            prop_assert!(seen.contains(w));
        }
        let generic = sgns_loss_and_grads(&emb, Space::Generic, center, context, &negs, lambda, L2Scope::Deviations).unwrap();
        prop_assert!(generic.deviation.is_none());
    }
}
