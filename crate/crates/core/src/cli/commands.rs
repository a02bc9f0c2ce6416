use std::fmt::Write as _;
use std::path::Path;

use super::settings::Resolved;
use crate::analysis::{
    assign_pos_tags, category_profile, paired_permutation_test, rank_dissimilar_words,
    read_tag_observations, CategoryLexicon, Categorizer, DistanceMode,
};
use crate::attribution::{
    evaluate_attribution, heldout_posts, load_author_models, save_author_models,
    train_author_models, AttributionPlan,
};
use crate::corpus::{
    build_vocab, ingest_files, read_corpus_dir, split_corpus, write_corpus_dir, CorpusStore,
    SplitSpec, Vocabulary,
};
use crate::embeddings::{export_word2vec, load_embeddings, save_embeddings, train_embeddings};
use crate::lm::{self, build_lm, train_lm, LanguageModel, LmConfig, LmMode, Sequence};
use crate::synth::{synth_corpus, write_synth, SynthSpec};
use crate::{EmbeddingSet, Error, Result, SgnsConfig, Space};

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn load_corpus(path: &Path, threads: usize) -> Result<CorpusStore> {
    if path.is_dir() {
        read_corpus_dir(path)
    } else {
        let (c, stats) = ingest_files(&[path.to_path_buf()], threads)?;
        if stats.skipped > 0 {
            log::warn!("{}: skipped {} of {} records", path.display(), stats.skipped, stats.records);
        }
        Ok(c)
    }
}

fn split_spec(r: &Resolved) -> Result<SplitSpec> {
    let parts: Vec<f64> = r
        .list("split-fractions")
        .iter()
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("--split-fractions: `{s}` is not a number")))
        })
        .collect::<Result<_>>()?;
    if parts.len() != 3 {
        return Err(Error::Config("--split-fractions needs three values".into()));
    }
    SplitSpec::new(parts[0], parts[1], parts[2], r.get("seed")?)
}

fn emb_vocab(emb: &EmbeddingSet) -> Result<Vocabulary> {
    Vocabulary::from_word_list(emb.words().to_vec(), None, 1)
}

pub fn ingest(r: &Resolved) -> Result<()> {
    let inputs: Vec<std::path::PathBuf> = r.list("input").into_iter().map(Into::into).collect();
    if inputs.is_empty() {
        return Err(Error::Config("--input is required".into()));
    }
    let (corpus, stats) = ingest_files(&inputs, r.get("threads")?)?;
    write_corpus_dir(&corpus, &r.required_path("out")?)?;
    println!(
        "records={} skipped={} users={} posts={} tokens={}",
        stats.records,
        stats.skipped,
        corpus.num_users(),
        corpus.num_posts(),
        corpus.total_tokens()
    );
    Ok(())
}

pub fn synth(r: &Resolved) -> Result<()> {
    let spec = SynthSpec {
        users: r.get("users")?,
        topics_per_user: r.get("topics-per-user")?,
        posts_per_user: r.get("posts-per-user")?,
        vocab_size: r.get("vocab-size")?,
        planted_words: r.get("planted-words")?,
        disjoint_topics: r.flag("disjoint-topics")?,
        seed: r.get("seed")?,
        ..SynthSpec::default()
    };
    let c = synth_corpus(&spec)?;
    write_synth(&c, &r.required_path("out")?)?;
    println!(
        "users={} posts={} planted={}",
        spec.users,
        c.posts.len(),
        c.truth
            .planted
            .iter()
            .map(|p| p.word.as_str())
            .collect::<Vec<_>>()
            .join(",")
    );
    Ok(())
}

pub fn train_embeddings_cmd(r: &Resolved) -> Result<()> {
    let threads = r.get("threads")?;
    let corpus = load_corpus(&r.required_path("corpus")?, threads)?;
    let corpus = match r.str("split") {
        "all" => corpus,
        "train" => split_corpus(&corpus, &split_spec(r)?)?.0,
        other => return Err(Error::Config(format!("--split must be train or all, not `{other}`"))),
    };
    let config = SgnsConfig {
        dim: r.get("dim")?,
        window: r.get("window")?,
        initial_lr: r.get("lr")?,
        negatives: r.get("negatives")?,
        epochs: r.get("epochs")?,
        l2_lambda: r.get("l2")?,
        l2_scope: r.get("l2-scope")?,
        min_count: r.get("min-count")?,
        subsample_threshold: r.get("subsample")?,
        seed: r.get("seed")?,
        generic_only: r.flag("generic-only")?,
        post_boundary: r.flag("post-boundary")?,
        threads,
        ..SgnsConfig::default()
    };
    let vocab = build_vocab(&corpus, config.min_count)?;
    let (emb, report) = train_embeddings(&corpus, &vocab, &config)?;
    save_embeddings(&emb, &r.required_path("out")?)?;
    if let Some(p) = r.path("word2vec") {
        export_word2vec(&emb, &p)?;
    }
    println!(
        "vocab={} users={} dim={} pairs={} final_loss={:.6}",
        emb.vocab_size(),
        emb.users().len(),
        emb.dim(),
        report.total_pairs,
        report.epoch_loss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn neighbors(r: &Resolved) -> Result<()> {
    let emb = load_embeddings(&r.required_path("emb")?)?;
    let word = r.str("word");
    let idx = emb
        .word_index(word)
        .ok_or_else(|| Error::Invalid(format!("word `{word}` is not in the vocabulary")))?;
    let space = Space::parse(r.str("space"));
    let nn = emb.nearest_neighbors(space, idx, r.get("top")?)?;
    let mut out = String::from("rank,word,similarity\n");
    for (i, (w, sim)) in nn.iter().enumerate() {
        writeln!(out, "{},{},{sim:?}", i + 1, emb.words()[*w as usize]).unwrap();
    }
    print!("{out}");
    Ok(())
}

fn categorizers(r: &Resolved) -> Result<Vec<(&'static str, Box<dyn Categorizer>)>> {
    let mut out: Vec<(&'static str, Box<dyn Categorizer>)> = Vec::new();
    if let Some(p) = r.path("lexicon") {
        out.push(("lexicon", Box::new(CategoryLexicon::load(&p)?)));
    }
    if let Some(p) = r.path("tags") {
        let obs = read_tag_observations(&p)?;
        out.push(("pos", Box::new(assign_pos_tags(obs, r.get("tag-threshold")?)?)));
    }
    Ok(out)
}

pub fn analyze(r: &Resolved) -> Result<()> {
    let emb = load_embeddings(&r.required_path("emb")?)?;
    let corpus = load_corpus(&r.required_path("corpus")?, r.get("threads")?)?;
    let mut counts = vec![0u64; emb.vocab_size()];
    let index: std::collections::HashMap<&str, usize> = emb
        .words()
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i))
        .collect();
    for (_, post) in corpus.iter() {
        for t in &post.tokens {
            if let Some(&i) = index.get(t.as_str()) {
                counts[i] += 1;
            }
        }
    }
    let vocab = Vocabulary::from_word_list(emb.words().to_vec(), Some(counts), 1)?;
    let mut users = r.list("users");
    if users.is_empty() {
        users = emb.users().to_vec();
    }
    if users.is_empty() {
        return Err(Error::Invalid("embedding set has no users to analyze".into()));
    }
    let mode: DistanceMode = r.get("distance")?;
    let top_n = r.get("top-n")?;
    let min_freq = r.get("min-freq")?;
    let rankings = users
        .iter()
        .map(|u| rank_dissimilar_words(&emb, &vocab, u, top_n, min_freq, mode))
        .collect::<Result<Vec<_>>>()?;
    let out = r.required_path("out")?;
    let mut csv = String::new();
    for (i, rk) in rankings.iter().enumerate() {
        let part = rk.to_csv(emb.words());
        csv.push_str(if i == 0 { &part } else { part.split_once('\n').map_or("", |x| x.1) });
    }
    write_file(&out.join("rankings.csv"), &csv)?;
    for (name, cat) in categorizers(r)? {
        let prof = category_profile(&rankings, emb.words(), cat.as_ref(), r.get("window-frac")?)?;
        write_file(&out.join(format!("profile_{name}.csv")), &prof.to_csv())?;
    }
    println!("users={} ranked={}", rankings.len(), rankings.iter().map(|r| r.len()).sum::<usize>());
    Ok(())
}

fn lm_config(r: &Resolved) -> Result<LmConfig> {
    let c = LmConfig {
        mode: r.get::<LmMode>("mode")?,
        layers: r.get("layers")?,
        hidden_size: r.get("hidden")?,
        emb_dropout: r.get("emb-dropout")?,
        out_dropout: r.get("out-dropout")?,
        lr: r.get("lm-lr")?,
        lr_decay: r.get("lr-decay")?,
        clip: r.get("clip")?,
        seq_len: r.get("seq-len")?,
        batch_size: r.get("batch")?,
        max_epochs: r.get("max-epochs")?,
        patience: r.get("patience")?,
        seed: r.get("seed")?,
        finetune_embeddings: r.flag("finetune")?,
        threads: r.get("threads")?,
    };
    c.validate()?;
    Ok(c)
}

/// Sequences for `corpus`, conditioned on the model's user list when the
/// mode needs it.
fn sequences(lm: &LanguageModel, vocab: &Vocabulary, corpus: &CorpusStore) -> Result<Vec<Sequence>> {
    corpus
        .iter()
        .map(|(u, p)| {
            let user = if lm.mode().is_user_conditioned() {
                Some(lm.user_index(u).ok_or_else(|| Error::UnknownUser(u.to_owned()))?)
            } else {
                None
            };
            Ok(Sequence::from_tokens(vocab, user, &p.tokens))
        })
        .collect()
}

pub fn train_lm_cmd(r: &Resolved) -> Result<()> {
    let config = lm_config(r)?;
    let emb = load_embeddings(&r.required_path("emb")?)?;
    let corpus = load_corpus(&r.required_path("corpus")?, config.threads)?;
    let split = split_spec(r)?;
    let (train, val, _) = split_corpus(&corpus, &split)?;
    let vocab = emb_vocab(&emb)?;
    let users = if config.mode.is_user_conditioned() {
        corpus.user_ids()
    } else {
        Vec::new()
    };
    let mut model = build_lm(&config, &emb, &vocab, &users)?;
    model.metadata.insert("split-fractions".into(), r.str("split-fractions").to_owned());
    model.metadata.insert("split-seed".into(), split.seed.to_string());
    let train_s = sequences(&model, &vocab, &train)?;
    let val_s = sequences(&model, &vocab, &val)?;
    let log = train_lm(&mut model, &train_s, &val_s)?;
    lm::save_model(&model, &r.required_path("out")?)?;
    if let Some(p) = r.path("log") {
        let mut csv = String::from("epoch,train_nll,val_perplexity,lr,improved\n");
        for e in &log {
            writeln!(csv, "{},{:?},{:?},{:?},{}", e.epoch, e.train_nll, e.val_perplexity, e.lr, e.improved).unwrap();
        }
        write_file(&p, &csv)?;
    }
    let best = log.iter().map(|e| e.val_perplexity).fold(f64::INFINITY, f64::min);
    println!("mode={} epochs={} best_val_perplexity={best:?}", config.mode, log.len());
    Ok(())
}

pub fn eval_lm(r: &Resolved) -> Result<()> {
    let threads: usize = r.get("threads")?;
    let mut model = lm::load_model(&r.required_path("model")?)?;
    model.config.threads = threads;
    let corpus = load_corpus(&r.required_path("corpus")?, threads)?;
    let part = match r.str("split") {
        "all" => corpus,
        which => {
            let meta = |k: &str| {
                model
                    .metadata
                    .get(k)
                    .cloned()
                    .ok_or_else(|| Error::Invalid(format!("model lacks `{k}` metadata; use --split all")))
            };
            let fr: Vec<f64> = meta("split-fractions")?
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::Invalid("bad split metadata".into())))
                .collect::<Result<_>>()?;
            let seed: u64 = meta("split-seed")?
                .parse()
                .map_err(|_| Error::Invalid("bad split metadata".into()))?;
            if fr.len() != 3 {
                return Err(Error::Invalid("bad split metadata".into()));
            }
            let (tr, va, te) = split_corpus(&corpus, &SplitSpec::new(fr[0], fr[1], fr[2], seed)?)?;
            match which {
                "train" => tr,
                "validation" => va,
                "test" => te,
                other => return Err(Error::Config(format!("unknown --split `{other}`"))),
            }
        }
    };
    let vocab = Vocabulary::from_word_list(model.words().to_vec(), None, 1)?;
    let seqs = sequences(&model, &vocab, &part)?;
    let cats = categorizers(r)?;
    let (mut report, scores) = lm::evaluate(&model, &seqs, None)?;
    for (name, c) in &cats {
        let mut table = lm::per_category_perplexity_from_scores(&model, &scores, c.as_ref());
        if cats.len() > 1 {
            for t in &mut table {
                t.category = format!("{name}:{}", t.category);
            }
        }
        report.categories.extend(table);
    }
    write_file(&r.required_path("out")?, &report.to_csv())?;
    if let Some(p) = r.path("scores") {
        let mut csv = String::from("post_id,user_id,tokens,mean_nll\n");
        let mut k = std::collections::BTreeMap::<&str, usize>::new();
        for ((u, _), s) in part.iter().zip(&scores) {
            let i = k.entry(u).or_default();
            writeln!(csv, "{u}:{i},{u},{},{:?}", s.nll.len(), s.mean_nll()).unwrap();
            *i += 1;
        }
        write_file(&p, &csv)?;
    }
    println!(
        "perplexity={:?} mrr={:?} tokens={}",
        report.perplexity, report.mrr, report.tokens
    );
    Ok(())
}

pub fn attribute(r: &Resolved) -> Result<()> {
    let threads: usize = r.get("threads")?;
    let corpus = load_corpus(&r.required_path("corpus")?, threads)?;
    let mut authors = r.list("authors");
    if authors.is_empty() {
        authors = corpus.user_ids();
    }
    let plan = AttributionPlan {
        train_n: r.get("train-n")?,
        val_n: r.get("val-n")?,
        heldout_n: r.get("heldout-n")?,
        seed: r.get("seed")?,
    };
    let dir = r.required_path("models")?;
    let models = if r.flag("load-models")? {
        load_author_models(&dir)?
    } else {
        let emb = load_embeddings(&r.required_path("emb")?)?;
        let set = train_author_models(&corpus, &authors, &lm_config(r)?, &emb, &plan, threads)?;
        save_author_models(&set, &dir)?;
        set
    };
    let heldout = heldout_posts(&corpus, &authors, &plan)?;
    let result = evaluate_attribution(&heldout, &models, threads)?;
    write_file(&r.required_path("out")?, &result.to_csv())?;
    println!(
        "posts={} accuracy={:?} mrr={:?}",
        result.posts.len(),
        result.accuracy,
        result.mrr
    );
    if r.flag("shuffle-control")? {
        let ctl = result.with_shuffled_labels(r.get("seed")?);
        println!("shuffled_accuracy={:?} shuffled_mrr={:?}", ctl.accuracy, ctl.mrr);
    }
    Ok(())
}

/// Reads one score per row: either a bare number per line or a CSV with a
/// header containing `column`.
fn read_scores(path: &Path, column: &str) -> Result<(Vec<String>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
    let header_col = match lines.peek() {
        Some((_, first)) if first.split(',').any(|f| f.trim().parse::<f64>().is_err()) => {
            let cols: Vec<&str> = first.split(',').map(str::trim).collect();
            let c = cols.iter().position(|c| *c == column).ok_or_else(|| Error::Parse {
                what: "score file",
                line: 1,
                reason: format!("no column `{column}`"),
            })?;
            let id = cols.iter().position(|c| *c == "post_id");
            lines.next();
            Some((c, id))
        }
        _ => None,
    };
    let mut ids = Vec::new();
    let mut vals = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let (c, id) = header_col.unwrap_or((0, None));
        let raw = fields.get(c).copied().unwrap_or("");
        let v: f64 = raw.parse().map_err(|_| Error::Parse {
            what: "score file",
            line: i + 1,
            reason: format!("`{raw}` is not a number"),
        })?;
        if let Some(id) = id {
            ids.push(fields.get(id).copied().unwrap_or("").to_owned());
        }
        vals.push(v);
    }
    Ok((ids, vals))
}

pub fn permtest(r: &Resolved) -> Result<()> {
    let column = r.str("column");
    let (ia, a) = read_scores(&r.required_path("a")?, column)?;
    let (ib, b) = read_scores(&r.required_path("b")?, column)?;
    if !ia.is_empty() && !ib.is_empty() && ia != ib {
        return Err(Error::Invalid("score files list different post ids".into()));
    }
    let out = paired_permutation_test(&a, &b, r.get("n")?, r.get("seed")?, r.get("threads")?)?;
    println!(
        "p={:?} observed={:?} permutations={} exact={}",
        out.p_value, out.observed, out.permutations, out.exact
    );
    Ok(())
}
