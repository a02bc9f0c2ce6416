use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::tokenize::{tokenize, TOKENIZER_VERSION};
use crate::util::{self, str_tag};
use crate::{par, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Post {
    pub user_id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub subreddit: Option<String>,
}

impl Post {
    /// Creates a post and tokenizes its text.
    pub fn new(user_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Post {
            user_id: user_id.into(),
            text,
            tokens,
            subreddit: None,
        }
    }

    pub fn from_tokens(user_id: impl Into<String>, tokens: Vec<String>) -> Self {
        Post {
            user_id: user_id.into(),
            text: tokens.join(" "),
            tokens,
            subreddit: None,
        }
    }
}

/// Posts grouped by author. Users iterate in sorted id order, posts in
/// insertion order. Immutable once built.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusStore {
    users: BTreeMap<String, Vec<Post>>,
    total_tokens: usize,
}

impl CorpusStore {
    pub fn from_posts(posts: impl IntoIterator<Item = Post>) -> Self {
        let mut users: BTreeMap<String, Vec<Post>> = BTreeMap::new();
        let mut total_tokens = 0;
        for post in posts {
            total_tokens += post.tokens.len();
            users.entry(post.user_id.clone()).or_default().push(post);
        }
        CorpusStore {
            users,
            total_tokens,
        }
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.users.keys().map(String::as_str)
    }

    pub fn user_ids(&self) -> Vec<String> {
        self.users.keys().cloned().collect()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn contains_user(&self, user: &str) -> bool {
        self.users.contains_key(user)
    }

    pub fn posts(&self, user: &str) -> &[Post] {
        self.users.get(user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn post_count(&self, user: &str) -> usize {
        self.posts(user).len()
    }

    pub fn num_posts(&self) -> usize {
        self.users.values().map(Vec::len).sum()
    }

    pub fn total_tokens(&self) -> usize {
        self.total_tokens
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// All `(user_id, post)` pairs in deterministic order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Post)> {
        self.users
            .iter()
            .flat_map(|(u, posts)| posts.iter().map(move |p| (u.as_str(), p)))
    }

    /// Keeps only the listed users (unknown ids are an error).
    pub fn restrict_to(&self, users: &[String]) -> Result<CorpusStore> {
        let mut posts = Vec::new();
        for u in users {
            let p = self
                .users
                .get(u)
                .ok_or_else(|| Error::UnknownUser(u.clone()))?;
            posts.extend(p.iter().cloned());
        }
        Ok(CorpusStore::from_posts(posts))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub records: usize,
    pub skipped: usize,
}

#[derive(Deserialize)]
struct Record {
    user_id: Option<String>,
    text: Option<String>,
    #[serde(default)]
    subreddit: Option<String>,
}

/// Reads line-delimited JSON records (`user_id`, `text`, optional
/// `subreddit`). Malformed records, and records whose text has no tokens,
/// are skipped and counted. Blank lines are ignored.
pub fn ingest_posts<R: BufRead>(source: R, origin: &Path) -> Result<(CorpusStore, IngestStats)> {
    let (posts, stats) = parse_records(source, origin)?;
    Ok((CorpusStore::from_posts(posts), stats))
}

fn parse_records<R: BufRead>(source: R, origin: &Path) -> Result<(Vec<Post>, IngestStats)> {
    let mut posts = Vec::new();
    let mut stats = IngestStats::default();
    for (lineno, line) in source.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        stats.records += 1;
        let rec: Record = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{}:{}: skipping malformed record: {e}", origin.display(), lineno + 1);
                stats.skipped += 1;
                continue;
            }
        };
        match (rec.user_id, rec.text) {
            (Some(user), Some(text)) if !user.is_empty() => {
                let mut post = Post::new(user, text);
                if post.tokens.is_empty() {
                    stats.skipped += 1;
                    continue;
                }
                post.subreddit = rec.subreddit;
                posts.push(post);
            }
            _ => {
                log::warn!(
                    "{}:{}: skipping record without user_id/text",
                    origin.display(),
                    lineno + 1
                );
                stats.skipped += 1;
            }
        }
    }
    Ok((posts, stats))
}

/// Ingests several record files, one worker per file when `threads > 1`.
/// Posts are merged in the order the paths are given.
pub fn ingest_files(paths: &[PathBuf], threads: usize) -> Result<(CorpusStore, IngestStats)> {
    let parsed = par::map(threads, paths, |path| {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        parse_records(BufReader::new(file), path)
    });
    let mut posts = Vec::new();
    let mut stats = IngestStats::default();
    for res in parsed {
        let (p, s) = res?;
        posts.extend(p);
        stats.records += s.records;
        stats.skipped += s.skipped;
    }
    if stats.skipped > 0 {
        log::warn!("skipped {} of {} records", stats.skipped, stats.records);
    }
    Ok((CorpusStore::from_posts(posts), stats))
}

/// Train/validation/test ratios plus the shuffle seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, validation: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            train,
            validation,
            test,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.train, self.validation, self.test] {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!("split ratio {r} outside (0,1)")));
            }
        }
        let sum = self.train + self.validation + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Per-split sizes for `n` posts. Validation and test are floored and
    /// the remainder goes to training.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let floor = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
        let val = floor(self.validation);
        let test = floor(self.test);
        (n - val - test, val, test)
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

/// Splits every user's posts after a per-user seeded shuffle. Within each
/// split, posts keep their original relative order.
pub fn split_corpus(
    corpus: &CorpusStore,
    spec: &SplitSpec,
) -> Result<(CorpusStore, CorpusStore, CorpusStore)> {
    spec.validate()?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for user in corpus.users() {
        let posts = corpus.posts(user);
        let n = posts.len();
        let (n_train, n_val, n_test) = spec.sizes(n);
        if n_train == 0 || n_val == 0 || n_test == 0 {
            return Err(Error::InsufficientPosts {
                user: user.to_owned(),
                available: n,
                required: min_posts_for(spec),
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut util::rng(spec.seed, &[str_tag(user), 0x5b11]));
        let mut assign = vec![0u8; n];
        for &i in &order[..n_val] {
            assign[i] = 1;
        }
        for &i in &order[n_val..n_val + n_test] {
            assign[i] = 2;
        }
        for (post, a) in posts.iter().zip(assign) {
            match a {
                0 => train.push(post.clone()),
                1 => val.push(post.clone()),
                _ => test.push(post.clone()),
            }
        }
    }
    Ok((
        CorpusStore::from_posts(train),
        CorpusStore::from_posts(val),
        CorpusStore::from_posts(test),
    ))
}

fn min_posts_for(spec: &SplitSpec) -> usize {
    (1..)
        .find(|&n| {
            let (a, b, c) = spec.sizes(n);
            a > 0 && b > 0 && c > 0
        })
        .unwrap_or(usize::MAX)
}

/// Seeded sample of `n` of one user's posts, without replacement.
pub fn sample_posts(corpus: &CorpusStore, user: &str, n: usize, seed: u64) -> Result<CorpusStore> {
    if !corpus.contains_user(user) {
        return Err(Error::UnknownUser(user.to_owned()));
    }
    let posts = corpus.posts(user);
    if n > posts.len() {
        return Err(Error::InsufficientPosts {
            user: user.to_owned(),
            available: posts.len(),
            required: n,
        });
    }
    let mut order: Vec<usize> = (0..posts.len()).collect();
    order.shuffle(&mut util::rng(seed, &[str_tag(user), 0x5a3b]));
    Ok(CorpusStore::from_posts(
        order[..n].iter().map(|&i| posts[i].clone()),
    ))
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub(crate) struct Manifest {
    pub tokenizer_version: String,
    pub total_tokens: usize,
    pub users: Vec<ManifestUser>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub(crate) struct ManifestUser {
    pub user_id: String,
    pub file: String,
    pub posts: usize,
    pub tokens: usize,
}

const MANIFEST: &str = "manifest.json";

/// Writes `manifest.json` and `users/uNNNNN.tok` (one post per line, tokens
/// separated by single spaces) under `dir`.
pub fn write_corpus_dir(corpus: &CorpusStore, dir: &Path) -> Result<()> {
    let users_dir = dir.join("users");
    fs::create_dir_all(&users_dir).map_err(|e| Error::io(&users_dir, e))?;
    let mut manifest = Manifest {
        tokenizer_version: TOKENIZER_VERSION.to_owned(),
        total_tokens: corpus.total_tokens(),
        users: Vec::new(),
    };
    for (i, user) in corpus.users().enumerate() {
        let file = format!("u{i:05}.tok");
        let path = users_dir.join(&file);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        let mut tokens = 0;
        for post in corpus.posts(user) {
            tokens += post.tokens.len();
            writeln!(w, "{}", post.tokens.join(" ")).map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        manifest.users.push(ManifestUser {
            user_id: user.to_owned(),
            file: format!("users/{file}"),
            posts: corpus.post_count(user),
            tokens,
        });
    }
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_corpus_dir(dir: &Path) -> Result<CorpusStore> {
    let path = dir.join(MANIFEST);
    let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&raw).map_err(|e| Error::corrupt(&path, e.to_string()))?;
    if manifest.tokenizer_version != TOKENIZER_VERSION {
        return Err(Error::corrupt(
            &path,
            format!(
                "tokenizer version {} (expected {TOKENIZER_VERSION})",
                manifest.tokenizer_version
            ),
        ));
    }
    let mut posts = Vec::new();
    for entry in &manifest.users {
        let upath = dir.join(&entry.file);
        let f = File::open(&upath).map_err(|e| Error::io(&upath, e))?;
        let mut n = 0;
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(&upath, e))?;
            let tokens: Vec<String> = line.split(' ').filter(|t| !t.is_empty()).map(str::to_owned).collect();
            posts.push(Post::from_tokens(entry.user_id.clone(), tokens));
            n += 1;
        }
        if n != entry.posts {
            return Err(Error::corrupt(
                &upath,
                format!("{n} posts, manifest says {}", entry.posts),
            ));
        }
    }
    Ok(CorpusStore::from_posts(posts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user_corpus(user: &str, n: usize) -> Vec<Post> {
        (0..n).map(|i| Post::new(user, format!("post number {i}"))).collect()
    }

    #[test]
    fn grouping_by_user() {
        let input = r#"{"user_id":"A","text":"one"}
{"user_id":"A","text":"two"}
{"user_id":"B","text":"three"}
"#;
        let (c, stats) = ingest_posts(input.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(c.post_count("A"), 2);
        assert_eq!(c.post_count("B"), 1);
        assert_eq!(stats, IngestStats { records: 3, skipped: 0 });
    }

    #[test]
    fn empty_source() {
        let (c, stats) = ingest_posts("".as_bytes(), Path::new("mem")).unwrap();
        assert!(c.is_empty());
        assert_eq!(stats.skipped, 0);
    }

    #[test]
    fn malformed_record_is_skipped() {
        let mut lines: Vec<String> = (0..5)
            .map(|i| format!(r#"{{"user_id":"u{i}","text":"hi there"}}"#))
            .collect();
        lines.insert(2, r#"{"user_id":"u9"}"#.to_owned());
        let (c, stats) = ingest_posts(lines.join("\n").as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(c.num_posts(), 5);
        assert_eq!(stats.skipped, 1);
        let (c, stats) = ingest_posts("not json\n".as_bytes(), Path::new("mem")).unwrap();
        assert_eq!((c.num_posts(), stats.skipped), (0, 1));
    }

    #[test]
    fn split_sizes_80_10_10() {
        let c = CorpusStore::from_posts(user_corpus("a", 1000).into_iter().chain(user_corpus("b", 1000)));
        let (tr, va, te) = split_corpus(&c, &SplitSpec::default()).unwrap();
        for u in ["a", "b"] {
            assert_eq!((tr.post_count(u), va.post_count(u), te.post_count(u)), (800, 100, 100));
        }
    }

    #[test]
    fn split_half_quarter_quarter() {
        let c = CorpusStore::from_posts(user_corpus("a", 100));
        let spec = SplitSpec::new(0.5, 0.25, 0.25, 3).unwrap();
        let (tr, va, te) = split_corpus(&c, &spec).unwrap();
        assert_eq!((tr.num_posts(), va.num_posts(), te.num_posts()), (50, 25, 25));
    }

    #[test]
    fn remainder_goes_to_train() {
        let spec = SplitSpec::default();
        assert_eq!(spec.sizes(15), (13, 1, 1));
        assert_eq!(spec.sizes(10), (8, 1, 1));
    }

    #[test]
    fn split_too_small_names_user() {
        let c = CorpusStore::from_posts(user_corpus("tiny", 5));
        match split_corpus(&c, &SplitSpec::default()) {
            Err(Error::InsufficientPosts { user, required, .. }) => {
                assert_eq!(user, "tiny");
                assert_eq!(required, 10);
            }
            other => panic!("expected InsufficientPosts, got {other:?}"),
        }
    }

    #[test]
    fn split_is_deterministic() {
        let c = CorpusStore::from_posts(user_corpus("a", 57));
        let spec = SplitSpec { seed: 11, ..SplitSpec::default() };
        assert_eq!(split_corpus(&c, &spec).unwrap(), split_corpus(&c, &spec).unwrap());
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(SplitSpec::new(0.8, 0.1, 0.2, 0).is_err());
        assert!(SplitSpec::new(1.0, 0.0, 0.0, 0).is_err());
    }

    #[test]
    fn sampling() {
        let c = CorpusStore::from_posts(user_corpus("a", 20));
        let all = sample_posts(&c, "a", 20, 1).unwrap();
        assert_eq!(all.num_posts(), 20);
        assert_ne!(all.posts("a"), c.posts("a"));
        assert!(sample_posts(&c, "a", 0, 1).unwrap().is_empty());
        assert_eq!(sample_posts(&c, "a", 7, 5).unwrap(), sample_posts(&c, "a", 7, 5).unwrap());
        assert!(matches!(sample_posts(&c, "a", 21, 1), Err(Error::InsufficientPosts { .. })));
        assert!(matches!(sample_posts(&c, "zz", 1, 1), Err(Error::UnknownUser(_))));
    }

    #[test]
    fn corpus_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = CorpusStore::from_posts(vec![
            Post::new("bob", "Hello, world!"),
            Post::new("alice", "don't stop"),
            Post::new("bob", "again"),
        ]);
        write_corpus_dir(&c, dir.path()).unwrap();
        let back = read_corpus_dir(dir.path()).unwrap();
        assert_eq!(back.user_ids(), vec!["alice", "bob"]);
        assert_eq!(back.posts("bob")[0].tokens, vec!["hello", ",", "world", "!"]);
        assert_eq!(back.total_tokens(), c.total_tokens());
    }
}
