//! Synthetic multi-user corpus with known structure.
//!
//! Every user writes about a few topics. Within a post, content words
//! follow user-specific successor preferences, so the same word is
//! followed by different words depending on who wrote it. Planted words
//! are shared by two users who never share a topic, each using the word
//! only inside their own topic.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStore, Post};
use crate::{util, Error, Result};

pub const FUNCTION_WORDS: [&str; 6] = ["the", "of", "and", "to", "a", "in"];

/// Candidates for planted words, in order of use.
const PLANTED_NAMES: [&str; 8] = [
    "bank", "bass", "crane", "pitch", "spring", "seal", "match", "mole",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub users: usize,
    pub topics_per_user: usize,
    pub posts_per_user: usize,
    /// Total number of distinct word types.
    pub vocab_size: usize,
    pub planted_words: usize,
    /// Give every user their own topics.
    pub disjoint_topics: bool,
    pub min_len: usize,
    pub max_len: usize,
    pub p_function: f64,
    /// Chance that a content word is one of the previous content word's
    /// preferred successors for this user.
    pub p_successor: f64,
    pub successors: usize,
    /// Chance per content slot of the planted word, inside its topic.
    pub p_planted: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            users: 4,
            topics_per_user: 2,
            posts_per_user: 800,
            vocab_size: 200,
            planted_words: 2,
            disjoint_topics: false,
            min_len: 8,
            max_len: 16,
            p_function: 0.25,
            p_successor: 0.6,
            successors: 3,
            p_planted: 0.03,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn num_topics(&self) -> usize {
        if self.disjoint_topics {
            self.users * self.topics_per_user
        } else {
            self.users.max(self.topics_per_user)
        }
    }

    fn user_topics(&self, u: usize) -> Vec<usize> {
        let t = self.num_topics();
        (0..self.topics_per_user)
            .map(|j| {
                if self.disjoint_topics {
                    u * self.topics_per_user + j
                } else {
                    (u + j) % t
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.users < 1 || self.topics_per_user < 1 || self.posts_per_user < 1 || self.vocab_size < 1 {
            return bad("synth counts must be >= 1");
        }
        if self.min_len < 1 || self.max_len < self.min_len {
            return bad("need 1 <= min_len <= max_len");
        }
        for p in [self.p_function, self.p_successor, self.p_planted] {
            if !(0.0..1.0).contains(&p) {
                return bad("synth probabilities must be in [0,1)");
            }
        }
        if self.planted_words > PLANTED_NAMES.len() {
            return bad("too many planted words");
        }
        if self.words_per_topic() < self.successors.max(2) + 1 {
            return Err(Error::Config(format!(
                "vocab_size {} leaves fewer than {} words per topic",
                self.vocab_size,
                self.successors.max(2) + 1
            )));
        }
        Ok(())
    }

    fn words_per_topic(&self) -> usize {
        self.vocab_size
            .saturating_sub(FUNCTION_WORDS.len() + self.planted_words)
            / self.num_topics()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthUser {
    pub user_id: String,
    pub topics: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedWord {
    pub word: String,
    pub users: [String; 2],
    /// Topic each of the two users places the word in.
    pub topics: [usize; 2],
}

/// Ground truth written next to the generated records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub spec: SynthSpec,
    pub function_words: Vec<String>,
    pub topics: Vec<Vec<String>>,
    pub users: Vec<SynthUser>,
    pub planted: Vec<PlantedWord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    /// In generation order: users in order, then posts.
    pub posts: Vec<Post>,
    pub truth: SynthTruth,
}

impl SynthCorpus {
    pub fn store(&self) -> CorpusStore {
        CorpusStore::from_posts(self.posts.iter().cloned())
    }
}

fn pseudo_words(n: usize, seed: u64, taken: &[&str]) -> Vec<String> {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let syll: Vec<String> = C
        .iter()
        .flat_map(|&c| V.iter().map(move |&v| format!("{}{}", c as char, v as char)))
        .collect();
    let mut out: Vec<String> = Vec::new();
    'outer: for len in 2..=4usize {
        let total = syll.len().pow(len as u32);
        for mut i in 0..total {
            let mut w = String::new();
            for _ in 0..len {
                w.push_str(&syll[i % syll.len()]);
                i /= syll.len();
            }
            if !taken.contains(&w.as_str()) {
                out.push(w);
            }
            if out.len() >= n * 4 && len >= 2 {
                break 'outer;
            }
        }
    }
    out.shuffle(&mut util::rng(seed, &[0x3d]));
    out.truncate(n);
    out
}

fn zipf_cdf(n: usize) -> Vec<f64> {
    let mut acc = 0.0;
    let mut c: Vec<f64> = (0..n)
        .map(|r| {
            acc += 1.0 / (r as f64 + 1.0).powf(0.8);
            acc
        })
        .collect();
    let z = acc;
    c.iter_mut().for_each(|x| *x /= z);
    c
}

fn draw(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    cdf.partition_point(|&x| x < u).min(cdf.len() - 1)
}

/// Generates the corpus and its ground truth. Output depends only on `spec`.
pub fn synth_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let n_topics = spec.num_topics();
    let per_topic = spec.words_per_topic();
    let planted_names: Vec<&str> = PLANTED_NAMES[..spec.planted_words].to_vec();
    let mut taken: Vec<&str> = FUNCTION_WORDS.to_vec();
    taken.extend(&planted_names);
    let pool = pseudo_words(n_topics * per_topic, spec.seed, &taken);
    let topics: Vec<Vec<String>> = pool.chunks(per_topic).map(<[String]>::to_vec).collect();
    let user_ids: Vec<String> = (0..spec.users).map(|u| format!("u{u:02}")).collect();
    let user_topics: Vec<Vec<usize>> = (0..spec.users).map(|u| spec.user_topics(u)).collect();

    // Planted words go to user pairs with no topic in common.
    let mut planted = Vec::new();
    let mut used = vec![false; spec.users];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for a in 0..spec.users {
        for b in a + 1..spec.users {
            if user_topics[a].iter().all(|t| !user_topics[b].contains(t)) {
                pairs.push((a, b));
            }
        }
    }
    let mut remaining = pairs;
    for name in &planted_names {
        remaining.sort_by_key(|&(a, b)| (used[a] as u8 + used[b] as u8, a, b));
        let Some(&(a, b)) = remaining.first() else {
            break;
        };
        remaining.remove(0);
        used[a] = true;
        used[b] = true;
        let k = planted.len();
        let ta = user_topics[a][k % user_topics[a].len()];
        let tb = user_topics[b][k % user_topics[b].len()];
        planted.push(PlantedWord {
            word: (*name).to_owned(),
            users: [user_ids[a].clone(), user_ids[b].clone()],
            topics: [ta, tb],
        });
    }

    let topic_cdf = zipf_cdf(per_topic);
    let func_cdf = zipf_cdf(FUNCTION_WORDS.len());
    let mut posts = Vec::with_capacity(spec.users * spec.posts_per_user);
    for (u, uid) in user_ids.iter().enumerate() {
        let mut rng = util::rng(spec.seed, &[0x5e7, u as u64]);
        let my_planted: Vec<(usize, &str)> = planted
            .iter()
            .flat_map(|p| {
                (0..2)
                    .filter(|&i| p.users[i] == *uid)
                    .map(|i| (p.topics[i], p.word.as_str()))
                    .collect::<Vec<_>>()
            })
            .collect();
        for _ in 0..spec.posts_per_user {
            let topic = *user_topics[u].choose(&mut rng).expect("topics");
            let words = &topics[topic];
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let mut prev: Option<String> = None;
            let mut toks: Vec<String> = Vec::with_capacity(len);
            for i in 0..len {
                if i > 0 && rng.gen::<f64>() < spec.p_function {
                    toks.push(FUNCTION_WORDS[draw(&func_cdf, &mut rng)].to_owned());
                    continue;
                }
                let plant = my_planted.iter().find(|(t, _)| *t == topic).map(|p| p.1);
                let w = match plant {
                    Some(p) if rng.gen::<f64>() < spec.p_planted => p.to_owned(),
                    _ => match &prev {
                        Some(p) if rng.gen::<f64>() < spec.p_successor => {
                            let succ = successors(spec, u, p, words);
                            (*succ.choose(&mut rng).expect("successors")).clone()
                        }
                        _ => words[draw(&topic_cdf, &mut rng)].clone(),
                    },
                };
                prev = Some(w.clone());
                toks.push(w);
            }
            let mut post = Post::from_tokens(uid.clone(), toks);
            post.subreddit = Some(format!("topic{topic}"));
            posts.push(post);
        }
    }
    Ok(SynthCorpus {
        posts,
        truth: SynthTruth {
            spec: spec.clone(),
            function_words: FUNCTION_WORDS.iter().map(|s| s.to_string()).collect(),
            topics,
            users: user_ids
                .into_iter()
                .zip(user_topics)
                .map(|(user_id, topics)| SynthUser { user_id, topics })
                .collect(),
            planted,
        },
    })
}

/// The preferred successors of `word` for user `u` within a topic.
fn successors<'a>(spec: &SynthSpec, u: usize, word: &str, topic_words: &'a [String]) -> Vec<&'a String> {
    let mut rng = util::rng(spec.seed, &[0x9ef, u as u64, util::str_tag(word)]);
    let cands: Vec<&String> = topic_words.iter().filter(|w| *w != word).collect();
    cands
        .choose_multiple(&mut rng, spec.successors.min(cands.len()))
        .copied()
        .collect()
}

#[derive(Serialize)]
struct RecordOut<'a> {
    user_id: &'a str,
    text: String,
    subreddit: Option<&'a str>,
}

/// Writes `records.jsonl` and `truth.json` into `dir`.
pub fn write_synth(corpus: &SynthCorpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("records.jsonl");
    let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for p in &corpus.posts {
        let rec = RecordOut {
            user_id: &p.user_id,
            text: p.tokens.join(" "),
            subreddit: p.subreddit.as_deref(),
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let tpath = dir.join("truth.json");
    let json = serde_json::to_string_pretty(&corpus.truth).expect("truth serializes");
    std::fs::write(&tpath, json + "\n").map_err(|e| Error::io(&tpath, e))
}
