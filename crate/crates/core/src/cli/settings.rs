//! Settings tables and their resolution: flags, then the config file, then
//! `PWE_*` environment variables, then built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Value,
    /// `--flag` alone means true; `--flag false` is also accepted.
    Bool,
    /// May be given several times; comma-separated in the file and env.
    List,
}

#[derive(Clone, Copy, Debug)]
pub struct Setting {
    pub key: &'static str,
    pub kind: Kind,
    /// `None` marks a required setting.
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn val(key: &'static str, default: Option<&'static str>, help: &'static str) -> Setting {
    Setting {
        key,
        kind: Kind::Value,
        default,
        help,
    }
}

const fn flag(key: &'static str, default: &'static str, help: &'static str) -> Setting {
    Setting {
        key,
        kind: Kind::Bool,
        default: Some(default),
        help,
    }
}

pub const COMMON: &[Setting] = &[
    val("seed", Some("1"), "random seed"),
    val("threads", Some("1"), "worker threads (1 = sequential)"),
];

const SPLIT: Setting = val(
    "split-fractions",
    Some("0.8,0.1,0.1"),
    "per-user train,validation,test fractions",
);

pub const INGEST: &[Setting] = &[
    Setting {
        key: "input",
        kind: Kind::List,
        default: None,
        help: "JSON-lines record file (repeatable)",
    },
    val("out", None, "output corpus directory"),
];

pub const SYNTH: &[Setting] = &[
    val("out", None, "output directory for records.jsonl and truth.json"),
    val("users", Some("4"), "number of users"),
    val("topics-per-user", Some("2"), "topics per user"),
    val("posts-per-user", Some("800"), "posts per user"),
    val("vocab-size", Some("200"), "number of word types"),
    val("planted-words", Some("2"), "planted words shared by user pairs"),
    flag("disjoint-topics", "false", "give every user their own topics"),
];

pub const TRAIN_EMBEDDINGS: &[Setting] = &[
    val("corpus", None, "corpus directory or JSON-lines file"),
    val("out", None, "output embedding file"),
    val("dim", Some("100"), "embedding dimension"),
    val("window", Some("5"), "maximum context window"),
    val("lr", Some("0.025"), "initial learning rate"),
    val("negatives", Some("5"), "negative samples per pair"),
    val("epochs", Some("5"), "training epochs"),
    val("l2", Some("0.0001"), "L2 penalty on touched rows"),
    val("l2-scope", Some("deviations"), "deviations | all"),
    val("min-count", Some("5"), "vocabulary frequency cutoff"),
    val("subsample", Some("0"), "frequent-word subsampling threshold (0 = off)"),
    flag("generic-only", "false", "train generic vectors only"),
    flag("post-boundary", "true", "start every post with </s>"),
    val("split", Some("train"), "train | all: which posts to train on"),
    SPLIT,
    val("word2vec", Some(""), "also export generic vectors in word2vec text format"),
];

pub const NEIGHBORS: &[Setting] = &[
    val("emb", None, "embedding file"),
    val("word", None, "query word"),
    val("space", Some("generic"), "generic or a user id"),
    val("top", Some("10"), "number of neighbors"),
];

const CATEGORIES: [Setting; 3] = [
    val("lexicon", Some(""), "category lexicon file"),
    val("tags", Some(""), "word<TAB>tag observation file"),
    val("tag-threshold", Some("0.95"), "dominant-tag share needed to assign a tag"),
];

pub const ANALYZE: &[Setting] = &[
    val("emb", None, "embedding file"),
    val("corpus", None, "corpus used for word frequencies"),
    val("out", None, "output directory"),
    val("top-n", Some("5000"), "most dissimilar words kept per user"),
    val("min-freq", Some("5"), "minimum corpus frequency"),
    val("distance", Some("personal"), "personal | deviation"),
    val("users", Some(""), "comma-separated users (empty = all)"),
    CATEGORIES[0],
    CATEGORIES[1],
    CATEGORIES[2],
    val("window-frac", Some("0.2"), "sliding window as a fraction of the ranking"),
];

const LM: [Setting; 13] = [
    val(
        "mode",
        Some("personalized"),
        "generic | generic-double | single-user-vector | personalized",
    ),
    val("layers", Some("1"), "recurrent layers"),
    val("hidden", Some("256"), "hidden size"),
    val("emb-dropout", Some("0.1"), "word-type dropout probability"),
    val("out-dropout", Some("0.3"), "output dropout probability"),
    val("lm-lr", Some("20"), "learning rate"),
    val("lr-decay", Some("0.5"), "learning-rate factor when validation stalls"),
    val("clip", Some("0.25"), "gradient norm clip"),
    val("seq-len", Some("35"), "truncated backprop length"),
    val("batch", Some("20"), "batch size"),
    val("max-epochs", Some("10"), "maximum epochs"),
    val("patience", Some("2"), "epochs without improvement before stopping"),
    flag("finetune", "false", "also train the generic input embeddings"),
];

pub const TRAIN_LM: &[Setting] = &[
    val("emb", None, "embedding file"),
    val("corpus", None, "corpus directory or JSON-lines file"),
    val("out", None, "output model file"),
    LM[0],
    LM[1],
    LM[2],
    LM[3],
    LM[4],
    LM[5],
    LM[6],
    LM[7],
    LM[8],
    LM[9],
    LM[10],
    LM[11],
    LM[12],
    SPLIT,
    val("log", Some(""), "per-epoch CSV log"),
];

pub const EVAL_LM: &[Setting] = &[
    val("model", None, "model file"),
    val("corpus", None, "corpus directory or JSON-lines file"),
    val("out", None, "report CSV"),
    val("split", Some("test"), "train | validation | test | all"),
    CATEGORIES[0],
    CATEGORIES[1],
    CATEGORIES[2],
    val("scores", Some(""), "per-post score CSV"),
];

pub const ATTRIBUTE: &[Setting] = &[
    val("emb", None, "embedding file"),
    val("corpus", None, "corpus directory or JSON-lines file"),
    val("models", None, "directory for per-author models"),
    val("out", None, "attribution CSV"),
    val("authors", Some(""), "comma-separated authors (empty = all)"),
    val("train-n", Some("500"), "training posts per author"),
    val("val-n", Some("100"), "validation posts per author"),
    val("heldout-n", Some("200"), "held-out posts per author"),
    flag("load-models", "false", "reuse models already in --models"),
    flag("shuffle-control", "false", "also report accuracy with shuffled labels"),
    LM[0],
    LM[1],
    LM[2],
    LM[3],
    LM[4],
    LM[5],
    LM[6],
    LM[7],
    LM[8],
    LM[9],
    LM[10],
    LM[11],
    LM[12],
];

pub const PERMTEST: &[Setting] = &[
    val("a", None, "first score file"),
    val("b", None, "second score file"),
    val("n", Some("10000"), "number of permutations"),
    val("column", Some("mean_nll"), "score column when the files have a header"),
];

pub fn add_args(mut cmd: Command, settings: &[Setting]) -> Command {
    for s in COMMON.iter().chain(settings) {
        let mut help = s.help.to_owned();
        match s.default {
            Some(d) if !d.is_empty() => help.push_str(&format!(" [default: {d}]")),
            None => help.push_str(" (required)"),
            _ => {}
        }
        let arg = Arg::new(s.key).long(s.key).help(help).value_name("VALUE");
        let arg = match s.kind {
            Kind::Value => arg.num_args(1),
            Kind::Bool => arg
                .num_args(0..=1)
                .require_equals(false)
                .default_missing_value("true")
                .value_parser(clap::builder::BoolishValueParser::new()),
            Kind::List => arg.num_args(1).action(ArgAction::Append),
        };
        cmd = cmd.arg(arg);
    }
    cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key = value settings file"),
    )
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            what: "config file",
            line: i + 1,
            reason: format!("expected `key = value`, got `{raw}`"),
        })?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Error::Parse {
                what: "config file",
                line: i + 1,
                reason: "empty key".into(),
            });
        }
        out.insert(key, v.trim().to_owned());
    }
    Ok(out)
}

pub fn env_key(key: &str) -> String {
    format!("PWE_{}", key.to_uppercase().replace('-', "_"))
}

/// One effective value per setting.
#[derive(Clone, Debug)]
pub struct Resolved {
    command: String,
    order: Vec<&'static str>,
    values: BTreeMap<&'static str, String>,
}

pub fn resolve(
    command: &str,
    settings: &[Setting],
    matches: &ArgMatches,
    env: &dyn Fn(&str) -> Option<String>,
) -> Result<Resolved> {
    let file = match matches.get_one::<String>("config") {
        Some(p) => {
            let path = Path::new(p);
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_config_file(&text)?
        }
        None => BTreeMap::new(),
    };
    let all: Vec<&Setting> = COMMON.iter().chain(settings).collect();
    for k in file.keys() {
        if !all.iter().any(|s| s.key == k) {
            log::warn!("config file key `{k}` is not used by `{command}`");
        }
    }
    let mut values = BTreeMap::new();
    for s in &all {
        let from_flag = (matches.value_source(s.key) == Some(ValueSource::CommandLine)).then(|| {
            match s.kind {
                Kind::Bool => matches.get_flag_value(s.key),
                Kind::Value => matches.get_one::<String>(s.key).cloned().unwrap_or_default(),
                Kind::List => matches
                    .get_many::<String>(s.key)
                    .map(|v| v.cloned().collect::<Vec<_>>().join(","))
                    .unwrap_or_default(),
            }
        });
        let v = from_flag
            .or_else(|| file.get(s.key).cloned())
            .or_else(|| env(&env_key(s.key)))
            .or_else(|| s.default.map(str::to_owned));
        match v {
            Some(v) => {
                values.insert(s.key, v);
            }
            None => {
                return Err(Error::Config(format!("missing required setting --{}", s.key)));
            }
        }
    }
    Ok(Resolved {
        command: command.to_owned(),
        order: all.iter().map(|s| s.key).collect(),
        values,
    })
}

trait FlagValue {
    fn get_flag_value(&self, key: &str) -> String;
}

impl FlagValue for ArgMatches {
    fn get_flag_value(&self, key: &str) -> String {
        self.get_one::<bool>(key).copied().unwrap_or(false).to_string()
    }
}

impl Resolved {
    pub fn str(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("setting `{key}` not declared for this command"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.str(key);
        raw.parse()
            .map_err(|e| Error::Config(format!("--{key} `{raw}`: {e}")))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.str(key).to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" | "" => Ok(false),
            other => Err(Error::Config(format!("--{key}: `{other}` is not a boolean"))),
        }
    }

    /// `None` for an empty value.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.str(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn required_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| Error::Config(format!("--{key} must not be empty")))
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        self.str(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect()
    }

    /// `key = value` lines that can be fed back through `--config`.
    pub fn echo(&self) -> String {
        let mut s = format!("# pwe {} effective configuration\n", self.command);
        for k in &self.order {
            writeln!(s, "{k} = {}", self.values[k]).unwrap();
        }
        s
    }
}
