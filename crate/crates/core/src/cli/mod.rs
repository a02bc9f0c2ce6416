//! Command-line front end. See `pwe --help`.

mod commands;
mod settings;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Command;

pub use settings::{parse_config_file, Resolved, Setting};

use crate::Error;

type Handler = fn(&Resolved) -> crate::Result<()>;

fn table() -> Vec<(&'static str, &'static str, &'static [Setting], Handler)> {
    vec![
        ("ingest", "Tokenize JSON-lines records into a corpus directory", settings::INGEST, commands::ingest),
        ("train-embeddings", "Train generic and per-user skip-gram embeddings", settings::TRAIN_EMBEDDINGS, commands::train_embeddings_cmd),
        ("neighbors", "Nearest neighbors of a word in the generic or a user space", settings::NEIGHBORS, commands::neighbors),
        ("analyze", "Per-user dissimilarity rankings and category profiles", settings::ANALYZE, commands::analyze),
        ("train-lm", "Train a language model on embedding inputs", settings::TRAIN_LM, commands::train_lm_cmd),
        ("eval-lm", "Perplexity, MRR and per-category perplexity of a model", settings::EVAL_LM, commands::eval_lm),
        ("attribute", "Per-author models and held-out post attribution", settings::ATTRIBUTE, commands::attribute),
        ("permtest", "Paired sign-flip permutation test on two score files", settings::PERMTEST, commands::permtest),
        ("synth", "Generate a synthetic multi-user corpus with ground truth", settings::SYNTH, commands::synth),
    ]
}

fn command() -> Command {
    let mut cmd = Command::new("pwe")
        .about("Personalized word embeddings and embedding-conditioned language models")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .after_help(
            "Settings come from flags, then --config (key = value lines), then PWE_* \
             environment variables, then defaults.\nExit codes: 0 success, 1 usage error, 2 runtime failure.",
        );
    for (name, about, s, _) in table() {
        cmd = cmd.subcommand(settings::add_args(Command::new(name).about(about), s));
    }
    cmd
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let (_, _, s, handler) = table()
        .into_iter()
        .find(|t| t.0 == name)
        .expect("registered subcommand");
    let env = |k: &str| std::env::var(k).ok();
    let resolved = match settings::resolve(name, s, sub, &env) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    eprint!("{}", resolved.echo());
    match handler(&resolved) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Parse { what: "config file", .. } => 1,
        _ => 2,
    }
}
