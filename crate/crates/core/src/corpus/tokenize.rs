use std::sync::OnceLock;

use regex::Regex;

/// Bumped whenever tokenization output changes for any input.
pub const TOKENIZER_VERSION: &str = "pwe-tok-1";

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}']+|[^\s\p{L}\p{N}']").expect("static regex"))
}

/// Lowercases `text` and splits it into word and punctuation tokens.
///
/// Runs of letters, digits and apostrophes form one token; every other
/// non-whitespace character is a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    token_re()
        .find_iter(&lower)
        .map(|m| m.as_str().to_owned())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_is_split() {
        assert_eq!(tokenize("Hello, world!"), vec!["hello", ",", "world", "!"]);
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \t\n ").is_empty());
    }

    #[test]
    fn apostrophes_stay_in_words() {
        assert_eq!(tokenize("don't stop"), vec!["don't", "stop"]);
    }

    #[test]
    fn repeated_punctuation_gives_one_token_each() {
        assert_eq!(tokenize("wait...what?!"), vec!["wait", ".", ".", ".", "what", "?", "!"]);
        assert_eq!(tokenize("R2D2 ÉTÉ"), vec!["r2d2", "été"]);
    }
}
