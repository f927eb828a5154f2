use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use rand::Rng;
use regex::Regex;

use crate::error::{Error, Result};
use crate::rng;

const BUILTIN: &str = include_str!("../../data/gender_pairs.txt");

/// Male/female word pairs. Lookups go both ways.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenderLexicon {
    pairs: Vec<(String, String)>,
    counterpart: HashMap<String, String>,
}

impl GenderLexicon {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut counterpart = HashMap::with_capacity(pairs.len() * 2);
        for (m, f) in &pairs {
            for w in [m, f] {
                if w.is_empty() || w.chars().any(|c| !c.is_ascii_lowercase()) {
                    return Err(Error::invalid(format!("lexicon entry `{w}` must be a lowercase word")));
                }
            }
            if m == f {
                return Err(Error::invalid(format!("lexicon pair maps `{m}` to itself")));
            }
            for (a, b) in [(m, f), (f, m)] {
                if counterpart.insert(a.clone(), b.clone()).is_some() {
                    return Err(Error::invalid(format!("lexicon word `{a}` appears twice")));
                }
            }
        }
        Ok(GenderLexicon { pairs, counterpart })
    }

    /// Two whitespace-separated columns per line; `#` comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let [m, f] = cols.as_slice() else {
                return Err(Error::invalid(format!("lexicon line {}: expected two columns", n + 1)));
            };
            pairs.push((m.to_string(), f.to_string()));
        }
        GenderLexicon::new(pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GenderLexicon::parse(&text)
    }

    pub fn builtin() -> Self {
        GenderLexicon::parse(BUILTIN).expect("shipped lexicon is valid")
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn counterpart(&self, lowercase_word: &str) -> Option<&str> {
        self.counterpart.get(lowercase_word).map(String::as_str)
    }

    pub fn contains(&self, lowercase_word: &str) -> bool {
        self.counterpart.contains_key(lowercase_word)
    }
}

static WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z]+").unwrap());

/// Replaces every lexicon word with its counterpart, keeping lower-case,
/// Initial-capital and ALL-CAPS spellings.
pub fn swap_all(text: &str, lexicon: &GenderLexicon) -> String {
    WORD.replace_all(text, |caps: &regex::Captures<'_>| {
        let word = &caps[0];
        match lexicon.counterpart(&word.to_ascii_lowercase()) {
            Some(other) => recase(word, other),
            None => word.to_string(),
        }
    })
    .into_owned()
}

fn recase(original: &str, replacement: &str) -> String {
    let mut chars = original.chars();
    let first_upper = chars.next().is_some_and(|c| c.is_ascii_uppercase());
    let rest_upper = original.len() > 1 && original.chars().skip(1).all(|c| c.is_ascii_uppercase());
    if first_upper && rest_upper {
        replacement.to_ascii_uppercase()
    } else if first_upper {
        let mut out = replacement.to_string();
        out[..1].make_ascii_uppercase();
        out
    } else {
        replacement.to_string()
    }
}

/// One Bernoulli draw for the whole text: with `probability` every lexicon
/// word flips, otherwise the text is returned as is.
pub fn swap_gendered_words(text: &str, lexicon: &GenderLexicon, probability: f64, seed: u64) -> String {
    if swap_draw(probability, seed) {
        swap_all(text, lexicon)
    } else {
        text.to_string()
    }
}

pub fn swap_draw(probability: f64, seed: u64) -> bool {
    rng::stream(seed, &[rng::site::SWAP]).random::<f64>() < probability
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let lex = GenderLexicon::builtin();
        assert_eq!(swap_gendered_words("my wife said", &lex, 1.0, 3), "my husband said");
        assert_eq!(swap_gendered_words("my wife said", &lex, 0.0, 3), "my wife said");
        assert_eq!(swap_gendered_words("SHE left", &lex, 1.0, 3), "HE left");
        assert_eq!(
            swap_all("She told Dad, and she's right.", &lex),
            "He told Mom, and he's right."
        );
    }

    #[test]
    fn rejects_non_bijective_lists() {
        assert!(GenderLexicon::parse("he she\nhim she").is_err());
        assert!(GenderLexicon::parse("he she\nshe her").is_err());
        assert!(GenderLexicon::parse("He she").is_err());
        assert!(GenderLexicon::parse("he she extra").is_err());
        assert!(GenderLexicon::parse("# only a comment\n\nhe she # trailing").is_ok());
    }

    #[test]
    fn shipped_lexicon_is_a_bijection() {
        let lex = GenderLexicon::builtin();
        assert!(lex.pairs().len() >= 60);
        for (m, f) in lex.pairs() {
            assert_eq!(lex.counterpart(m), Some(f.as_str()));
            assert_eq!(lex.counterpart(f), Some(m.as_str()));
        }
    }
}
