//! Author age/gender tags such as "F26", "(26 m)" or "[M 30]".

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::M => "M",
            Gender::F => "F",
        }
    }

    pub fn parse(s: &str) -> Option<Gender> {
        match s {
            "M" | "m" => Some(Gender::M),
            "F" | "f" => Some(Gender::F),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub age: u8,
    pub gender: Gender,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DemographicScan {
    pub demographics: Option<Demographics>,
    /// The first self-referring tag is a non-binary identity.
    pub non_binary: bool,
    /// Further self-referring tags that disagree with the first one.
    pub conflicts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProximityRule {
    /// Maximum token distance between pronoun and tag.
    pub window: usize,
}

impl Default for ProximityRule {
    fn default() -> Self {
        ProximityRule { window: 3 }
    }
}

static BINARY_TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(?:(\d{2}) ?([MFmf])|([MFmf]) ?(\d{2}))\b").unwrap());

const NON_BINARY: &str = "nb|enby|mtf|ftm|m2f|f2m|tm|tf|gq|nbf|nbm|afab|amab";

static NON_BINARY_TAG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?i)\b(?:\d{{2}} ?(?:{NON_BINARY})|(?:{NON_BINARY}) ?\d{{2}})\b"
    ))
    .unwrap()
});

static BRACKETED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?i)[(\[] *(?:\d{{2}} ?(?:[mf]|{NON_BINARY})|(?:[mf]|{NON_BINARY}) ?\d{{2}}) *[)\]]|\b(?:\d{{2}} ?(?:[mf]|{NON_BINARY})|(?:[mf]|{NON_BINARY}) ?\d{{2}})\b"
    ))
    .unwrap()
});

const PRONOUNS: [&str; 5] = ["i", "me", "my", "i'm", "im"];

/// Tokens allowed between a pronoun and its tag ("I am a 22 M ...").
const LINKING: [&str; 12] = [
    "am",
    "a",
    "an",
    "'m",
    "was",
    "is",
    "currently",
    "now",
    "just",
    "turned",
    "turning",
    "aged",
];

pub fn extract_demographics(title: &str, body: &str) -> Option<Demographics> {
    scan_demographics(title, body, ProximityRule::default()).demographics
}

pub fn scan_demographics(title: &str, body: &str, rule: ProximityRule) -> DemographicScan {
    let mut found: Vec<Candidate> = Vec::new();
    for text in [title, body] {
        found.extend(self_referring(text, rule));
    }
    let Some(first) = found.first().copied() else {
        return DemographicScan::default();
    };
    let conflicts = found[1..].iter().filter(|c| **c != first).count();
    match first {
        Candidate::Binary(d) => DemographicScan {
            demographics: Some(d),
            non_binary: false,
            conflicts,
        },
        Candidate::NonBinary => DemographicScan {
            demographics: None,
            non_binary: true,
            conflicts,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Candidate {
    Binary(Demographics),
    NonBinary,
}

struct Token<'a> {
    span: Range<usize>,
    norm: String,
    raw: &'a str,
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                let raw = &text[s..i];
                let norm = raw
                    .replace('\u{2019}', "'")
                    .trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
                    .to_lowercase();
                out.push(Token { span: s..i, norm, raw });
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn is_linking(tok: &Token<'_>) -> bool {
    tok.norm.is_empty() || LINKING.contains(&tok.norm.as_str()) || !tok.raw.chars().any(char::is_alphanumeric)
}

/// Tags in `text` (in position order) that sit next to a first-person pronoun.
fn self_referring(text: &str, rule: ProximityRule) -> Vec<Candidate> {
    let tokens = tokenize(text);
    let mut matches: Vec<(usize, Range<usize>, Candidate)> = Vec::new();
    for caps in BINARY_TAG.captures_iter(text) {
        let m = caps.get(0).unwrap();
        let (age, g) = match (caps.get(1), caps.get(2)) {
            (Some(a), Some(g)) => (a.as_str(), g.as_str()),
            _ => (caps.get(4).unwrap().as_str(), caps.get(3).unwrap().as_str()),
        };
        let d = Demographics {
            age: age.parse().unwrap(),
            gender: Gender::parse(g).unwrap(),
        };
        matches.push((m.start(), m.range(), Candidate::Binary(d)));
    }
    for m in NON_BINARY_TAG.find_iter(text) {
        if !matches.iter().any(|(_, r, _)| r.start < m.end() && m.start() < r.end) {
            matches.push((m.start(), m.range(), Candidate::NonBinary));
        }
    }
    matches.sort_by_key(|(start, _, _)| *start);

    matches
        .into_iter()
        .filter(|(_, range, _)| near_pronoun(&tokens, range, rule))
        .map(|(_, _, c)| c)
        .collect()
}

fn near_pronoun(tokens: &[Token<'_>], range: &Range<usize>, rule: ProximityRule) -> bool {
    let covered: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.span.start < range.end && range.start < t.span.end)
        .map(|(i, _)| i)
        .collect();
    let (Some(&first), Some(&last)) = (covered.first(), covered.last()) else {
        return false;
    };
    let is_pronoun = |t: &Token<'_>| PRONOUNS.contains(&t.norm.as_str());

    // The tag may share a token with the pronoun ("I(26F)").
    if covered.iter().any(|&i| {
        let t = &tokens[i];
        is_pronoun(t) || t.norm.starts_with("i(") || t.norm.starts_with("my(")
    }) {
        return true;
    }
    let before = (1..=rule.window).take_while(|d| *d <= first).find_map(|d| {
        let p = first - d;
        if is_pronoun(&tokens[p]) {
            Some(tokens[p + 1..first].iter().all(is_linking))
        } else {
            None
        }
    });
    let after = (1..=rule.window).take_while(|d| last + d < tokens.len()).find_map(|d| {
        let p = last + d;
        if is_pronoun(&tokens[p]) {
            Some(tokens[last + 1..p].iter().all(is_linking))
        } else {
            None
        }
    });
    before == Some(true) || after == Some(true)
}

/// Removes every demographic tag (the author's and anyone else's) together
/// with enclosing brackets. Whitespace around each removal collapses to one
/// space.
pub fn strip_demographic_tags(text: &str) -> String {
    let mut current = strip_once(text);
    loop {
        let next = strip_once(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

fn strip_once(text: &str) -> String {
    if !BRACKETED.is_match(text) {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for m in BRACKETED.find_iter(text) {
        let before = &text[last..m.start()];
        out.push_str(before);
        let ws_before = out.ends_with(char::is_whitespace);
        let kept = out.trim_end().len();
        out.truncate(kept);

        let after = &text[m.end()..];
        let ws_after = after.starts_with(char::is_whitespace);
        let rest = after.trim_start();
        let skip = after.len() - rest.len();
        last = m.end() + skip;

        let next_is_punct = rest.starts_with(['.', ',', ';', ':', '!', '?', ')']);
        if (ws_before || ws_after) && !out.is_empty() && !rest.is_empty() && !next_is_punct {
            out.push(' ');
        }
    }
    out.push_str(&text[last..]);
    out
}
