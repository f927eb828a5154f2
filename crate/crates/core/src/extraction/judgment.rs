//! Judgment-tag extraction from comment text.
//!
//! Four positional rules are tried in priority order; the first rule that
//! fires decides the result:
//!
//! 1. the tag is the only word on a line (any case). All such lines are
//!    collected, so this is the only rule that can yield several tags;
//! 2. the tag is the only word of a sentence (any case), except lower- or
//!    mixed-case "nah", which is usually the informal "no";
//! 3. the tag opens a line and is either upper case or immediately followed by
//!    one of `.`, `-`, ` -`, `;`, `:`, ` :` or a double space;
//! 4. the tag is upper case inside a sentence of at most six words.
//!
//! Rules 3 and 4 skip sentences that contain "if" or end with a question mark.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RawTag {
    #[serde(rename = "YTA")]
    Yta,
    #[serde(rename = "ESH")]
    Esh,
    #[serde(rename = "NTA")]
    Nta,
    #[serde(rename = "NAH")]
    Nah,
}

impl RawTag {
    pub const ALL: [RawTag; 4] = [RawTag::Yta, RawTag::Esh, RawTag::Nta, RawTag::Nah];

    pub fn as_str(self) -> &'static str {
        match self {
            RawTag::Yta => "YTA",
            RawTag::Esh => "ESH",
            RawTag::Nta => "NTA",
            RawTag::Nah => "NAH",
        }
    }

    /// Case-insensitive match of a bare word.
    pub fn from_word(word: &str) -> Option<RawTag> {
        RawTag::ALL.into_iter().find(|t| word.eq_ignore_ascii_case(t.as_str()))
    }
}

impl fmt::Display for RawTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which rule produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    OwnLine,
    OwnSentence,
    LineStart,
    ShortSentence,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TagMatch {
    pub tags: Vec<RawTag>,
    pub rule: Option<Rule>,
}

pub fn extract_judgment_tags(comment_body: &str) -> Vec<RawTag> {
    match_judgment_tags(comment_body).tags
}

pub fn match_judgment_tags(body: &str) -> TagMatch {
    let lines: Vec<&str> = body.lines().collect();

    let mut own_line = Vec::new();
    for line in &lines {
        if let [word] = words(line).as_slice() {
            if let Some(tag) = RawTag::from_word(word) {
                if !own_line.contains(&tag) {
                    own_line.push(tag);
                }
            }
        }
    }
    if !own_line.is_empty() {
        return TagMatch {
            tags: own_line,
            rule: Some(Rule::OwnLine),
        };
    }

    let sentences: Vec<&str> = lines.iter().flat_map(|l| split_sentences(l)).collect();

    for s in &sentences {
        if let [word] = words(s).as_slice() {
            if let Some(tag) = RawTag::from_word(word) {
                if !is_informal_nah(tag, word) {
                    return single(tag, Rule::OwnSentence);
                }
            }
        }
    }

    for line in &lines {
        if let Some(tag) = line_start_tag(line) {
            return single(tag, Rule::LineStart);
        }
    }

    for s in &sentences {
        let ws = words(s);
        if ws.len() > 6 || is_hypothetical(s) {
            continue;
        }
        if let Some(tag) = ws.iter().find_map(|w| upper_tag(w)) {
            return single(tag, Rule::ShortSentence);
        }
    }

    TagMatch::default()
}

fn single(tag: RawTag, rule: Rule) -> TagMatch {
    TagMatch {
        tags: vec![tag],
        rule: Some(rule),
    }
}

fn is_informal_nah(tag: RawTag, word: &str) -> bool {
    tag == RawTag::Nah && word != "NAH"
}

fn upper_tag(word: &str) -> Option<RawTag> {
    RawTag::from_word(word).filter(|t| word == t.as_str())
}

/// Whitespace tokens with surrounding punctuation and markup removed; tokens
/// that are pure punctuation are dropped.
fn words(text: &str) -> Vec<&str> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Splits on `.`, `!` or `?` followed by whitespace or the end of the text.
/// The terminator stays with its sentence.
fn split_sentences(line: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = line.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = match iter.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            };
            if at_boundary {
                let end = i + c.len_utf8();
                let s = line[start..end].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = end;
            }
        }
    }
    let rest = line[start..].trim();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

fn is_hypothetical(sentence: &str) -> bool {
    sentence.trim_end().ends_with('?') || words(sentence).iter().any(|w| w.eq_ignore_ascii_case("if"))
}

const SPECIAL_FOLLOWERS: [&str; 7] = ["  ", " -", " :", ".", "-", ";", ":"];

fn line_start_tag(line: &str) -> Option<RawTag> {
    let trimmed = line.trim_start();
    // Leading markup such as `**` or `> `.
    let lead = trimmed.trim_start_matches(|c: char| !c.is_alphanumeric());
    let word_len = lead.find(|c: char| !c.is_alphanumeric()).unwrap_or(lead.len());
    let word = &lead[..word_len];
    let tag = RawTag::from_word(word)?;
    let rest = lead[word_len..].trim_start_matches(['*', '_']);

    let first_sentence = split_sentences(trimmed).into_iter().next().unwrap_or("");
    if is_hypothetical(first_sentence) {
        return None;
    }
    if word == tag.as_str() {
        return Some(tag);
    }
    if is_informal_nah(tag, word) {
        return None;
    }
    SPECIAL_FOLLOWERS.iter().any(|s| rest.starts_with(s)).then_some(tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use RawTag::*;

    fn tags(s: &str) -> Vec<RawTag> {
        extract_judgment_tags(s)
    }

    #[test]
    fn examples() {
        assert_eq!(tags("NTA\nyou did fine"), vec![Nta]);
        assert_eq!(tags("OP, you are clearly NTA!"), vec![Nta]);
        assert_eq!(tags("YTA if you hid it"), vec![]);
        assert_eq!(tags("nah that's fine honestly"), vec![]);
    }

    #[test]
    fn rule_one_collects_every_lone_line() {
        let m = match_judgment_tags("YTA\n\nwell, maybe\n**ESH**\nYTA");
        assert_eq!(m.tags, vec![Yta, Esh]);
        assert_eq!(m.rule, Some(Rule::OwnLine));
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(
            split_sentences("NTA. You did fine!! Really?"),
            vec!["NTA.", "You did fine!!", "Really?"]
        );
        assert_eq!(split_sentences("version 2.0 is out"), vec!["version 2.0 is out"]);
    }

    #[test]
    fn rule_three_followers() {
        assert_eq!(line_start_tag("nta - she overreacted and you know it"), Some(Nta));
        assert_eq!(
            line_start_tag("Esh; all of you are terrible people honestly"),
            Some(Esh)
        );
        assert_eq!(line_start_tag("yta  because you lied to everyone involved"), Some(Yta));
        assert_eq!(line_start_tag("yta because you lied to everyone involved"), None);
        assert_eq!(line_start_tag("YTA because you lied to everyone involved"), Some(Yta));
        assert_eq!(line_start_tag("Nah. she is right about this one"), None);
    }
}
