use serde::{Deserialize, Serialize};

use super::judgment::{extract_judgment_tags, RawTag};
use crate::corpus::Comment;

/// Collapsed judgment of the protagonist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Judgment {
    #[serde(rename = "AH")]
    Ah,
    #[serde(rename = "N_AH")]
    NotAh,
}

impl Judgment {
    pub fn of(tag: RawTag) -> Judgment {
        match tag {
            RawTag::Yta | RawTag::Esh => Judgment::Ah,
            RawTag::Nta | RawTag::Nah => Judgment::NotAh,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Judgment::Ah => "AH",
            Judgment::NotAh => "N_AH",
        }
    }

    pub fn parse(s: &str) -> Option<Judgment> {
        match s {
            "AH" => Some(Judgment::Ah),
            "N_AH" => Some(Judgment::NotAh),
            _ => None,
        }
    }

    /// Binary outcome: 1 for a negative judgment.
    pub fn outcome(self) -> u8 {
        match self {
            Judgment::Ah => 1,
            Judgment::NotAh => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub value: Judgment,
    pub total_weight: u64,
}

/// Result of weighing the tagged comments under one document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Decided(Verdict),
    BelowWeight { total_weight: u64 },
    Tied { total_weight: u64 },
}

impl Aggregate {
    pub fn verdict(self) -> Option<Verdict> {
        match self {
            Aggregate::Decided(v) => Some(v),
            _ => None,
        }
    }
}

pub const DEFAULT_MIN_WEIGHT: u64 = 10;

/// Score-weighted vote. Negative scores carry no weight.
pub fn aggregate_verdict(tagged: &[(RawTag, i64)], min_weight: u64) -> Aggregate {
    let (mut ah, mut not_ah) = (0u64, 0u64);
    for &(tag, score) in tagged {
        let w = score.max(0) as u64;
        match Judgment::of(tag) {
            Judgment::Ah => ah += w,
            Judgment::NotAh => not_ah += w,
        }
    }
    let total_weight = ah + not_ah;
    if total_weight < min_weight {
        Aggregate::BelowWeight { total_weight }
    } else if ah == not_ah {
        Aggregate::Tied { total_weight }
    } else {
        let value = if ah > not_ah { Judgment::Ah } else { Judgment::NotAh };
        Aggregate::Decided(Verdict { value, total_weight })
    }
}

/// Tags every non-negative comment and pairs each tag with the comment score.
pub fn tag_comments<'a, I>(comments: I) -> Vec<(RawTag, i64)>
where
    I: IntoIterator<Item = &'a Comment>,
{
    comments
        .into_iter()
        .filter(|c| c.score >= 0)
        .flat_map(|c| extract_judgment_tags(&c.body).into_iter().map(move |t| (t, c.score)))
        .collect()
}
