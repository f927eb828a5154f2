//! Preprocessing, LDA and threshold-based topic labels.

pub mod lda;
pub mod preprocess;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use lda::{
    lda_fit, lda_fit_keyed, perplexity, select_k, Inference, KScore, KSelection, LdaConfig, LdaSampler, TopicModel,
};
pub use preprocess::{preprocess, Preprocessed, PruneBounds, TextNormalizer, Vocabulary};

use crate::error::{Error, Result};

pub const DEFAULT_TOPIC_THRESHOLD: f64 = 0.4;

/// A topic index, or the catch-all stratum for documents without a
/// dominant topic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TopicLabel {
    Topic(u16),
    Other,
}

impl fmt::Display for TopicLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopicLabel::Topic(t) => write!(f, "{t}"),
            TopicLabel::Other => f.write_str("OTHER"),
        }
    }
}

impl FromStr for TopicLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "OTHER" {
            return Ok(TopicLabel::Other);
        }
        s.parse()
            .map(TopicLabel::Topic)
            .map_err(|_| Error::invalid(format!("bad topic label `{s}`")))
    }
}

impl From<TopicLabel> for String {
    fn from(l: TopicLabel) -> String {
        l.to_string()
    }
}

impl TryFrom<String> for TopicLabel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicAssignment {
    pub doc_id: String,
    pub distribution: Vec<f64>,
    pub label: TopicLabel,
    pub threshold: f64,
}

/// Argmax (lowest index on ties) if its share of the total reaches
/// `threshold`, otherwise `Other`. The input need not be normalized.
pub fn label_for(distribution: &[f64], threshold: f64) -> TopicLabel {
    let total: f64 = distribution.iter().sum();
    if distribution.is_empty() || !(total > 0.0) {
        return TopicLabel::Other;
    }
    let (best, max) =
        distribution.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        );
    if max / total >= threshold {
        TopicLabel::Topic(best as u16)
    } else {
        TopicLabel::Other
    }
}

pub fn assign_topic(
    model: &TopicModel,
    doc_id: &str,
    tokens: &[u32],
    threshold: f64,
    config: &LdaConfig,
    seed: u64,
) -> TopicAssignment {
    let distribution = model.infer(tokens, config.burn_in, config.samples, seed).distribution;
    TopicAssignment {
        doc_id: doc_id.to_string(),
        label: if tokens.is_empty() {
            TopicLabel::Other
        } else {
            label_for(&distribution, threshold)
        },
        distribution,
        threshold,
    }
}

/// `index<TAB>name` lines naming topics for reports.
pub fn parse_label_map(text: &str) -> Result<BTreeMap<TopicLabel, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let Some((idx, name)) = line.split_once('\t') else {
            return Err(Error::invalid(format!(
                "label map line {}: expected index<TAB>name",
                n + 1
            )));
        };
        out.insert(idx.trim().parse()?, name.trim().to_string());
    }
    Ok(out)
}
