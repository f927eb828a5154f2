use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUILTIN_STOPWORDS: &str = include_str!("../../data/stopwords.txt");
const BUILTIN_STEMS: &str = include_str!("../../data/stems.tsv");

/// Stopword set plus a stemming lookup table.
#[derive(Debug, Clone, Default)]
pub struct TextNormalizer {
    stopwords: HashSet<String>,
    stems: HashMap<String, String>,
}

impl TextNormalizer {
    pub fn new(stopwords: HashSet<String>, stems: HashMap<String, String>) -> Self {
        TextNormalizer { stopwords, stems }
    }

    pub fn parse(stopwords: &str, stems: &str) -> Result<Self> {
        let stopwords = entries(stopwords).map(str::to_lowercase).collect();
        let mut table = HashMap::new();
        for (n, line) in stems.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((from, to)) = line.split_once('\t') else {
                return Err(Error::invalid(format!(
                    "stem table line {}: expected a tab-separated pair",
                    n + 1
                )));
            };
            table.insert(from.trim().to_lowercase(), to.trim().to_lowercase());
        }
        Ok(TextNormalizer {
            stopwords,
            stems: table,
        })
    }

    pub fn load(stopword_file: &Path, stem_table: &Path) -> Result<Self> {
        let s = fs::read_to_string(stopword_file).map_err(|e| Error::io(stopword_file, e))?;
        let t = fs::read_to_string(stem_table).map_err(|e| Error::io(stem_table, e))?;
        TextNormalizer::parse(&s, &t)
    }

    pub fn builtin() -> Self {
        TextNormalizer::parse(BUILTIN_STOPWORDS, BUILTIN_STEMS).expect("shipped tables are valid")
    }

    /// Lowercases, drops apostrophes, splits on anything that is not a
    /// letter or digit, drops tokens containing digits, stems, then drops
    /// stopwords (checked both before and after stemming).
    pub fn tokens(&self, text: &str) -> Vec<String> {
        let lowered: String = text
            .chars()
            .filter(|c| *c != '\'' && *c != '\u{2019}')
            .flat_map(char::to_lowercase)
            .collect();
        lowered
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty() && !t.chars().any(|c| c.is_numeric()))
            .filter(|t| !self.stopwords.contains(*t))
            .map(|t| self.stems.get(t).cloned().unwrap_or_else(|| t.to_string()))
            .filter(|t| !self.stopwords.contains(t))
            .collect()
    }
}

fn entries(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
}

/// Document-frequency pruning bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneBounds {
    /// Terms in strictly more than this fraction of documents are dropped.
    pub max_df_fraction: f64,
    /// Terms in fewer than this many documents are dropped.
    pub min_df: usize,
}

impl Default for PruneBounds {
    fn default() -> Self {
        PruneBounds {
            max_df_fraction: 0.5,
            min_df: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub terms: Vec<String>,
    pub doc_freq: Vec<u32>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.terms
            .binary_search_by(|t| t.as_str().cmp(term))
            .ok()
            .map(|i| i as u32)
    }

    /// Maps normalized tokens to ids, skipping out-of-vocabulary ones.
    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().filter_map(|t| self.id(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub vocabulary: Vocabulary,
    /// One token-id sequence per input text, in input order. Texts reduced to
    /// nothing get an empty sequence.
    pub docs: Vec<Vec<u32>>,
    pub emptied: usize,
}

pub fn preprocess<S: AsRef<str> + Sync>(
    texts: &[S],
    normalizer: &TextNormalizer,
    bounds: PruneBounds,
) -> Result<Preprocessed> {
    let tokenized: Vec<Vec<String>> = texts.par_iter().map(|t| normalizer.tokens(t.as_ref())).collect();

    let mut df: HashMap<&str, u32> = HashMap::new();
    for doc in &tokenized {
        let uniq: HashSet<&str> = doc.iter().map(String::as_str).collect();
        for t in uniq {
            *df.entry(t).or_default() += 1;
        }
    }
    let n = texts.len() as f64;
    let mut kept: Vec<(&str, u32)> = df
        .into_iter()
        .filter(|&(_, f)| (f as usize) >= bounds.min_df && (f as f64) <= bounds.max_df_fraction * n)
        .collect();
    kept.sort_unstable();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let vocabulary = Vocabulary {
        terms: kept.iter().map(|(t, _)| t.to_string()).collect(),
        doc_freq: kept.iter().map(|(_, f)| *f).collect(),
    };
    let docs: Vec<Vec<u32>> = tokenized.par_iter().map(|d| vocabulary.encode(d)).collect();
    let emptied = docs.iter().filter(|d| d.is_empty()).count();
    Ok(Preprocessed {
        vocabulary,
        docs,
        emptied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normalizer() -> TextNormalizer {
        TextNormalizer::parse("the\n# comment\n", "cats\tcat\n").unwrap()
    }

    #[test]
    fn tokens_example() {
        assert_eq!(normalizer().tokens("The cats. The cats!"), vec!["cat", "cat"]);
        assert_eq!(normalizer().tokens("I'm 25 and 3rd-rate"), vec!["im", "and", "rate"]);
    }

    #[test]
    fn document_frequency_pruning() {
        // 100 docs: "common" in 51, "edge" in exactly 50, "rare" in 9, "kept" in 10.
        let texts: Vec<String> = (0..100)
            .map(|i| {
                let mut words = vec!["filler"];
                if i < 51 {
                    words.push("common");
                }
                if i >= 50 {
                    words.push("edge");
                }
                if i < 9 {
                    words.push("rare");
                }
                if (20..30).contains(&i) {
                    words.push("kept");
                }
                words.join(" ")
            })
            .collect();
        let p = preprocess(&texts, &normalizer(), PruneBounds::default()).unwrap();
        assert_eq!(p.vocabulary.terms, vec!["edge", "kept"]);
        assert_eq!(p.vocabulary.doc_freq, vec![50, 10]);
        assert_eq!(p.emptied, 40);
        assert_eq!(p.docs[25], vec![1]);
        assert_eq!(p.docs[60], vec![0]);
    }

    #[test]
    fn empty_vocabulary_is_fatal() {
        let texts = ["only the", "the"];
        assert!(matches!(
            preprocess(&texts, &normalizer(), PruneBounds::default()),
            Err(Error::EmptyVocabulary)
        ));
    }

    #[test]
    fn builtin_tables_load() {
        let n = TextNormalizer::builtin();
        assert_eq!(n.tokens("My roommates ate the dishes"), vec!["roommate", "eat", "dish"]);
    }
}
