//! Rule-based parsers over raw text: judgment tags, verdicts, demographics,
//! tag stripping and gender swapping.

pub mod demographics;
pub mod judgment;
pub mod lexicon;
pub mod verdict;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use demographics::{
    extract_demographics, scan_demographics, strip_demographic_tags, DemographicScan, Demographics, Gender,
    ProximityRule,
};
pub use judgment::{extract_judgment_tags, match_judgment_tags, RawTag, Rule};
pub use lexicon::{swap_all, swap_gendered_words, GenderLexicon};
pub use verdict::{aggregate_verdict, Aggregate, Judgment, Verdict, DEFAULT_MIN_WEIGHT};

use crate::corpus::{Comment, Document};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    pub min_weight: u64,
    pub proximity: ProximityRule,
    /// Documents whose flair equals one of these (case-insensitive) are dropped.
    pub drop_flairs: Vec<String>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            min_weight: DEFAULT_MIN_WEIGHT,
            proximity: ProximityRule::default(),
            drop_flairs: vec!["NFO".into(), "Not enough info".into()],
        }
    }
}

/// One row of the verdict/demographics output. Missing values are empty
/// fields in the CSV form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedRecord {
    pub doc_id: String,
    pub verdict: Option<Judgment>,
    pub total_weight: u64,
    pub age: Option<u8>,
    pub gender: Option<Gender>,
}

impl ExtractedRecord {
    /// Both a verdict and binary demographics are present.
    pub fn is_complete(&self) -> bool {
        self.verdict.is_some() && self.age.is_some() && self.gender.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub documents: usize,
    pub comments_tagged: usize,
    pub comments_untagged: usize,
    pub comments_negative: usize,
    pub rule_counts: BTreeMap<String, usize>,
    pub verdicts: usize,
    pub below_weight: usize,
    pub tied: usize,
    pub flair_dropped: usize,
    pub demographics: usize,
    pub non_binary: usize,
    pub demographic_conflicts: usize,
    pub complete: usize,
}

pub fn extract_records(
    docs: &[Document],
    comments: &[Comment],
    config: &ExtractionConfig,
) -> (Vec<ExtractedRecord>, ExtractionReport) {
    let mut by_doc: HashMap<&str, Vec<&Comment>> = HashMap::new();
    for c in comments {
        by_doc.entry(c.document_id.as_str()).or_default().push(c);
    }

    struct PerDoc {
        record: Option<ExtractedRecord>,
        rules: Vec<Option<Rule>>,
        negative: usize,
        aggregate: Option<Aggregate>,
        scan: DemographicScan,
    }

    let per_doc: Vec<PerDoc> = docs
        .par_iter()
        .map(|doc| {
            if doc
                .flair
                .as_deref()
                .is_some_and(|f| config.drop_flairs.iter().any(|d| d.eq_ignore_ascii_case(f.trim())))
            {
                return PerDoc {
                    record: None,
                    rules: Vec::new(),
                    negative: 0,
                    aggregate: None,
                    scan: DemographicScan::default(),
                };
            }
            let mut tagged = Vec::new();
            let mut rules = Vec::new();
            let mut negative = 0;
            for c in by_doc.get(doc.id.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
                if c.score < 0 {
                    negative += 1;
                    continue;
                }
                let m = match_judgment_tags(&c.body);
                rules.push(m.rule);
                tagged.extend(m.tags.into_iter().map(|t| (t, c.score)));
            }
            let aggregate = aggregate_verdict(&tagged, config.min_weight);
            let scan = scan_demographics(&doc.title, &doc.body, config.proximity);
            let verdict = aggregate.verdict();
            PerDoc {
                record: Some(ExtractedRecord {
                    doc_id: doc.id.clone(),
                    verdict: verdict.map(|v| v.value),
                    total_weight: match aggregate {
                        Aggregate::Decided(v) => v.total_weight,
                        Aggregate::BelowWeight { total_weight } | Aggregate::Tied { total_weight } => total_weight,
                    },
                    age: scan.demographics.map(|d| d.age),
                    gender: scan.demographics.map(|d| d.gender),
                }),
                rules,
                negative,
                aggregate: Some(aggregate),
                scan,
            }
        })
        .collect();

    let mut report = ExtractionReport::default();
    let mut records = Vec::with_capacity(docs.len());
    for d in per_doc {
        let Some(record) = d.record else {
            report.flair_dropped += 1;
            continue;
        };
        report.documents += 1;
        report.comments_negative += d.negative;
        for rule in d.rules {
            match rule {
                Some(r) => {
                    report.comments_tagged += 1;
                    *report.rule_counts.entry(format!("{r:?}")).or_default() += 1;
                }
                None => report.comments_untagged += 1,
            }
        }
        match d.aggregate {
            Some(Aggregate::Decided(_)) => report.verdicts += 1,
            Some(Aggregate::BelowWeight { .. }) => report.below_weight += 1,
            Some(Aggregate::Tied { .. }) => report.tied += 1,
            None => {}
        }
        if d.scan.demographics.is_some() {
            report.demographics += 1;
        }
        if d.scan.non_binary {
            report.non_binary += 1;
        }
        report.demographic_conflicts += d.scan.conflicts;
        if record.is_complete() {
            report.complete += 1;
        }
        records.push(record);
    }
    (records, report)
}

pub fn write_records(path: &Path, records: &[ExtractedRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<ExtractedRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Csv(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn end_to_end_record() {
        let body = format!("I (25F) asked my roommate to clean. {}", "word ".repeat(100));
        let mut docs = vec![Document::new("d1", "u", 0, "AITA for asking?", body.clone())];
        let mut nfo = Document::new("d2", "u", 0, "AITA?", body);
        nfo.flair = Some("nfo".into());
        docs.push(nfo);
        let c = |id: &str, body: &str, score| Comment {
            id: id.into(),
            document_id: "d1".into(),
            author_id: "x".into(),
            body: body.into(),
            score,
        };
        let comments = vec![
            c("1", "NTA", 8),
            c("2", "YTA. Clean up.", 3),
            c("3", "lol", 40),
            c("4", "YTA", -5),
        ];
        let (records, report) = extract_records(&docs, &comments, &ExtractionConfig::default());
        assert_eq!(records.len(), 1);
        assert_eq!(
            records[0],
            ExtractedRecord {
                doc_id: "d1".into(),
                verdict: Some(Judgment::NotAh),
                total_weight: 11,
                age: Some(25),
                gender: Some(Gender::F),
            }
        );
        assert_eq!(report.flair_dropped, 1);
        assert_eq!(report.comments_tagged, 2);
        assert_eq!(report.comments_untagged, 1);
        assert_eq!(report.comments_negative, 1);
        assert_eq!(report.complete, 1);
    }

    #[test]
    fn csv_round_trip_with_missing_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("verdicts.csv");
        let records = vec![
            ExtractedRecord {
                doc_id: "a".into(),
                verdict: Some(Judgment::Ah),
                total_weight: 40,
                age: Some(31),
                gender: Some(Gender::M),
            },
            ExtractedRecord {
                doc_id: "b".into(),
                verdict: None,
                total_weight: 3,
                age: None,
                gender: None,
            },
        ];
        write_records(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "doc_id,verdict,total_weight,age,gender\na,AH,40,31,M\nb,,3,,\n");
        assert_eq!(read_records(&path).unwrap(), records);
    }
}
