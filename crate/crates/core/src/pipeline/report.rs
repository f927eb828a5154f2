//! Report tables: one CSV per reproduced table or figure, plus the test
//! records and a JSON summary.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ReportConfig;
use super::stages::{write_json, SweepEstimate};
use super::study::{crude_table, MatchingConfig, Sample};
use crate::error::{Error, Result};
use crate::matching::{balance_diagnostics, MatchedPair, SweepRow};
use crate::propensity::PropensityScore;
use crate::stats::{
    bin_label, breslow_day, odds_ratio_fisher, quantile_bins, stratified_or_report, Observation, OddsRatio, StratumOr,
    TestRecord,
};
use crate::synth::MIN_AGE;
use crate::topics::{TopicAssignment, TopicLabel, TopicModel};

pub struct ReportInputs<'a> {
    pub sample: &'a Sample,
    pub model: &'a TopicModel,
    pub assignments: &'a [TopicAssignment],
    pub scores: &'a [PropensityScore],
    pub sweep: &'a [(f64, Vec<MatchedPair>)],
    pub sweep_rows: &'a [SweepRow],
    pub estimates: &'a [SweepEstimate],
    pub topic_names: &'a BTreeMap<TopicLabel, String>,
}

/// Odds ratio of a negative judgment for treated versus control authors
/// within one stratum. Empty fields mean a cell was below the minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrRow {
    pub stratum: String,
    pub name: String,
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
    pub odds_ratio: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p: Option<f64>,
    pub significance: String,
}

impl OrRow {
    fn of(s: &StratumOr, name: String) -> Self {
        OrRow {
            stratum: s.stratum.clone(),
            name,
            a: s.table.a,
            b: s.table.b,
            c: s.table.c,
            d: s.table.d,
            odds_ratio: s.result.map(|r| r.or),
            ci_low: s.result.map(|r| r.ci_low),
            ci_high: s.result.map(|r| r.ci_high),
            p: s.result.map(|r| r.p),
            significance: s
                .significance
                .map(|x| {
                    serde_json::to_value(x)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default()
                })
                .unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    /// `before` for the whole sample, otherwise `matched`.
    pub scope: String,
    pub d_max: Option<f64>,
    pub n_treated: usize,
    pub n_control: usize,
    pub smd: Option<f64>,
    pub variance_ratio: Option<f64>,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicsRow {
    pub gender: String,
    pub age: u8,
    pub documents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRow {
    pub topic: String,
    pub name: String,
    pub documents: usize,
    pub share: f64,
    pub treated: usize,
    pub treated_share: f64,
    pub top_words: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub documents: usize,
    pub treated: usize,
    pub control: usize,
    pub topics: usize,
    pub crude: Option<OddsRatio>,
    pub headline: Option<SweepEstimate>,
}

pub const REPORT_FILES: [&str; 8] = [
    "sweep.csv",
    "topic_or.csv",
    "age_or.csv",
    "balance.csv",
    "demographics.csv",
    "topics.csv",
    "tests.jsonl",
    "summary.json",
];

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::extraction::csv_io(path, e))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn observations(sample: &Sample, stratum: impl Fn(usize) -> String) -> Vec<Observation> {
    (0..sample.records.len())
        .map(|i| Observation {
            treated: sample.treated(i),
            positive: sample.records[i].verdict.map(|v| v.outcome()) == Some(1),
            stratum: stratum(i),
        })
        .collect()
}

/// Breslow-Day over the strata that produced an odds ratio.
fn homogeneity(test: &str, rows: &[StratumOr]) -> Option<TestRecord> {
    let tables: Vec<_> = rows.iter().filter(|r| r.result.is_some()).map(|r| r.table).collect();
    if tables.len() < 2 {
        return None;
    }
    let bd = breslow_day(&tables).ok()?;
    Some(TestRecord::new(test, bd.chi2, Some(bd.p), None, &tables))
}

/// Writes every report file into `dir` and returns their names.
pub fn write_report(
    dir: &Path,
    inputs: &ReportInputs<'_>,
    cfg: &ReportConfig,
    matching: &MatchingConfig,
) -> Result<Vec<String>> {
    let sample = inputs.sample;
    let level = matching.bootstrap.level;
    let mut tests = Vec::new();

    write_csv(&dir.join("sweep.csv"), inputs.sweep_rows)?;

    let labels: HashMap<&str, TopicLabel> = inputs
        .assignments
        .iter()
        .map(|a| (a.doc_id.as_str(), a.label))
        .collect();
    let label_of = |i: usize| {
        labels
            .get(sample.documents[i].id.as_str())
            .copied()
            .unwrap_or(TopicLabel::Other)
    };
    let name_of = |l: &str| {
        l.parse::<TopicLabel>()
            .ok()
            .and_then(|l| inputs.topic_names.get(&l).cloned())
            .unwrap_or_default()
    };

    let by_topic = stratified_or_report(&observations(sample, |i| label_of(i).to_string()), cfg.min_cell, level)?;
    let rows: Vec<OrRow> = by_topic.iter().map(|s| OrRow::of(s, name_of(&s.stratum))).collect();
    write_csv(&dir.join("topic_or.csv"), &rows)?;
    tests.extend(homogeneity("breslow_day_topics", &by_topic));

    let ages: Vec<u8> = sample.records.iter().filter_map(|r| r.age).collect();
    let bounds = quantile_bins(&ages, cfg.age_bins);
    let age_stratum = |i: usize| bin_label(sample.records[i].age.unwrap_or(MIN_AGE), &bounds, MIN_AGE);
    let by_age = stratified_or_report(&observations(sample, age_stratum), cfg.min_cell, level)?;
    let rows: Vec<OrRow> = by_age.iter().map(|s| OrRow::of(s, String::new())).collect();
    write_csv(&dir.join("age_or.csv"), &rows)?;
    tests.extend(homogeneity("breslow_day_age", &by_age));

    let logits: HashMap<&str, f64> = inputs.scores.iter().map(|s| (s.doc_id.as_str(), s.logit)).collect();
    let mut balance = Vec::new();
    let (mut lt, mut lc) = (Vec::new(), Vec::new());
    for (i, d) in sample.documents.iter().enumerate() {
        if let Some(&l) = logits.get(d.id.as_str()) {
            if sample.treated(i) {
                lt.push(l);
            } else {
                lc.push(l);
            }
        }
    }
    balance.push(balance_row("before", None, &lt, &lc));
    for (d, pairs) in inputs.sweep {
        let lt: Vec<f64> = pairs
            .iter()
            .filter_map(|p| logits.get(p.treated_id.as_str()).copied())
            .collect();
        let lc: Vec<f64> = pairs
            .iter()
            .filter_map(|p| logits.get(p.control_id.as_str()).copied())
            .collect();
        balance.push(balance_row("matched", Some(*d), &lt, &lc));
    }
    write_csv(&dir.join("balance.csv"), &balance)?;

    let mut demo: BTreeMap<(String, u8), usize> = BTreeMap::new();
    for r in &sample.records {
        if let (Some(g), Some(a)) = (r.gender, r.age) {
            *demo.entry((g.as_str().to_string(), a)).or_default() += 1;
        }
    }
    let demo: Vec<DemographicsRow> = demo
        .into_iter()
        .map(|((gender, age), documents)| DemographicsRow { gender, age, documents })
        .collect();
    write_csv(&dir.join("demographics.csv"), &demo)?;

    let top = inputs.model.top_words(cfg.top_words);
    let mut counts: BTreeMap<TopicLabel, (usize, usize)> = BTreeMap::new();
    for i in 0..sample.documents.len() {
        let e = counts.entry(label_of(i)).or_default();
        e.0 += 1;
        e.1 += usize::from(sample.treated(i));
    }
    let n = sample.documents.len().max(1) as f64;
    let topic_rows: Vec<TopicRow> = counts
        .iter()
        .map(|(label, &(docs, treated))| TopicRow {
            topic: label.to_string(),
            name: inputs.topic_names.get(label).cloned().unwrap_or_default(),
            documents: docs,
            share: docs as f64 / n,
            treated,
            treated_share: treated as f64 / docs as f64,
            top_words: match label {
                TopicLabel::Topic(t) => top
                    .get(usize::from(*t))
                    .map(|w| w.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" "))
                    .unwrap_or_default(),
                TopicLabel::Other => String::new(),
            },
        })
        .collect();
    write_csv(&dir.join("topics.csv"), &topic_rows)?;

    let crude_t = crude_table(sample);
    let crude = odds_ratio_fisher(&crude_t, level).ok();
    if let Some(c) = crude {
        tests.insert(
            0,
            TestRecord::new("fisher_crude", c.or, Some(c.p), Some((c.ci_low, c.ci_high)), &crude_t),
        );
    }
    for e in inputs.estimates {
        if let Some(s) = &e.estimate {
            let pairs = inputs.sweep.iter().find(|(d, _)| *d == e.d_max).map(|(_, p)| p);
            tests.push(TestRecord::new(
                &format!("satt_bootstrap_d{}", e.d_max),
                s.satt,
                None,
                Some((s.ci_low, s.ci_high)),
                &pairs,
            ));
        }
    }
    let path = dir.join("tests.jsonl");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for t in &tests {
        serde_json::to_writer(&mut f, t)?;
        f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }

    let n_treated = (0..sample.records.len()).filter(|&i| sample.treated(i)).count();
    write_json(
        &dir.join("summary.json"),
        &Summary {
            documents: sample.documents.len(),
            treated: n_treated,
            control: sample.documents.len() - n_treated,
            topics: inputs.model.k(),
            crude,
            headline: inputs.estimates.iter().find(|e| e.d_max == matching.d_max).cloned(),
        },
    )?;
    Ok(REPORT_FILES.iter().map(|s| s.to_string()).collect())
}

fn balance_row(scope: &str, d_max: Option<f64>, lt: &[f64], lc: &[f64]) -> BalanceRow {
    let b = balance_diagnostics(lt, lc).ok();
    BalanceRow {
        scope: scope.into(),
        d_max,
        n_treated: lt.len(),
        n_control: lc.len(),
        smd: b.map(|b| b.smd),
        variance_ratio: b.map(|b| b.variance_ratio),
        pass: b.map(|b| b.pass),
    }
}
