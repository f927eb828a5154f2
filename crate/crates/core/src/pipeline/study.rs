//! The analysis steps as in-memory functions. The staged runner persists
//! their outputs; tests and simulations call them directly.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{filter_corpus, BotList, Comment, Document, FilterReport, LengthBounds};
use crate::embedding::{embed_builtin, embedding_text, BuiltinConfig, BuiltinEmbedder, EmbeddingMatrix, TextEmbedder};
use crate::error::{Error, Result};
use crate::extraction::{extract_records, ExtractedRecord, ExtractionConfig, ExtractionReport, Gender, GenderLexicon};
use crate::matching::{estimate_sweep, match_sweep, BootstrapConfig, MatchUnit, MatchedPair, SattEstimate, SweepRow};
use crate::propensity::{
    compute_caliper, train_propensity, CaliperSpec, PropensityConfig, PropensityModel, PropensityScore, TrainingText,
};
use crate::rng::{derive_seed, key_of};
use crate::stats::{odds_ratio_fisher, OddsRatio, Table2x2};
use crate::topics::{
    assign_topic, preprocess, select_k, KSelection, LdaConfig, LdaSampler, PruneBounds, TextNormalizer,
    TopicAssignment, TopicLabel, TopicModel, DEFAULT_TOPIC_THRESHOLD,
};

/// The group counted as treated.
pub const TREATED: Gender = Gender::M;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicsConfig {
    pub k_candidates: Vec<usize>,
    pub folds: usize,
    pub threshold: f64,
    pub lda: LdaConfig,
    pub prune: PruneBounds,
}

impl Default for TopicsConfig {
    fn default() -> Self {
        TopicsConfig {
            k_candidates: (2..=30).collect(),
            folds: 5,
            threshold: DEFAULT_TOPIC_THRESHOLD,
            lda: LdaConfig::default(),
            prune: PruneBounds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    /// Distance cap of the headline estimate; must be one of the sweep values.
    pub d_max: f64,
    pub d_max_sweep: Vec<f64>,
    pub age_delta: u32,
    pub bootstrap: BootstrapConfig,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig {
            d_max: 0.25,
            d_max_sweep: vec![0.15, 0.2, 0.25, 0.3, 0.35],
            age_delta: 5,
            bootstrap: BootstrapConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub filter: LengthBounds,
    pub extraction: ExtractionConfig,
    pub topics: TopicsConfig,
    pub embedding: BuiltinConfig,
    pub propensity: PropensityConfig,
    pub matching: MatchingConfig,
}

/// Seed of each step, derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Topics = 1,
    Embed = 2,
    Propensity = 3,
    Estimate = 4,
}

pub fn step_seed(seed: u64, step: Step) -> u64 {
    derive_seed(seed, &[0x5743, step as u64])
}

/// Documents with a verdict, an age and a binary gender, with their records
/// in the same order.
#[derive(Debug, Clone, Default)]
pub struct Sample {
    pub documents: Vec<Document>,
    pub records: Vec<ExtractedRecord>,
    pub filter: FilterReport,
    pub extraction: ExtractionReport,
    /// Records of every retained document, complete or not.
    pub all_records: Vec<ExtractedRecord>,
}

impl Sample {
    pub fn treated(&self, i: usize) -> bool {
        self.records[i].gender == Some(TREATED)
    }
}

pub fn sample_step(
    docs: &[Document],
    comments: &[Comment],
    bots: &BotList,
    bounds: LengthBounds,
    extraction: &ExtractionConfig,
) -> Sample {
    let filtered = filter_corpus(docs, comments, bots, bounds);
    let (all_records, report) = extract_records(&filtered.documents, &filtered.comments, extraction);
    let by_id: HashMap<&str, &Document> = filtered.documents.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut documents = Vec::new();
    let mut records = Vec::new();
    for r in all_records.iter().filter(|r| r.is_complete()) {
        if let Some(d) = by_id.get(r.doc_id.as_str()) {
            documents.push((*d).clone());
            records.push(r.clone());
        }
    }
    Sample {
        documents,
        records,
        filter: filtered.report,
        extraction: report,
        all_records,
    }
}

#[derive(Debug, Clone)]
pub struct TopicsResult {
    pub model: TopicModel,
    pub selection: KSelection,
    pub assignments: Vec<TopicAssignment>,
}

/// Preprocesses, picks K by cross-validated perplexity, fits on every
/// document and labels each one.
pub fn topics_step(
    docs: &[Document],
    normalizer: &TextNormalizer,
    cfg: &TopicsConfig,
    seed: u64,
) -> Result<TopicsResult> {
    let texts: Vec<String> = docs
        .par_iter()
        .map(|d| embedding_text(d, crate::embedding::TextField::TitleAndBody))
        .collect();
    let pre = preprocess(&texts, normalizer, cfg.prune)?;
    let keys: Vec<u64> = docs.iter().map(|d| key_of(&d.id)).collect();
    let v = pre.vocabulary.len();
    let selection = select_k(&pre.docs, &keys, v, &cfg.k_candidates, cfg.folds, &cfg.lda, seed)?;
    let mut sampler = LdaSampler::new(&pre.docs, &keys, selection.best_k, v, &cfg.lda, seed)?;
    for _ in 0..cfg.lda.iterations {
        sampler.sweep();
    }
    let model = sampler.model(pre.vocabulary.terms.clone())?;
    let assignments = docs
        .par_iter()
        .zip(&pre.docs)
        .zip(&keys)
        .map(|((d, tokens), &key)| {
            assign_topic(
                &model,
                &d.id,
                tokens,
                cfg.threshold,
                &cfg.lda,
                derive_seed(seed, &[key]),
            )
        })
        .collect();
    Ok(TopicsResult {
        model,
        selection,
        assignments,
    })
}

pub fn embed_step(docs: &[Document], cfg: &BuiltinConfig, seed: u64) -> Result<(EmbeddingMatrix, BuiltinEmbedder)> {
    embed_builtin(docs, cfg, seed)
}

#[derive(Debug, Clone)]
pub struct PropensityResult {
    pub model: PropensityModel,
    pub scores: Vec<PropensityScore>,
    pub caliper: CaliperSpec,
}

/// Trains on every sampled document and scores the same documents.
pub fn propensity_step(
    sample: &Sample,
    embedder: &dyn TextEmbedder,
    text: crate::embedding::TextField,
    lexicon: &GenderLexicon,
    cfg: &PropensityConfig,
    seed: u64,
) -> Result<PropensityResult> {
    let texts: Vec<String> = sample.documents.par_iter().map(|d| embedding_text(d, text)).collect();
    let examples: Vec<TrainingText<'_>> = sample
        .documents
        .iter()
        .zip(&texts)
        .enumerate()
        .map(|(i, (d, t))| TrainingText {
            id: &d.id,
            text: t,
            treated: sample.treated(i),
        })
        .collect();
    let model = train_propensity(&examples, lexicon, embedder, cfg, seed)?;
    let scores: Vec<PropensityScore> = sample
        .documents
        .par_iter()
        .zip(&texts)
        .map(|(d, t)| {
            let logit = model.logit(&embedder.embed(t))?;
            Ok(PropensityScore {
                doc_id: d.id.clone(),
                propensity: 1.0 / (1.0 + (-logit).exp()),
                logit,
            })
        })
        .collect::<Result<_>>()?;
    let (mut lt, mut lc) = (Vec::new(), Vec::new());
    for (i, s) in scores.iter().enumerate() {
        if sample.treated(i) {
            lt.push(s.logit);
        } else {
            lc.push(s.logit);
        }
    }
    let caliper = compute_caliper(&lt, &lc)?;
    Ok(PropensityResult { model, scores, caliper })
}

/// Per-document inputs to matching, aligned with the sample.
pub struct UnitTable<'a> {
    pub treated: Vec<MatchUnit<'a>>,
    pub control: Vec<MatchUnit<'a>>,
}

pub fn unit_table<'a>(
    sample: &'a Sample,
    embeddings: &'a EmbeddingMatrix,
    logits: &HashMap<&str, f64>,
    topics: &HashMap<&str, TopicLabel>,
) -> Result<UnitTable<'a>> {
    let index = embeddings.index();
    let mut table = UnitTable {
        treated: Vec::new(),
        control: Vec::new(),
    };
    for (i, (d, r)) in sample.documents.iter().zip(&sample.records).enumerate() {
        let missing = |what: &str| Error::invalid(format!("document {} has no {what}", d.id));
        let Some(&row) = index.get(d.id.as_str()) else {
            continue;
        };
        if embeddings.zero_rows.contains(&row) {
            continue;
        }
        let unit = MatchUnit {
            id: &d.id,
            vector: embeddings.row(row),
            logit: *logits.get(d.id.as_str()).ok_or_else(|| missing("propensity score"))?,
            topic: *topics.get(d.id.as_str()).ok_or_else(|| missing("topic"))?,
            age: r.age.ok_or_else(|| missing("age"))?,
            outcome: r.verdict.ok_or_else(|| missing("verdict"))?.outcome(),
        };
        if sample.treated(i) {
            table.treated.push(unit);
        } else {
            table.control.push(unit);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone)]
pub struct Estimates {
    pub sweep: Vec<(f64, Vec<MatchedPair>)>,
    pub overall: Vec<Option<SattEstimate>>,
    pub rows: Vec<SweepRow>,
}

impl Estimates {
    pub fn at(&self, d_max: f64) -> Option<(&[MatchedPair], Option<&SattEstimate>)> {
        self.sweep
            .iter()
            .position(|(d, _)| *d == d_max)
            .map(|i| (self.sweep[i].1.as_slice(), self.overall[i].as_ref()))
    }
}

pub fn match_and_estimate(table: &UnitTable<'_>, caliper: f64, cfg: &MatchingConfig, seed: u64) -> Result<Estimates> {
    if !cfg.d_max_sweep.contains(&cfg.d_max) {
        return Err(Error::Config {
            path: "study.matching.d_max".into(),
            message: format!("{} is not one of d_max_sweep", cfg.d_max),
        });
    }
    let sweep = match_sweep(&table.treated, &table.control, caliper, cfg.age_delta, &cfg.d_max_sweep)?;
    let (overall, rows) = estimate_sweep(&sweep, &cfg.bootstrap, seed)?;
    Ok(Estimates { sweep, overall, rows })
}

/// Treated versus control outcome table over the whole sample.
pub fn crude_table(sample: &Sample) -> Table2x2 {
    let mut t = Table2x2::default();
    for (i, r) in sample.records.iter().enumerate() {
        let y = r.verdict.map(|v| v.outcome()) == Some(1);
        match (sample.treated(i), y) {
            (true, true) => t.a += 1,
            (true, false) => t.b += 1,
            (false, true) => t.c += 1,
            (false, false) => t.d += 1,
        }
    }
    t
}

/// Outcome table over matched documents.
pub fn matched_table(pairs: &[MatchedPair]) -> Table2x2 {
    let mut t = Table2x2::default();
    for p in pairs {
        if p.treated_outcome == 1 {
            t.a += 1;
        } else {
            t.b += 1;
        }
        if p.control_outcome == 1 {
            t.c += 1;
        } else {
            t.d += 1;
        }
    }
    t
}

/// Everything one end-to-end pass produces.
pub struct StudyOutcome {
    pub sample: Sample,
    pub topics: TopicsResult,
    pub embeddings: EmbeddingMatrix,
    pub propensity: PropensityResult,
    pub estimates: Estimates,
    pub crude: OddsRatio,
}

impl StudyOutcome {
    pub fn headline(&self, d_max: f64) -> Option<&SattEstimate> {
        self.estimates.at(d_max).and_then(|(_, e)| e)
    }
}

/// Runs every analysis step in memory with the builtin resources.
pub fn run_study(
    docs: &[Document],
    comments: &[Comment],
    bots: &BotList,
    cfg: &StudyConfig,
    seed: u64,
) -> Result<StudyOutcome> {
    let sample = sample_step(docs, comments, bots, cfg.filter, &cfg.extraction);
    let topics = topics_step(
        &sample.documents,
        &TextNormalizer::builtin(),
        &cfg.topics,
        step_seed(seed, Step::Topics),
    )?;
    let (embeddings, embedder) = embed_step(&sample.documents, &cfg.embedding, step_seed(seed, Step::Embed))?;
    let propensity = propensity_step(
        &sample,
        &embedder,
        cfg.embedding.text,
        &GenderLexicon::builtin(),
        &cfg.propensity,
        step_seed(seed, Step::Propensity),
    )?;
    let logits: HashMap<&str, f64> = propensity.scores.iter().map(|s| (s.doc_id.as_str(), s.logit)).collect();
    let labels: HashMap<&str, TopicLabel> = topics
        .assignments
        .iter()
        .map(|a| (a.doc_id.as_str(), a.label))
        .collect();
    let table = unit_table(&sample, &embeddings, &logits, &labels)?;
    let estimates = match_and_estimate(
        &table,
        propensity.caliper.c,
        &cfg.matching,
        step_seed(seed, Step::Estimate),
    )?;
    let crude = odds_ratio_fisher(&crude_table(&sample), cfg.matching.bootstrap.level)?;
    Ok(StudyOutcome {
        sample,
        topics,
        embeddings,
        propensity,
        estimates,
        crude,
    })
}
