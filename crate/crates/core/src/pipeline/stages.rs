//! The staged runner: each stage reads its upstream artifacts from the
//! output directory, writes its own, and records a manifest.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::manifest::{hash_file, Manifest, RunLock};
use super::report::{write_report, ReportInputs};
use super::study::{self, step_seed, Sample, Step};
use crate::annotate::{AnnotationPair, PairDoc};
use crate::corpus::{filter_corpus, load_corpus, BotList, Comment, Document, FilterReport, LoadReport};
use crate::embedding::{import_embeddings, write_binary, EmbeddingMatrix, EmbeddingSource, ImportReport};
use crate::error::{Error, Result};
use crate::extraction::{
    extract_records, read_records, write_records, ExtractedRecord, ExtractionReport, GenderLexicon,
};
use crate::matching::{
    estimate_sweep, match_sweep, read_pairs, write_pairs, write_sweep, MatchedPair, SattEstimate, SweepRow,
};
use crate::propensity::{read_scores, write_scores, CaliperSpec};
use crate::rng::{key_of, site, stream};
use crate::synth;
use crate::topics::{TextNormalizer, TopicAssignment, TopicLabel, TopicModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Extract,
    Topics,
    Embed,
    Propensity,
    Match,
    Estimate,
    Report,
    Synth,
    AnnotateServe,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Ingest,
        Stage::Extract,
        Stage::Topics,
        Stage::Embed,
        Stage::Propensity,
        Stage::Match,
        Stage::Estimate,
        Stage::Report,
        Stage::Synth,
        Stage::AnnotateServe,
    ];

    /// The analysis stages in dependency order.
    pub const ANALYSIS: [Stage; 8] = [
        Stage::Ingest,
        Stage::Extract,
        Stage::Topics,
        Stage::Embed,
        Stage::Propensity,
        Stage::Match,
        Stage::Estimate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Extract => "extract",
            Stage::Topics => "topics",
            Stage::Embed => "embed",
            Stage::Propensity => "propensity",
            Stage::Match => "match",
            Stage::Estimate => "estimate",
            Stage::Report => "report",
            Stage::Synth => "synth",
            Stage::AnnotateServe => "annotate-serve",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub status: StageStatus,
    pub dir: PathBuf,
    pub manifest: Manifest,
}

pub fn stage_dir(cfg: &RunConfig, stage: Stage) -> PathBuf {
    match stage {
        Stage::Synth => cfg
            .synth
            .as_ref()
            .map_or_else(|| cfg.output_dir.join("synth"), |s| s.out_dir.clone()),
        Stage::AnnotateServe => cfg.output_dir.join("annotate"),
        _ => cfg.output_dir.join(stage.name()),
    }
}

/// Runs one stage under the output-directory lock.
pub fn run_stage(stage: Stage, cfg: &RunConfig) -> Result<StageOutcome> {
    let _lock = RunLock::acquire(&cfg.output_dir)?;
    run_unlocked(stage, cfg)
}

/// Runs every analysis stage in order under one lock.
pub fn run_all(cfg: &RunConfig) -> Result<Vec<StageOutcome>> {
    let _lock = RunLock::acquire(&cfg.output_dir)?;
    Stage::ANALYSIS.iter().map(|&s| run_unlocked(s, cfg)).collect()
}

fn run_unlocked(stage: Stage, cfg: &RunConfig) -> Result<StageOutcome> {
    match stage {
        Stage::Ingest => ingest(cfg),
        Stage::Extract => extract(cfg),
        Stage::Topics => topics(cfg),
        Stage::Embed => embed(cfg),
        Stage::Propensity => propensity(cfg),
        Stage::Match => matching(cfg),
        Stage::Estimate => estimate(cfg),
        Stage::Report => report(cfg),
        Stage::Synth => synthesize(cfg),
        Stage::AnnotateServe => annotation_pairs(cfg),
    }
}

/// Path of an artifact written by `producer`, or an error telling the user
/// to run it before `stage`.
pub fn artifact(cfg: &RunConfig, stage: Stage, producer: Stage, file: &str) -> Result<PathBuf> {
    let dir = stage_dir(cfg, producer);
    let path = dir.join(file);
    if Manifest::load(&dir)?.is_none() || !path.exists() {
        return Err(Error::MissingArtifact {
            stage: stage.name().into(),
            artifact: path.display().to_string(),
            run_first: producer.name().into(),
        });
    }
    Ok(path)
}

/// Skips `work` when the previous manifest describes the same work and its
/// outputs are untouched.
fn execute<F>(stage: Stage, cfg: &RunConfig, manifest: Manifest, work: F) -> Result<StageOutcome>
where
    F: FnOnce(&Path) -> Result<Vec<String>>,
{
    let dir = stage_dir(cfg, stage);
    if let Some(old) = Manifest::load(&dir)? {
        if old.same_work(&manifest) && old.outputs_intact(&dir) {
            return Ok(StageOutcome {
                stage,
                status: StageStatus::Skipped,
                dir,
                manifest: old,
            });
        }
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let manifest_path = dir.join(super::manifest::MANIFEST_FILE);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    }
    let outputs = work(&dir)?;
    let manifest = manifest.finish(&dir, &outputs)?;
    Ok(StageOutcome {
        stage,
        status: StageStatus::Ran,
        dir,
        manifest,
    })
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

fn bots(cfg: &RunConfig) -> Result<BotList> {
    match &cfg.paths.bots {
        Some(p) => BotList::load(&cfg.existing("paths.bots", p)?),
        None => Ok(BotList::default()),
    }
}

fn lexicon(cfg: &RunConfig) -> Result<GenderLexicon> {
    match &cfg.paths.lexicon {
        Some(p) => GenderLexicon::load(&cfg.existing("paths.lexicon", p)?),
        None => Ok(GenderLexicon::builtin()),
    }
}

fn normalizer(cfg: &RunConfig) -> Result<TextNormalizer> {
    match (&cfg.paths.stopwords, &cfg.paths.stems) {
        (None, None) => Ok(TextNormalizer::builtin()),
        (Some(s), Some(t)) => {
            TextNormalizer::load(&cfg.existing("paths.stopwords", s)?, &cfg.existing("paths.stems", t)?)
        }
        (Some(_), None) => Err(Error::Config {
            path: "paths.stems".into(),
            message: "must be set together with paths.stopwords".into(),
        }),
        (None, Some(_)) => Err(Error::Config {
            path: "paths.stopwords".into(),
            message: "must be set together with paths.stems".into(),
        }),
    }
}

/// Hashes an optional resource file, or records that the builtin one is used.
fn optional_input(m: &mut Manifest, name: &str, path: Option<&PathBuf>) -> Result<()> {
    match path {
        Some(p) => m.input_file(name, p),
        None => {
            m.input_hash(name, "builtin".into());
            Ok(())
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IngestReport {
    load: LoadReport,
    filter: FilterReport,
}

fn ingest(cfg: &RunConfig) -> Result<StageOutcome> {
    let subs = cfg.require_path("paths.submissions", cfg.paths.submissions.as_ref())?;
    let coms = cfg.require_path("paths.comments", cfg.paths.comments.as_ref())?;
    let bot_list = bots(cfg)?;
    let mut m = Manifest::new(
        "ingest",
        cfg.seed,
        &serde_json::json!({ "fields": cfg.fields, "filter": cfg.study.filter }),
    )?;
    m.input_file("submissions", &subs)?;
    m.input_file("comments", &coms)?;
    optional_input(&mut m, "bots", cfg.paths.bots.as_ref())?;
    execute(Stage::Ingest, cfg, m, |dir| {
        let loaded = load_corpus(&subs, &coms, &cfg.fields)?;
        let filtered = filter_corpus(&loaded.documents, &loaded.comments, &bot_list, cfg.study.filter);
        write_jsonl(&dir.join("documents.jsonl"), &filtered.documents)?;
        write_jsonl(&dir.join("comments.jsonl"), &filtered.comments)?;
        write_json(
            &dir.join("report.json"),
            &IngestReport {
                load: loaded.report,
                filter: filtered.report,
            },
        )?;
        Ok(vec![
            "documents.jsonl".into(),
            "comments.jsonl".into(),
            "report.json".into(),
        ])
    })
}

fn extract(cfg: &RunConfig) -> Result<StageOutcome> {
    let docs_path = artifact(cfg, Stage::Extract, Stage::Ingest, "documents.jsonl")?;
    let coms_path = artifact(cfg, Stage::Extract, Stage::Ingest, "comments.jsonl")?;
    let mut m = Manifest::new("extract", cfg.seed, &cfg.study.extraction)?;
    m.input_file("documents", &docs_path)?;
    m.input_file("comments", &coms_path)?;
    execute(Stage::Extract, cfg, m, |dir| {
        let docs: Vec<Document> = read_jsonl(&docs_path)?;
        let comments: Vec<Comment> = read_jsonl(&coms_path)?;
        let (records, report) = extract_records(&docs, &comments, &cfg.study.extraction);
        write_records(&dir.join("records.csv"), &records)?;
        write_json(&dir.join("report.json"), &report)?;
        Ok(vec!["records.csv".into(), "report.json".into()])
    })
}

/// Rebuilds the analysis sample from the ingest and extract artifacts.
pub fn load_sample(cfg: &RunConfig, stage: Stage) -> Result<(Sample, Vec<(String, String)>)> {
    let docs_path = artifact(cfg, stage, Stage::Ingest, "documents.jsonl")?;
    let records_path = artifact(cfg, stage, Stage::Extract, "records.csv")?;
    let ingest_report: IngestReport = read_json(&artifact(cfg, stage, Stage::Ingest, "report.json")?)?;
    let extraction: ExtractionReport = read_json(&artifact(cfg, stage, Stage::Extract, "report.json")?)?;
    let docs: Vec<Document> = read_jsonl(&docs_path)?;
    let all_records: Vec<ExtractedRecord> = read_records(&records_path)?;
    let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut sample = Sample {
        filter: ingest_report.filter,
        extraction,
        ..Sample::default()
    };
    for r in all_records.iter().filter(|r| r.is_complete()) {
        let d = by_id
            .get(r.doc_id.as_str())
            .ok_or_else(|| Error::invalid(format!("record for unknown document `{}`", r.doc_id)))?;
        sample.documents.push((*d).clone());
        sample.records.push(r.clone());
    }
    sample.all_records = all_records;
    let inputs = vec![
        ("documents".to_string(), hash_file(&docs_path)?),
        ("records".to_string(), hash_file(&records_path)?),
    ];
    Ok((sample, inputs))
}

fn sample_manifest(stage: Stage, cfg: &RunConfig, params: &impl Serialize) -> Result<(Sample, Manifest)> {
    let (sample, inputs) = load_sample(cfg, stage)?;
    let mut m = Manifest::new(stage.name(), cfg.seed, params)?;
    for (name, hash) in inputs {
        m.input_hash(&name, hash);
    }
    Ok((sample, m))
}

fn topics(cfg: &RunConfig) -> Result<StageOutcome> {
    let (sample, mut m) = sample_manifest(Stage::Topics, cfg, &cfg.study.topics)?;
    optional_input(&mut m, "stopwords", cfg.paths.stopwords.as_ref())?;
    optional_input(&mut m, "stems", cfg.paths.stems.as_ref())?;
    let norm = normalizer(cfg)?;
    execute(Stage::Topics, cfg, m, |dir| {
        let result = study::topics_step(
            &sample.documents,
            &norm,
            &cfg.study.topics,
            step_seed(cfg.seed, Step::Topics),
        )?;
        result.model.save(&dir.join("model.json"))?;
        write_json(&dir.join("selection.json"), &result.selection)?;
        write_jsonl(&dir.join("assignments.jsonl"), &result.assignments)?;
        Ok(vec![
            "model.json".into(),
            "selection.json".into(),
            "assignments.jsonl".into(),
        ])
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbedReport {
    source: EmbeddingSource,
    rows: usize,
    dim: usize,
    zero_rows: usize,
    import: Option<ImportReport>,
}

fn embed(cfg: &RunConfig) -> Result<StageOutcome> {
    let (sample, mut m) = sample_manifest(Stage::Embed, cfg, &cfg.study.embedding)?;
    let external = match &cfg.paths.embeddings {
        Some(p) => Some(cfg.existing("paths.embeddings", p)?),
        None => None,
    };
    optional_input(&mut m, "embeddings", external.as_ref())?;
    execute(Stage::Embed, cfg, m, |dir| {
        let (matrix, import) = match &external {
            Some(p) => {
                let ids: Vec<String> = sample.documents.iter().map(|d| d.id.clone()).collect();
                let (m, r) = import_embeddings(p, &ids)?;
                (m, Some(r))
            }
            None => (
                study::embed_step(
                    &sample.documents,
                    &cfg.study.embedding,
                    step_seed(cfg.seed, Step::Embed),
                )?
                .0,
                None,
            ),
        };
        write_binary(&dir.join("embeddings.bin"), &matrix)?;
        write_json(
            &dir.join("report.json"),
            &EmbedReport {
                source: matrix.source,
                rows: matrix.len(),
                dim: matrix.dim,
                zero_rows: matrix.zero_rows.len(),
                import,
            },
        )?;
        Ok(vec!["embeddings.bin".into(), "report.json".into()])
    })
}

/// The stored embeddings, in sample order where present.
fn load_embeddings(cfg: &RunConfig, stage: Stage, sample: &Sample) -> Result<(EmbeddingMatrix, PathBuf)> {
    let path = artifact(cfg, stage, Stage::Embed, "embeddings.bin")?;
    let ids: Vec<String> = sample.documents.iter().map(|d| d.id.clone()).collect();
    let (matrix, _) = import_embeddings(&path, &ids)?;
    Ok((matrix, path))
}

fn propensity(cfg: &RunConfig) -> Result<StageOutcome> {
    let params = serde_json::json!({ "propensity": cfg.study.propensity, "embedding": cfg.study.embedding });
    let (sample, mut m) = sample_manifest(Stage::Propensity, cfg, &params)?;
    optional_input(&mut m, "lexicon", cfg.paths.lexicon.as_ref())?;
    let lex = lexicon(cfg)?;
    execute(Stage::Propensity, cfg, m, |dir| {
        // Swap augmentation needs vectors of rewritten text, so the scorer
        // always reads through the builtin embedder.
        let (_, embedder) = study::embed_step(
            &sample.documents,
            &cfg.study.embedding,
            step_seed(cfg.seed, Step::Embed),
        )?;
        let result = study::propensity_step(
            &sample,
            &embedder,
            cfg.study.embedding.text,
            &lex,
            &cfg.study.propensity,
            step_seed(cfg.seed, Step::Propensity),
        )?;
        result.model.save(&dir.join("model.json"))?;
        write_scores(&dir.join("scores.csv"), &result.scores)?;
        write_json(&dir.join("caliper.json"), &result.caliper)?;
        Ok(vec!["model.json".into(), "scores.csv".into(), "caliper.json".into()])
    })
}

/// One matched-pair file per distance cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFile {
    pub d_max: f64,
    pub file: String,
    pub n_pairs: usize,
}

fn matching(cfg: &RunConfig) -> Result<StageOutcome> {
    let mcfg = &cfg.study.matching;
    let params = serde_json::json!({ "d_max_sweep": mcfg.d_max_sweep, "age_delta": mcfg.age_delta });
    let (sample, mut m) = sample_manifest(Stage::Match, cfg, &params)?;
    let (embeddings, emb_path) = load_embeddings(cfg, Stage::Match, &sample)?;
    let scores_path = artifact(cfg, Stage::Match, Stage::Propensity, "scores.csv")?;
    let caliper_path = artifact(cfg, Stage::Match, Stage::Propensity, "caliper.json")?;
    let topics_path = artifact(cfg, Stage::Match, Stage::Topics, "assignments.jsonl")?;
    m.input_file("embeddings", &emb_path)?;
    m.input_file("scores", &scores_path)?;
    m.input_file("caliper", &caliper_path)?;
    m.input_file("assignments", &topics_path)?;
    execute(Stage::Match, cfg, m, |dir| {
        let scores = read_scores(&scores_path)?;
        let caliper: CaliperSpec = read_json(&caliper_path)?;
        let assignments: Vec<TopicAssignment> = read_jsonl(&topics_path)?;
        let logits: HashMap<&str, f64> = scores.iter().map(|s| (s.doc_id.as_str(), s.logit)).collect();
        let labels: HashMap<&str, TopicLabel> = assignments.iter().map(|a| (a.doc_id.as_str(), a.label)).collect();
        let table = study::unit_table(&sample, &embeddings, &logits, &labels)?;
        let sweep = match_sweep(
            &table.treated,
            &table.control,
            caliper.c,
            mcfg.age_delta,
            &mcfg.d_max_sweep,
        )?;
        let mut outputs = Vec::new();
        let mut index = Vec::new();
        for (d, pairs) in &sweep {
            let file = format!("pairs_d{d}.csv");
            write_pairs(&dir.join(&file), pairs)?;
            index.push(SweepFile {
                d_max: *d,
                file: file.clone(),
                n_pairs: pairs.len(),
            });
            outputs.push(file);
        }
        write_json(&dir.join("sweep.json"), &index)?;
        outputs.push("sweep.json".into());
        Ok(outputs)
    })
}

/// Matched pairs per distance cap.
pub type SweepPairs = Vec<(f64, Vec<MatchedPair>)>;

/// The matched pairs of every distance cap, with the files read.
pub fn load_sweep(cfg: &RunConfig, stage: Stage) -> Result<(SweepPairs, Vec<PathBuf>)> {
    let index_path = artifact(cfg, stage, Stage::Match, "sweep.json")?;
    let index: Vec<SweepFile> = read_json(&index_path)?;
    let mut files = vec![index_path];
    let mut sweep = Vec::new();
    for f in index {
        let path = artifact(cfg, stage, Stage::Match, &f.file)?;
        sweep.push((f.d_max, read_pairs(&path)?));
        files.push(path);
    }
    Ok((sweep, files))
}

/// Bootstrap estimate at one distance cap; `None` with too few pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEstimate {
    pub d_max: f64,
    pub estimate: Option<SattEstimate>,
}

fn estimate(cfg: &RunConfig) -> Result<StageOutcome> {
    let (sweep, files) = load_sweep(cfg, Stage::Estimate)?;
    let mut m = Manifest::new("estimate", cfg.seed, &cfg.study.matching.bootstrap)?;
    for f in &files {
        m.input_file(&f.file_name().unwrap_or_default().to_string_lossy(), f)?;
    }
    execute(Stage::Estimate, cfg, m, |dir| {
        let (overall, rows) = estimate_sweep(
            &sweep,
            &cfg.study.matching.bootstrap,
            step_seed(cfg.seed, Step::Estimate),
        )?;
        write_sweep(&dir.join("sweep.csv"), &rows)?;
        let estimates: Vec<SweepEstimate> = sweep
            .iter()
            .zip(overall)
            .map(|((d, _), e)| SweepEstimate { d_max: *d, estimate: e })
            .collect();
        write_json(&dir.join("estimates.json"), &estimates)?;
        Ok(vec!["sweep.csv".into(), "estimates.json".into()])
    })
}

fn report(cfg: &RunConfig) -> Result<StageOutcome> {
    let params = serde_json::json!({ "report": cfg.report, "d_max": cfg.study.matching.d_max, "level": cfg.study.matching.bootstrap.level });
    let (sample, mut m) = sample_manifest(Stage::Report, cfg, &params)?;
    let model_path = artifact(cfg, Stage::Report, Stage::Topics, "model.json")?;
    let topics_path = artifact(cfg, Stage::Report, Stage::Topics, "assignments.jsonl")?;
    let scores_path = artifact(cfg, Stage::Report, Stage::Propensity, "scores.csv")?;
    let sweep_path = artifact(cfg, Stage::Report, Stage::Estimate, "sweep.csv")?;
    let estimates_path = artifact(cfg, Stage::Report, Stage::Estimate, "estimates.json")?;
    let (sweep, files) = load_sweep(cfg, Stage::Report)?;
    for (name, p) in [
        ("topic_model", &model_path),
        ("assignments", &topics_path),
        ("scores", &scores_path),
        ("sweep", &sweep_path),
        ("estimates", &estimates_path),
    ] {
        m.input_file(name, p)?;
    }
    for f in &files {
        m.input_file(
            &format!("match/{}", f.file_name().unwrap_or_default().to_string_lossy()),
            f,
        )?;
    }
    optional_input(&mut m, "topic_labels", cfg.paths.topic_labels.as_ref())?;
    execute(Stage::Report, cfg, m, |dir| {
        let names = match &cfg.paths.topic_labels {
            Some(p) => {
                let p = cfg.existing("paths.topic_labels", p)?;
                let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                crate::topics::parse_label_map(&text)?
            }
            None => Default::default(),
        };
        let mut sweep_rows: Vec<SweepRow> = Vec::new();
        let mut r = csv::Reader::from_path(&sweep_path).map_err(|e| crate::extraction::csv_io(&sweep_path, e))?;
        for row in r.deserialize() {
            sweep_rows.push(row?);
        }
        let model = TopicModel::load(&model_path)?;
        let assignments: Vec<TopicAssignment> = read_jsonl(&topics_path)?;
        let scores = read_scores(&scores_path)?;
        let estimates: Vec<SweepEstimate> = read_json(&estimates_path)?;
        let inputs = ReportInputs {
            sample: &sample,
            model: &model,
            assignments: &assignments,
            scores: &scores,
            sweep: &sweep,
            sweep_rows: &sweep_rows,
            estimates: &estimates,
            topic_names: &names,
        };
        write_report(dir, &inputs, &cfg.report, &cfg.study.matching)
    })
}

fn synthesize(cfg: &RunConfig) -> Result<StageOutcome> {
    let section = cfg.synth.as_ref().ok_or_else(|| Error::Config {
        path: "synth".into(),
        message: "the synth stage needs a [synth] section".into(),
    })?;
    let synth_cfg = section.resolve(cfg.seed);
    let m = Manifest::new("synth", cfg.seed, &synth_cfg)?;
    execute(Stage::Synth, cfg, m, |dir| {
        let corpus = synth::generate(&synth_cfg)?;
        synth::write_corpus(&corpus, dir)?;
        Ok(synth::CORPUS_FILES.iter().map(|s| s.to_string()).collect())
    })
}

/// Draws the pairs to annotate from the headline match and writes them
/// (without distances or verdicts) for the annotation service.
fn annotation_pairs(cfg: &RunConfig) -> Result<StageOutcome> {
    let (sweep, files) = load_sweep(cfg, Stage::AnnotateServe)?;
    let docs_path = artifact(cfg, Stage::AnnotateServe, Stage::Ingest, "documents.jsonl")?;
    let mut m = Manifest::new("annotate-serve", cfg.seed, &cfg.annotate)?;
    m.input_file("documents", &docs_path)?;
    for f in &files {
        m.input_file(&f.file_name().unwrap_or_default().to_string_lossy(), f)?;
    }
    execute(Stage::AnnotateServe, cfg, m, |dir| {
        let d_max = cfg.study.matching.d_max;
        let pairs = sweep
            .iter()
            .find(|(d, _)| *d == d_max)
            .map(|(_, p)| p.as_slice())
            .unwrap_or_default();
        let docs: Vec<Document> = read_jsonl(&docs_path)?;
        let (main, practice) =
            sample_annotation_pairs(pairs, &docs, cfg.annotate.pairs, cfg.annotate.practice_pairs, cfg.seed)?;
        write_json(&dir.join("pairs.json"), &main)?;
        write_json(&dir.join("practice.json"), &practice)?;
        Ok(vec!["pairs.json".into(), "practice.json".into()])
    })
}

/// Seeded draw of `n` pairs plus `practice` further pairs. Pair ids are
/// the position in the draw, so they reveal nothing about the match.
pub fn sample_annotation_pairs(
    pairs: &[MatchedPair],
    docs: &[Document],
    n: usize,
    practice: usize,
    seed: u64,
) -> Result<(Vec<AnnotationPair>, Vec<AnnotationPair>)> {
    if pairs.len() < n + practice {
        return Err(Error::TooFew {
            what: "annotation sample (matched pairs)",
            needed: n + practice,
            got: pairs.len(),
        });
    }
    let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let shown = |id: &str| -> Result<PairDoc> {
        let d = by_id
            .get(id)
            .ok_or_else(|| Error::invalid(format!("matched document `{id}` is not in the corpus")))?;
        Ok(PairDoc {
            doc_id: d.id.clone(),
            title: d.title.clone(),
            body: d.body.clone(),
        })
    };
    let mut order: Vec<&MatchedPair> = pairs.iter().collect();
    order.sort_by(|a, b| a.treated_id.cmp(&b.treated_id));
    order.shuffle(&mut stream(seed, &[site::PAIR_SAMPLE, key_of("annotation")]));
    let make = |(i, p): (usize, &&MatchedPair), prefix: &str| -> Result<AnnotationPair> {
        Ok(AnnotationPair {
            pair_id: format!("{prefix}{:04}", i + 1),
            treated: shown(&p.treated_id)?,
            control: shown(&p.control_id)?,
        })
    };
    let main = order[..n]
        .iter()
        .enumerate()
        .map(|x| make(x, "p"))
        .collect::<Result<_>>()?;
    let prac = order[n..n + practice]
        .iter()
        .enumerate()
        .map(|x| make(x, "practice-"))
        .collect::<Result<_>>()?;
    Ok((main, prac))
}

/// Reads the files written by the `annotate-serve` preparation.
pub fn load_annotation_pairs(cfg: &RunConfig) -> Result<(Vec<AnnotationPair>, Vec<AnnotationPair>)> {
    let main = read_json(&artifact(
        cfg,
        Stage::AnnotateServe,
        Stage::AnnotateServe,
        "pairs.json",
    )?)?;
    let practice = read_json(&artifact(
        cfg,
        Stage::AnnotateServe,
        Stage::AnnotateServe,
        "practice.json",
    )?)?;
    Ok((main, practice))
}
