//! The run configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::study::StudyConfig;
use crate::corpus::FieldMapping;
use crate::error::{Error, Result};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub fields: FieldMapping,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub synth: Option<SynthSection>,
    #[serde(default)]
    pub annotate: AnnotateConfig,
}

fn default_seed() -> u64 {
    1
}

/// Input files. Optional resources fall back to the builtin ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub submissions: Option<PathBuf>,
    pub comments: Option<PathBuf>,
    pub bots: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub stems: Option<PathBuf>,
    /// Precomputed document vectors; the builtin embedder is used when unset.
    pub embeddings: Option<PathBuf>,
    /// `label<TAB>name` lines naming topics in the report.
    pub topic_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub age_bins: usize,
    pub min_cell: u64,
    pub top_words: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            age_bins: 5,
            min_cell: 5,
            top_words: 10,
        }
    }
}

/// Where and what the `synth` stage generates. Without `corpus`, the
/// two-situation preset is used with `n_docs` and `direct_effect`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub out_dir: PathBuf,
    #[serde(default = "default_synth_docs")]
    pub n_docs: usize,
    #[serde(default)]
    pub direct_effect: f64,
    #[serde(default)]
    pub corpus: Option<SynthConfig>,
}

fn default_synth_docs() -> usize {
    4000
}

impl SynthSection {
    pub fn resolve(&self, seed: u64) -> SynthConfig {
        self.corpus
            .clone()
            .unwrap_or_else(|| SynthConfig::two_situations(self.n_docs, self.direct_effect, seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateConfig {
    /// Matched pairs drawn for annotation from the headline match.
    pub pairs: usize,
    /// Extra pairs every annotator rates first; excluded from the export.
    pub practice_pairs: usize,
    pub annotators: Vec<String>,
    /// Annotators allowed to record conflict resolutions.
    pub reviewers: Vec<String>,
    pub port: u16,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        AnnotateConfig {
            pairs: 100,
            practice_pairs: 0,
            annotators: Vec::new(),
            reviewers: Vec::new(),
            port: 8080,
        }
    }
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    /// Parses and validates; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_error("", e.to_string().trim_end()))?;
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_error(if path == "." { "" } else { &path }, e.inner().message().to_string())
        })?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.output_dir);
        let p = &mut self.paths;
        for slot in [
            &mut p.submissions,
            &mut p.comments,
            &mut p.bots,
            &mut p.lexicon,
            &mut p.stopwords,
            &mut p.stems,
            &mut p.embeddings,
            &mut p.topic_labels,
        ]
        .into_iter()
        .flatten()
        {
            join(slot);
        }
        if let Some(s) = &mut self.synth {
            join(&mut s.out_dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.study;
        let check = |ok: bool, path: &str, msg: &str| if ok { Ok(()) } else { Err(config_error(path, msg)) };

        check(
            s.filter.min_words <= s.filter.max_words,
            "study.filter",
            "min_words exceeds max_words",
        )?;
        check(
            !s.topics.k_candidates.is_empty(),
            "study.topics.k_candidates",
            "must not be empty",
        )?;
        check(
            s.topics.k_candidates.iter().all(|&k| k >= 2),
            "study.topics.k_candidates",
            "every K must be at least 2",
        )?;
        check(
            s.topics.folds >= 2 || s.topics.k_candidates.len() == 1,
            "study.topics.folds",
            "need at least 2 folds to compare K",
        )?;
        check(
            s.topics.threshold > 0.0 && s.topics.threshold <= 1.0,
            "study.topics.threshold",
            "must lie in (0, 1]",
        )?;
        check(
            s.topics.lda.iterations >= 1,
            "study.topics.lda.iterations",
            "must be positive",
        )?;
        check(
            s.topics.prune.min_df >= 1 && s.topics.prune.max_df_fraction > 0.0 && s.topics.prune.max_df_fraction <= 1.0,
            "study.topics.prune",
            "need min_df >= 1 and max_df_fraction in (0, 1]",
        )?;
        check(s.embedding.dims >= 1, "study.embedding.dims", "must be positive")?;
        check(
            s.embedding.reduce_to.is_none_or(|r| r >= 1 && r <= s.embedding.dims),
            "study.embedding.reduce_to",
            "must lie in 1..=dims",
        )?;
        let p = &s.propensity;
        check(p.epochs >= 1, "study.propensity.epochs", "must be positive")?;
        check(
            p.learning_rate > 0.0 && p.learning_rate.is_finite(),
            "study.propensity.learning_rate",
            "must be positive",
        )?;
        check(p.l2 >= 0.0, "study.propensity.l2", "must be non-negative")?;
        check(
            (0.0..=1.0).contains(&p.aug_prob),
            "study.propensity.aug_prob",
            "must lie in [0, 1]",
        )?;
        check(
            p.holdout_fraction > 0.0 && p.holdout_fraction < 1.0,
            "study.propensity.holdout_fraction",
            "must lie in (0, 1)",
        )?;
        let m = &s.matching;
        check(
            !m.d_max_sweep.is_empty(),
            "study.matching.d_max_sweep",
            "must not be empty",
        )?;
        check(
            m.d_max_sweep.iter().all(|d| *d > 0.0 && *d <= 2.0),
            "study.matching.d_max_sweep",
            "distances lie in (0, 2]",
        )?;
        check(
            m.d_max_sweep.contains(&m.d_max),
            "study.matching.d_max",
            "must be one of d_max_sweep",
        )?;
        check(m.bootstrap.b >= 1, "study.matching.bootstrap.b", "must be positive")?;
        check(
            m.bootstrap.level > 0.0 && m.bootstrap.level < 1.0,
            "study.matching.bootstrap.level",
            "must lie in (0, 1)",
        )?;
        check(self.report.age_bins >= 1, "report.age_bins", "must be positive")?;
        check(self.annotate.pairs >= 1, "annotate.pairs", "must be positive")?;
        let mut names = self.annotate.annotators.clone();
        names.sort();
        names.dedup();
        check(
            names.len() == self.annotate.annotators.len(),
            "annotate.annotators",
            "names must be distinct",
        )?;
        check(
            self.annotate
                .reviewers
                .iter()
                .all(|r| self.annotate.annotators.contains(r)),
            "annotate.reviewers",
            "every reviewer must be an annotator",
        )?;
        if let Some(synth) = &self.synth {
            synth
                .resolve(self.seed)
                .validate()
                .map_err(|e| config_error("synth", e.to_string()))?;
        }
        Ok(())
    }

    /// A required input path, checked to exist.
    pub fn require_path(&self, field: &str, path: Option<&PathBuf>) -> Result<PathBuf> {
        let path = path.ok_or_else(|| config_error(field, "required by this stage but not set"))?;
        self.existing(field, path)
    }

    pub fn existing(&self, field: &str, path: &Path) -> Result<PathBuf> {
        if path.exists() {
            Ok(path.to_path_buf())
        } else {
            Err(config_error(field, format!("{} does not exist", path.display())))
        }
    }
}
