//! Synthetic corpora with a known direct effect.
//!
//! Each document's situation depends on the author's group through a
//! per-situation treated share, and its outcome depends on the situation's
//! base rate plus an additive direct effect for treated authors. Situations
//! use disjoint vocabularies so that text similarity can recover them.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Comment, Document};
use crate::error::{Error, Result};
use crate::extraction::Gender;
use crate::rng::{site, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SituationSpec {
    pub name: String,
    pub vocabulary: Vec<String>,
    /// Inclusive range of body lengths in words, before the self-description.
    pub length: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeModel {
    pub treated_mean: f64,
    pub treated_sd: f64,
    pub control_mean: f64,
    pub control_sd: f64,
}

impl Default for AgeModel {
    fn default() -> Self {
        AgeModel {
            treated_mean: 30.0,
            treated_sd: 6.0,
            control_mean: 30.0,
            control_sd: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_docs: usize,
    /// Added to the outcome probability of treated authors.
    pub direct_effect: f64,
    /// Treated share within each situation.
    pub gender_situation_skew: Vec<f64>,
    pub situation_base_rates: Vec<f64>,
    pub situations: Vec<SituationSpec>,
    #[serde(default)]
    pub age_model: AgeModel,
    /// Words shared by every situation.
    pub filler: Vec<String>,
    #[serde(default = "default_filler_fraction")]
    pub filler_fraction: f64,
    pub seed: u64,
}

fn default_filler_fraction() -> f64 {
    0.3
}

pub const MIN_AGE: u8 = 18;
pub const MAX_AGE: u8 = 70;

impl SynthConfig {
    /// Two situations with treated shares 0.7 and 0.3 and base rates 0.6
    /// and 0.2, so that the crude association is far from the direct effect.
    pub fn two_situations(n_docs: usize, direct_effect: f64, seed: u64) -> Self {
        let vocab = |block: usize| pseudo_words(block * 1000, 40);
        SynthConfig {
            n_docs,
            direct_effect,
            gender_situation_skew: vec![0.7, 0.3],
            situation_base_rates: vec![0.6, 0.2],
            situations: vec![
                SituationSpec {
                    name: "household".into(),
                    vocabulary: vocab(1),
                    length: (110, 150),
                },
                SituationSpec {
                    name: "workplace".into(),
                    vocabulary: vocab(2),
                    length: (110, 150),
                },
            ],
            age_model: AgeModel::default(),
            filler: pseudo_words(0, 20),
            filler_fraction: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.situations.len();
        if k == 0 {
            return Err(Error::invalid("synthetic config has no situations"));
        }
        if self.n_docs < 10 {
            return Err(Error::TooFew {
                what: "synthetic corpus (documents)",
                needed: 10,
                got: self.n_docs,
            });
        }
        if self.gender_situation_skew.len() != k || self.situation_base_rates.len() != k {
            return Err(Error::invalid(format!(
                "{k} situations but {} skews and {} base rates",
                self.gender_situation_skew.len(),
                self.situation_base_rates.len()
            )));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(-1.0..=1.0).contains(&self.direct_effect) {
            return Err(Error::invalid(format!(
                "direct_effect {} outside [-1, 1]",
                self.direct_effect
            )));
        }
        if !self
            .gender_situation_skew
            .iter()
            .chain(&self.situation_base_rates)
            .all(|&v| unit(v))
            || !unit(self.filler_fraction)
        {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        let treated_mass: f64 = self.gender_situation_skew.iter().sum();
        if treated_mass == 0.0 || treated_mass == k as f64 {
            return Err(Error::invalid("skews leave one group empty"));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.situations {
            if s.vocabulary.is_empty() || s.length.0 == 0 || s.length.0 > s.length.1 {
                return Err(Error::invalid(format!(
                    "situation `{}` needs words and a valid length range",
                    s.name
                )));
            }
            for w in &s.vocabulary {
                if !seen.insert(w.as_str()) {
                    return Err(Error::invalid(format!("word `{w}` appears in two situations")));
                }
            }
        }
        if self.filler_fraction > 0.0 && self.filler.is_empty() {
            return Err(Error::invalid("filler_fraction > 0 needs filler words"));
        }
        let a = &self.age_model;
        if !(a.treated_sd >= 0.0 && a.control_sd >= 0.0) {
            return Err(Error::invalid("age standard deviations must be nonnegative"));
        }
        Ok(())
    }

    /// Number of treated documents (situations are equally likely a priori).
    pub fn n_treated(&self) -> usize {
        let share = self.gender_situation_skew.iter().sum::<f64>() / self.situations.len() as f64;
        (self.n_docs as f64 * share).round() as usize
    }

    /// P(situation | treated) and P(situation | control).
    pub fn situation_given_group(&self) -> (Vec<f64>, Vec<f64>) {
        let t: f64 = self.gender_situation_skew.iter().sum();
        let c: f64 = self.gender_situation_skew.iter().map(|s| 1.0 - s).sum();
        (
            self.gender_situation_skew.iter().map(|s| s / t).collect(),
            self.gender_situation_skew.iter().map(|s| (1.0 - s) / c).collect(),
        )
    }

    fn rate(&self, situation: usize, treated: bool) -> f64 {
        let shift = if treated { self.direct_effect } else { 0.0 };
        (self.situation_base_rates[situation] + shift).clamp(0.0, 1.0)
    }

    /// Population outcome rates of the treated and control groups.
    pub fn group_rates(&self) -> (f64, f64) {
        let (pt, pc) = self.situation_given_group();
        let k = self.situations.len();
        (
            (0..k).map(|s| pt[s] * self.rate(s, true)).sum(),
            (0..k).map(|s| pc[s] * self.rate(s, false)).sum(),
        )
    }

    /// Odds ratio between groups implied by the configuration.
    pub fn crude_odds_ratio(&self) -> f64 {
        let (t, c) = self.group_rates();
        (t / (1.0 - t)) / (c / (1.0 - c))
    }
}

/// The effect of treatment averaged over the treated situation mix.
pub fn oracle_satt(config: &SynthConfig) -> f64 {
    let (pt, _) = config.situation_given_group();
    (0..config.situations.len())
        .map(|s| pt[s] * (config.rate(s, true) - config.rate(s, false)))
        .sum()
}

/// Deterministic pronounceable nonsense words, distinct across `start`
/// offsets that are at least `n` apart.
pub fn pseudo_words(start: usize, n: usize) -> Vec<String> {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let syl = C.len() * V.len();
    let space = syl * syl * syl;
    (start..start + n)
        .map(|i| {
            // 7919 is coprime to the 70^3 code space, so this is a bijection.
            let mut code = (i * 7919 + 12345) % space;
            let mut w = String::with_capacity(6);
            for _ in 0..3 {
                let s = code % syl;
                code /= syl;
                w.push(C[s / V.len()] as char);
                w.push(V[s % V.len()] as char);
            }
            w
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDocument {
    pub document: Document,
    pub treated: bool,
    pub gender: Gender,
    pub age: u8,
    pub situation: String,
    pub outcome_prob: f64,
    pub outcome: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub documents: Vec<SynthDocument>,
    pub comments: Vec<Comment>,
}

/// Author id used for the moderator comments mixed into the corpus.
pub const BOT_AUTHOR: &str = "AutoModerator";

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let n = config.n_docs;
    let mut treated = vec![false; n];
    treated[..config.n_treated()].iter_mut().for_each(|t| *t = true);
    treated.shuffle(&mut stream(config.seed, &[site::SYNTH, u64::MAX]));
    let (pt, pc) = config.situation_given_group();

    let docs: Vec<(SynthDocument, Vec<Comment>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(config.seed, &[site::SYNTH, i as u64]);
            let is_t = treated[i];
            let probs = if is_t { &pt } else { &pc };
            let s = pick(probs, rng.random());
            let spec = &config.situations[s];
            let (mean, sd) = if is_t {
                (config.age_model.treated_mean, config.age_model.treated_sd)
            } else {
                (config.age_model.control_mean, config.age_model.control_sd)
            };
            let age = Normal::new(mean, sd)
                .map(|d| d.sample(&mut rng))
                .unwrap_or(mean)
                .round()
                .clamp(f64::from(MIN_AGE), f64::from(MAX_AGE)) as u8;
            let gender = if is_t { Gender::M } else { Gender::F };
            let outcome_prob = config.rate(s, is_t);
            let outcome = u8::from(rng.random::<f64>() < outcome_prob);

            let len = rng.random_range(spec.length.0..=spec.length.1);
            let word = |rng: &mut rand_chacha::ChaCha8Rng| {
                if rng.random::<f64>() < config.filler_fraction {
                    config.filler[rng.random_range(0..config.filler.len())].as_str()
                } else {
                    spec.vocabulary[rng.random_range(0..spec.vocabulary.len())].as_str()
                }
            };
            let mut body = format!("I ({age}{}) need a verdict.", gender.as_str());
            for k in 0..len {
                body.push(' ');
                body.push_str(word(&mut rng));
                if k % 12 == 11 {
                    body.push('.');
                }
            }
            body.push('.');
            let title = format!(
                "AITA for the {} {} thing?",
                spec.vocabulary[rng.random_range(0..spec.vocabulary.len())],
                spec.vocabulary[rng.random_range(0..spec.vocabulary.len())]
            );
            let id = format!("s{i:06}");
            let document = Document::new(
                id.clone(),
                format!("author{i:06}"),
                1_500_000_000 + 60 * i as i64,
                title,
                body,
            );

            let verdict = if outcome == 1 { "YTA" } else { "NTA" };
            let mut comments = vec![Comment {
                id: format!("c{i:06}"),
                document_id: id.clone(),
                author_id: format!("voter{:04}", rng.random_range(0..5000)),
                body: format!("{verdict}. {} and {}.", word(&mut rng), word(&mut rng)),
                score: 10,
            }];
            if i % 10 == 0 {
                comments.push(Comment {
                    id: format!("m{i:06}"),
                    document_id: id,
                    author_id: BOT_AUTHOR.into(),
                    body: "NTA or YTA? Reply with a judgment to vote.".into(),
                    score: 1,
                });
            }
            let doc = SynthDocument {
                document,
                treated: is_t,
                gender,
                age,
                situation: spec.name.clone(),
                outcome_prob,
                outcome,
            };
            (doc, comments)
        })
        .collect();

    let mut documents = Vec::with_capacity(n);
    let mut comments = Vec::new();
    for (d, c) in docs {
        documents.push(d);
        comments.extend(c);
    }
    Ok(SynthCorpus { documents, comments })
}

fn pick(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// File names written by [`write_corpus`].
pub const SUBMISSIONS_FILE: &str = "submissions.jsonl";
pub const COMMENTS_FILE: &str = "comments.jsonl";
pub const TRUTH_FILE: &str = "truth.csv";
pub const BOTS_FILE: &str = "bots.txt";
pub const CORPUS_FILES: [&str; 4] = [SUBMISSIONS_FILE, COMMENTS_FILE, BOTS_FILE, TRUTH_FILE];

/// Writes submissions and comments in the default loader layout, plus the
/// ground truth and the bot list.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut subs = Vec::new();
    for d in &corpus.documents {
        let doc = &d.document;
        let rec = serde_json::json!({
            "id": doc.id,
            "author": doc.author_id,
            "created_utc": doc.created_at,
            "title": doc.title,
            "selftext": doc.body,
            "link_flair_text": doc.flair,
        });
        serde_json::to_writer(&mut subs, &rec)?;
        subs.push(b'\n');
    }
    let mut comm = Vec::new();
    for c in &corpus.comments {
        let rec = serde_json::json!({
            "id": c.id,
            "link_id": format!("t3_{}", c.document_id),
            "author": c.author_id,
            "body": c.body,
            "score": c.score,
        });
        serde_json::to_writer(&mut comm, &rec)?;
        comm.push(b'\n');
    }
    write_file(&dir.join(SUBMISSIONS_FILE), &subs)?;
    write_file(&dir.join(COMMENTS_FILE), &comm)?;
    write_file(&dir.join(BOTS_FILE), format!("{BOT_AUTHOR}\n").as_bytes())?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["doc_id", "treated", "situation", "age", "outcome_prob", "outcome"])?;
    for d in &corpus.documents {
        w.write_record([
            d.document.id.as_str(),
            if d.treated { "1" } else { "0" },
            d.situation.as_str(),
            &d.age.to_string(),
            &d.outcome_prob.to_string(),
            &d.outcome.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    write_file(&dir.join(TRUTH_FILE), &bytes)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
