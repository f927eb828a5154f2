//! Logistic propensity scorer over document vectors, trained with
//! gendered-word swap augmentation, and the logit caliper.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, TextEmbedder};
use crate::error::{Error, Result};
use crate::extraction::{extract_demographics, lexicon::swap_draw, swap_all, GenderLexicon};
use crate::rng::{self, site};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropensityConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub aug_prob: f64,
    pub holdout_fraction: f64,
    pub patience: usize,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        PropensityConfig {
            epochs: 300,
            learning_rate: 2.0,
            l2: 1e-4,
            aug_prob: 0.5,
            holdout_fraction: 0.1,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub aug_prob: f64,
    pub seed: u64,
    pub best_holdout_loss: Option<f64>,
    pub n_train: usize,
    pub n_holdout: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// (treated, control).
    pub class_weights: (f64, f64),
    pub meta: TrainingMeta,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of a logit against a label, computed without overflow.
fn log_loss(z: f64, y: bool) -> f64 {
    let m = if y { -z } else { z };
    m.max(0.0) + (-m.abs()).exp().ln_1p()
}

impl PropensityModel {
    pub fn logit(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: v.len(),
            });
        }
        Ok(self.weights.iter().zip(v).map(|(w, x)| w * x).sum::<f64>() + self.bias)
    }

    pub fn predict(&self, v: &[f64]) -> Result<f64> {
        self.logit(v).map(sigmoid)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format: FORMAT.into(),
            version: VERSION,
            model: self.clone(),
        };
        fs::write(path, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(Error::invalid(format!(
                "{}: unsupported propensity model format",
                path.display()
            )));
        }
        Ok(file.model)
    }
}

pub fn predict_propensity(model: &PropensityModel, v: &[f64]) -> Result<f64> {
    model.predict(v)
}

const FORMAT: &str = "situmatch-propensity";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: PropensityModel,
}

/// One training document. Its swap draws are keyed by a hash of `id`.
pub struct TrainingText<'a> {
    pub id: &'a str,
    pub text: &'a str,
    pub treated: bool,
}

/// Trains the scorer. Each epoch every training document is either used as
/// is or with all lexicon words swapped (one draw per document and epoch),
/// embedded, and fed to one full-batch gradient step on the class-weighted
/// logistic loss. A seeded 10% slice drives early stopping through its
/// expected loss under the same augmentation, so stopping never rewards
/// reliance on lexicon words; the best weights seen are returned.
pub fn train_propensity(
    examples: &[TrainingText<'_>],
    lexicon: &GenderLexicon,
    embedder: &dyn TextEmbedder,
    config: &PropensityConfig,
    seed: u64,
) -> Result<PropensityModel> {
    if let Some(e) = examples.iter().find(|e| extract_demographics("", e.text).is_some()) {
        return Err(Error::Leakage(e.id.to_string()));
    }
    if !(0.0..=1.0).contains(&config.aug_prob) || !(0.0..1.0).contains(&config.holdout_fraction) {
        return Err(Error::invalid(
            "aug_prob must be in [0,1] and holdout_fraction in [0,1)",
        ));
    }
    let n_treated = examples.iter().filter(|e| e.treated).count();
    if n_treated == 0 || n_treated == examples.len() {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng::stream(seed, &[site::HOLDOUT]));
    let n_hold = (examples.len() as f64 * config.holdout_fraction).round() as usize;
    let (hold, train) = order.split_at(n_hold);
    let mut train = train.to_vec();
    let mut hold = hold.to_vec();
    train.sort_unstable();
    hold.sort_unstable();
    if train.iter().all(|&i| examples[i].treated) || train.iter().all(|&i| !examples[i].treated) {
        return Err(Error::SingleClass);
    }

    let original: Vec<Vec<f64>> = examples.par_iter().map(|e| embedder.embed(e.text)).collect();
    let swapped: Vec<Vec<f64>> = if config.aug_prob > 0.0 {
        examples
            .par_iter()
            .map(|e| embedder.embed(&swap_all(e.text, lexicon)))
            .collect()
    } else {
        Vec::new()
    };
    let dim = embedder.dim();
    let keys: Vec<u64> = train.iter().map(|&i| rng::key_of(examples[i].id)).collect();

    let t_train = train.iter().filter(|&&i| examples[i].treated).count();
    let n = train.len() as f64;
    let class_weights = (n / (2.0 * t_train as f64), n / (2.0 * (train.len() - t_train) as f64));
    let weight_of = |treated: bool| if treated { class_weights.0 } else { class_weights.1 };

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut since_best = 0;
    let mut epochs_run = 0;

    let weighted_loss = |w: &[f64], b: f64, idx: &[usize]| -> f64 {
        let parts: Vec<(f64, f64)> = idx
            .par_chunks(256)
            .map(|chunk| {
                chunk.iter().fold((0.0, 0.0), |(l, s), &i| {
                    let y = examples[i].treated;
                    let mut loss = log_loss(dot(w, &original[i]) + b, y);
                    if config.aug_prob > 0.0 {
                        let flipped = log_loss(dot(w, &swapped[i]) + b, y);
                        loss = (1.0 - config.aug_prob) * loss + config.aug_prob * flipped;
                    }
                    let cw = weight_of(y);
                    (l + cw * loss, s + cw)
                })
            })
            .collect();
        let (l, s) = parts.iter().fold((0.0, 0.0), |(a, b), (l, s)| (a + l, b + s));
        l / s
    };
    // The untrained model is a candidate too: training may never help.
    let start = (!hold.is_empty()).then(|| weighted_loss(&w, b, &hold));
    let mut best = (w.clone(), b, 0usize, start);

    for epoch in 0..config.epochs {
        let positions: Vec<usize> = (0..train.len()).collect();
        let partials: Vec<(Vec<f64>, f64, f64, f64)> = positions
            .par_chunks(256)
            .map(|chunk| {
                let mut g = vec![0.0; dim];
                let (mut gb, mut loss, mut total) = (0.0, 0.0, 0.0);
                for &p in chunk {
                    let i = train[p];
                    let flip = config.aug_prob > 0.0
                        && swap_draw(
                            config.aug_prob,
                            rng::derive_seed(seed, &[site::SWAP, keys[p], epoch as u64]),
                        );
                    let x = if flip { &swapped[i] } else { &original[i] };
                    let y = examples[i].treated;
                    let cw = weight_of(y);
                    let z = dot(&w, x) + b;
                    let r = cw * (sigmoid(z) - if y { 1.0 } else { 0.0 });
                    for (gj, xj) in g.iter_mut().zip(x) {
                        *gj += r * xj;
                    }
                    gb += r;
                    loss += cw * log_loss(z, y);
                    total += cw;
                }
                (g, gb, loss, total)
            })
            .collect();
        let mut g = vec![0.0; dim];
        let (mut gb, mut loss, mut total) = (0.0, 0.0, 0.0);
        for (pg, pb, pl, pt) in partials {
            for (a, x) in g.iter_mut().zip(pg) {
                *a += x;
            }
            gb += pb;
            loss += pl;
            total += pt;
        }
        if !loss.is_finite() {
            return Err(Error::Diverged(format!(
                "training loss is {loss} at epoch {epoch} (learning rate {})",
                config.learning_rate
            )));
        }
        for (wj, gj) in w.iter_mut().zip(&g) {
            *wj -= config.learning_rate * (gj / total + config.l2 * *wj);
        }
        b -= config.learning_rate * gb / total;
        epochs_run = epoch + 1;

        if hold.is_empty() {
            best = (w.clone(), b, epochs_run, None);
            continue;
        }
        let h = weighted_loss(&w, b, &hold);
        if !h.is_finite() {
            return Err(Error::Diverged(format!("held-out loss is {h} at epoch {epoch}")));
        }
        if best.3.is_none_or(|bl| h < bl) {
            best = (w.clone(), b, epochs_run, Some(h));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    let (weights, bias, best_epoch, best_holdout_loss) = best;
    Ok(PropensityModel {
        weights,
        bias,
        class_weights,
        meta: TrainingMeta {
            epochs_run,
            best_epoch,
            learning_rate: config.learning_rate,
            l2: config.l2,
            aug_prob: config.aug_prob,
            seed,
            best_holdout_loss,
            n_train: train.len(),
            n_holdout: hold.len(),
        },
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityScore {
    pub doc_id: String,
    pub propensity: f64,
    pub logit: f64,
}

/// Scores every non-zero row of `m`.
pub fn score_matrix(model: &PropensityModel, m: &EmbeddingMatrix) -> Result<Vec<PropensityScore>> {
    (0..m.len())
        .filter(|i| !m.zero_rows.contains(i))
        .map(|i| {
            let logit = model.logit(m.row(i))?;
            Ok(PropensityScore {
                doc_id: m.doc_ids[i].clone(),
                propensity: sigmoid(logit),
                logit,
            })
        })
        .collect()
}

pub fn write_scores(path: &Path, scores: &[PropensityScore]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::extraction::csv_io(path, e))?;
    for s in scores {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<PropensityScore>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| crate::extraction::csv_io(path, e))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaliperSpec {
    pub c: f64,
    pub sigma2_t: f64,
    pub sigma2_u: f64,
    pub n_t: usize,
    pub n_u: usize,
}

fn sample_variance(x: &[f64]) -> f64 {
    // The rounded mean of equal values can differ from them.
    if x.iter().all(|v| *v == x[0]) {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// c = 0.2 * sqrt((var_T + var_U) / (N_T + N_U - 2)), variances over N - 1.
pub fn compute_caliper(treated_logits: &[f64], control_logits: &[f64]) -> Result<CaliperSpec> {
    for (what, group) in [("treated logits", treated_logits), ("control logits", control_logits)] {
        if group.len() < 2 {
            return Err(Error::TooFew {
                what,
                needed: 2,
                got: group.len(),
            });
        }
        if group.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(what.into()));
        }
    }
    let sigma2_t = sample_variance(treated_logits);
    let sigma2_u = sample_variance(control_logits);
    let (n_t, n_u) = (treated_logits.len(), control_logits.len());
    Ok(CaliperSpec {
        c: 0.2 * ((sigma2_t + sigma2_u) / (n_t + n_u - 2) as f64).sqrt(),
        sigma2_t,
        sigma2_u,
        n_t,
        n_u,
    })
}
