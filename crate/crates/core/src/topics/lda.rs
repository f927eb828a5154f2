//! Collapsed Gibbs sampling for LDA.
//!
//! A sweep resamples every document against a snapshot of the global
//! word-topic counts taken at the start of the sweep, plus the document's
//! own pending changes. The per-document changes are added back once all
//! documents are done. Each document draws from its own stream keyed by
//! (document key, sweep), so results do not depend on document order or
//! on the number of threads.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, site};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaConfig {
    /// Symmetric document-topic prior. `None` means 50/K.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub samples: usize,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            alpha: None,
            beta: 0.01,
            iterations: 1000,
            burn_in: 100,
            samples: 20,
        }
    }
}

impl LdaConfig {
    pub fn alpha_for(&self, k: usize) -> f64 {
        self.alpha.unwrap_or(50.0 / k as f64)
    }

    fn validate(&self, k: usize) -> Result<()> {
        let alpha = self.alpha_for(k);
        if !(alpha > 0.0 && alpha.is_finite()) || !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("LDA priors must be positive and finite"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("LDA needs at least one iteration"));
        }
        Ok(())
    }
}

/// Fitted topic-word counts and hyperparameters. Immutable once built.
#[derive(Debug, Clone)]
pub struct TopicModel {
    k: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
    vocab_size: usize,
    /// Word-major: `word_topic[w * k + t]`.
    word_topic: Vec<u32>,
    topic_totals: Vec<u64>,
    terms: Vec<String>,
    /// Smoothed p(w | t), same layout as `word_topic`.
    phi: Vec<f64>,
}

impl PartialEq for TopicModel {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k
            && self.alpha.to_bits() == other.alpha.to_bits()
            && self.beta.to_bits() == other.beta.to_bits()
            && self.seed == other.seed
            && self.vocab_size == other.vocab_size
            && self.word_topic == other.word_topic
            && self.terms == other.terms
    }
}

impl TopicModel {
    /// Builds a model from word-major counts (`word_topic[w * k + t]`).
    pub fn from_counts(
        k: usize,
        alpha: f64,
        beta: f64,
        seed: u64,
        word_topic: Vec<u32>,
        terms: Vec<String>,
    ) -> Result<Self> {
        if k == 0 || !word_topic.len().is_multiple_of(k) {
            return Err(Error::invalid("word-topic counts do not match K"));
        }
        let vocab_size = word_topic.len() / k;
        if vocab_size == 0 {
            return Err(Error::EmptyVocabulary);
        }
        if !terms.is_empty() && terms.len() != vocab_size {
            return Err(Error::DimensionMismatch {
                expected: vocab_size,
                got: terms.len(),
            });
        }
        let mut topic_totals = vec![0u64; k];
        for row in word_topic.chunks_exact(k) {
            for (t, c) in row.iter().enumerate() {
                topic_totals[t] += u64::from(*c);
            }
        }
        let vb = vocab_size as f64 * beta;
        let phi = word_topic
            .chunks_exact(k)
            .flat_map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(t, c)| (f64::from(*c) + beta) / (topic_totals[t] as f64 + vb))
            })
            .collect();
        Ok(TopicModel {
            k,
            alpha,
            beta,
            seed,
            vocab_size,
            word_topic,
            topic_totals,
            terms,
            phi,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn count(&self, topic: usize, word: usize) -> u32 {
        self.word_topic[word * self.k + topic]
    }

    pub fn topic_totals(&self) -> &[u64] {
        &self.topic_totals
    }

    /// Counts as K rows of |V| entries.
    pub fn topic_word_counts(&self) -> Vec<Vec<u32>> {
        (0..self.k)
            .map(|t| (0..self.vocab_size).map(|w| self.count(t, w)).collect())
            .collect()
    }

    pub fn word_probability(&self, topic: usize, word: usize) -> f64 {
        self.phi[word * self.k + topic]
    }

    /// The `n` highest-count terms of every topic, ties broken by term order.
    pub fn top_words(&self, n: usize) -> Vec<Vec<(String, u32)>> {
        (0..self.k)
            .map(|t| {
                let mut words: Vec<usize> = (0..self.vocab_size).filter(|&w| self.count(t, w) > 0).collect();
                words.sort_by(|&a, &b| self.count(t, b).cmp(&self.count(t, a)).then(a.cmp(&b)));
                words
                    .into_iter()
                    .take(n)
                    .map(|w| {
                        let term = self.terms.get(w).cloned().unwrap_or_else(|| w.to_string());
                        (term, self.count(t, w))
                    })
                    .collect()
            })
            .collect()
    }

    /// Folds a document in with the model counts frozen. Returns the
    /// averaged smoothed topic proportions and whether the document had no
    /// in-vocabulary token (in which case the prior is returned).
    pub fn infer(&self, doc: &[u32], burn_in: usize, samples: usize, seed: u64) -> Inference {
        let k = self.k;
        let words: Vec<usize> = doc
            .iter()
            .map(|&w| w as usize)
            .filter(|&w| w < self.vocab_size)
            .collect();
        if words.is_empty() {
            return Inference {
                distribution: vec![1.0 / k as f64; k],
                out_of_vocabulary: true,
            };
        }
        if k == 1 {
            return Inference {
                distribution: vec![1.0],
                out_of_vocabulary: false,
            };
        }
        let mut rng = rng::stream(seed, &[site::LDA_INFER]);
        let mut z: Vec<usize> = words.iter().map(|_| rng.random_range(0..k)).collect();
        let mut ndk = vec![0u32; k];
        for &t in &z {
            ndk[t] += 1;
        }
        let mut p = vec![0.0; k];
        let mut acc = vec![0.0; k];
        let norm = words.len() as f64 + k as f64 * self.alpha;
        let kept = samples.max(1);
        for sweep in 0..burn_in + kept {
            for (i, &w) in words.iter().enumerate() {
                ndk[z[i]] -= 1;
                let row = &self.phi[w * k..(w + 1) * k];
                let mut total = 0.0;
                for t in 0..k {
                    total += (f64::from(ndk[t]) + self.alpha) * row[t];
                    p[t] = total;
                }
                let new = pick(&p, rng.random::<f64>() * total);
                z[i] = new;
                ndk[new] += 1;
            }
            if sweep >= burn_in {
                for t in 0..k {
                    acc[t] += (f64::from(ndk[t]) + self.alpha) / norm;
                }
            }
        }
        let sum: f64 = acc.iter().sum();
        Inference {
            distribution: acc.iter().map(|a| a / sum).collect(),
            out_of_vocabulary: false,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format: FORMAT.into(),
            version: VERSION,
            k: self.k,
            alpha: self.alpha,
            beta: self.beta,
            seed: self.seed,
            terms: self.terms.clone(),
            word_topic: self.word_topic.clone(),
        };
        let text = serde_json::to_string(&file)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(Error::invalid(format!(
                "{}: unsupported topic model format {} v{}",
                path.display(),
                file.format,
                file.version
            )));
        }
        TopicModel::from_counts(file.k, file.alpha, file.beta, file.seed, file.word_topic, file.terms)
    }
}

const FORMAT: &str = "situmatch-lda";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    k: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
    terms: Vec<String>,
    word_topic: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub distribution: Vec<f64>,
    pub out_of_vocabulary: bool,
}

fn pick(cumulative: &[f64], u: f64) -> usize {
    cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1)
}

struct DocState<'a> {
    words: &'a [u32],
    key: u64,
    /// Distinct words of the document; `local[i]` indexes into it.
    uniq: Vec<u32>,
    local: Vec<u32>,
    z: Vec<u16>,
    ndk: Vec<u32>,
}

/// Gibbs sampler state. `fit` drives it to completion; tests can step it
/// sweep by sweep.
pub struct LdaSampler<'a> {
    docs: Vec<DocState<'a>>,
    k: usize,
    alpha: f64,
    beta: f64,
    vocab_size: usize,
    seed: u64,
    sweeps: u64,
    word_topic: Vec<u32>,
    topic_totals: Vec<u64>,
}

impl<'a> LdaSampler<'a> {
    pub fn new(
        docs: &'a [Vec<u32>],
        keys: &[u64],
        k: usize,
        vocab_size: usize,
        config: &LdaConfig,
        seed: u64,
    ) -> Result<Self> {
        if k == 0 || k > usize::from(u16::MAX) {
            return Err(Error::invalid(format!("K must be in 1..=65535, got {k}")));
        }
        if keys.len() != docs.len() {
            return Err(Error::DimensionMismatch {
                expected: docs.len(),
                got: keys.len(),
            });
        }
        if vocab_size == 0 {
            return Err(Error::EmptyVocabulary);
        }
        if docs.iter().all(Vec::is_empty) {
            return Err(Error::TooFew {
                what: "LDA",
                needed: 1,
                got: 0,
            });
        }
        config.validate(k)?;
        if let Some(w) = docs.iter().flatten().find(|&&w| w as usize >= vocab_size) {
            return Err(Error::invalid(format!(
                "token id {w} outside a vocabulary of {vocab_size}"
            )));
        }

        let mut word_topic = vec![0u32; vocab_size * k];
        let mut topic_totals = vec![0u64; k];
        let mut states = Vec::with_capacity(docs.len());
        for (words, &key) in docs.iter().zip(keys) {
            let mut uniq: Vec<u32> = words.clone();
            uniq.sort_unstable();
            uniq.dedup();
            let local = words.iter().map(|w| uniq.binary_search(w).unwrap() as u32).collect();
            let mut r = rng::stream(seed, &[site::LDA_INIT, key]);
            let z: Vec<u16> = words.iter().map(|_| r.random_range(0..k) as u16).collect();
            let mut ndk = vec![0u32; k];
            for (&w, &t) in words.iter().zip(&z) {
                ndk[usize::from(t)] += 1;
                word_topic[w as usize * k + usize::from(t)] += 1;
                topic_totals[usize::from(t)] += 1;
            }
            states.push(DocState {
                words,
                key,
                uniq,
                local,
                z,
                ndk,
            });
        }
        Ok(LdaSampler {
            docs: states,
            k,
            alpha: config.alpha_for(k),
            beta: config.beta,
            vocab_size,
            seed,
            sweeps: 0,
            word_topic,
            topic_totals,
        })
    }

    pub fn sweep(&mut self) {
        let (k, alpha, beta, seed, sweep) = (self.k, self.alpha, self.beta, self.seed, self.sweeps);
        let vb = self.vocab_size as f64 * beta;
        let word_topic = &self.word_topic;
        let totals = &self.topic_totals;
        let deltas: Vec<(Vec<i32>, Vec<i64>)> = self
            .docs
            .par_iter_mut()
            .map(|d| {
                let mut dw = vec![0i32; d.uniq.len() * k];
                let mut dk = vec![0i64; k];
                if k == 1 || d.words.is_empty() {
                    return (dw, dk);
                }
                let mut r = rng::stream(seed, &[site::LDA_SWEEP, d.key, sweep]);
                let mut p = vec![0.0; k];
                for i in 0..d.words.len() {
                    let w = d.words[i] as usize;
                    let l = d.local[i] as usize;
                    let old = usize::from(d.z[i]);
                    d.ndk[old] -= 1;
                    dw[l * k + old] -= 1;
                    dk[old] -= 1;
                    let global = &word_topic[w * k..(w + 1) * k];
                    let local = &dw[l * k..(l + 1) * k];
                    let mut total = 0.0;
                    for t in 0..k {
                        let nw = (i64::from(global[t]) + i64::from(local[t])) as f64;
                        let nt = (totals[t] as i64 + dk[t]) as f64;
                        total += (f64::from(d.ndk[t]) + alpha) * (nw + beta) / (nt + vb);
                        p[t] = total;
                    }
                    let new = pick(&p, r.random::<f64>() * total);
                    d.z[i] = new as u16;
                    d.ndk[new] += 1;
                    dw[l * k + new] += 1;
                    dk[new] += 1;
                }
                (dw, dk)
            })
            .collect();
        for (d, (dw, dk)) in self.docs.iter().zip(deltas) {
            for (l, &w) in d.uniq.iter().enumerate() {
                for t in 0..k {
                    let delta = dw[l * k + t];
                    if delta != 0 {
                        let cell = &mut self.word_topic[w as usize * k + t];
                        *cell = (i64::from(*cell) + i64::from(delta)) as u32;
                    }
                }
            }
            for t in 0..k {
                self.topic_totals[t] = (self.topic_totals[t] as i64 + dk[t]) as u64;
            }
        }
        self.sweeps += 1;
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    pub fn word_topic_counts(&self) -> &[u32] {
        &self.word_topic
    }

    pub fn topic_totals(&self) -> &[u64] {
        &self.topic_totals
    }

    /// Current topic assignment of every token, per document.
    pub fn assignments(&self) -> impl Iterator<Item = &[u16]> {
        self.docs.iter().map(|d| d.z.as_slice())
    }

    pub fn model(&self, terms: Vec<String>) -> Result<TopicModel> {
        TopicModel::from_counts(self.k, self.alpha, self.beta, self.seed, self.word_topic.clone(), terms)
    }
}

/// Fits with documents keyed by their position.
pub fn lda_fit(docs: &[Vec<u32>], vocab_size: usize, k: usize, config: &LdaConfig, seed: u64) -> Result<TopicModel> {
    let keys: Vec<u64> = (0..docs.len() as u64).collect();
    lda_fit_keyed(docs, &keys, vocab_size, k, config, seed)
}

/// Fits with caller-supplied document keys (for example hashed document
/// ids), which makes the result invariant to document order.
pub fn lda_fit_keyed(
    docs: &[Vec<u32>],
    keys: &[u64],
    vocab_size: usize,
    k: usize,
    config: &LdaConfig,
    seed: u64,
) -> Result<TopicModel> {
    let mut sampler = LdaSampler::new(docs, keys, k, vocab_size, config, seed)?;
    for _ in 0..config.iterations {
        sampler.sweep();
    }
    sampler.model(Vec::new())
}

/// Held-out perplexity by document completion: topic proportions are
/// inferred from the even-position tokens of each document and the
/// odd-position tokens are scored.
pub fn perplexity(model: &TopicModel, heldout: &[Vec<u32>], burn_in: usize, samples: usize, seed: u64) -> Result<f64> {
    let parts: Vec<(f64, usize)> = heldout
        .par_iter()
        .enumerate()
        .map(|(i, doc)| {
            let words: Vec<u32> = doc
                .iter()
                .copied()
                .filter(|&w| (w as usize) < model.vocab_size)
                .collect();
            let observed: Vec<u32> = words.iter().step_by(2).copied().collect();
            let scored: Vec<usize> = words.iter().skip(1).step_by(2).map(|&w| w as usize).collect();
            if scored.is_empty() {
                return (0.0, 0);
            }
            let theta = model
                .infer(
                    &observed,
                    burn_in,
                    samples,
                    rng::derive_seed(seed, &[site::PERPLEXITY, i as u64]),
                )
                .distribution;
            let ll: f64 = scored
                .iter()
                .map(|&w| {
                    (0..model.k)
                        .map(|t| theta[t] * model.word_probability(t, w))
                        .sum::<f64>()
                        .ln()
                })
                .sum();
            (ll, scored.len())
        })
        .collect();
    let (ll, n) = parts.iter().fold((0.0, 0), |(a, n), (l, m)| (a + l, n + m));
    if n == 0 {
        return Err(Error::TooFew {
            what: "perplexity",
            needed: 1,
            got: 0,
        });
    }
    Ok((-ll / n as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    pub mean: f64,
    pub std_error: f64,
    pub folds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub best_k: usize,
    /// Empty when there was a single candidate and nothing to compare.
    pub scores: Vec<KScore>,
}

/// Cross-validated choice of K: a seeded shuffle splits the non-empty
/// documents into `folds` parts; each candidate is fitted on all but one
/// part and scored on the remaining one. Lowest mean perplexity wins,
/// smaller K on exact ties.
pub fn select_k(
    docs: &[Vec<u32>],
    keys: &[u64],
    vocab_size: usize,
    candidates: &[usize],
    folds: usize,
    config: &LdaConfig,
    seed: u64,
) -> Result<KSelection> {
    let mut candidates = candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    match candidates.as_slice() {
        [] => return Err(Error::invalid("no candidate K")),
        [k] => {
            return Ok(KSelection {
                best_k: *k,
                scores: Vec::new(),
            })
        }
        _ => {}
    }
    if folds < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    let mut order: Vec<usize> = (0..docs.len()).filter(|&i| !docs[i].is_empty()).collect();
    if order.len() < folds {
        return Err(Error::TooFew {
            what: "K selection",
            needed: folds,
            got: order.len(),
        });
    }
    order.shuffle(&mut rng::stream(seed, &[site::FOLDS]));
    let fold_of: Vec<Vec<usize>> = (0..folds)
        .map(|f| order.iter().skip(f).step_by(folds).copied().collect())
        .collect();

    let jobs: Vec<(usize, usize)> = candidates
        .iter()
        .flat_map(|&k| (0..folds).map(move |f| (k, f)))
        .collect();
    let results: Vec<f64> = jobs
        .par_iter()
        .map(|&(k, f)| {
            let train_idx: Vec<usize> = (0..folds)
                .filter(|&g| g != f)
                .flat_map(|g| fold_of[g].iter().copied())
                .collect();
            let train: Vec<Vec<u32>> = train_idx.iter().map(|&i| docs[i].clone()).collect();
            let train_keys: Vec<u64> = train_idx.iter().map(|&i| keys[i]).collect();
            let test: Vec<Vec<u32>> = fold_of[f].iter().map(|&i| docs[i].clone()).collect();
            let model = lda_fit_keyed(&train, &train_keys, vocab_size, k, config, seed)?;
            perplexity(
                &model,
                &test,
                config.burn_in,
                config.samples,
                rng::derive_seed(seed, &[k as u64, f as u64]),
            )
        })
        .collect::<Result<_>>()?;

    let scores: Vec<KScore> = candidates
        .iter()
        .enumerate()
        .map(|(ci, &k)| {
            let fs = results[ci * folds..(ci + 1) * folds].to_vec();
            let mean = fs.iter().sum::<f64>() / folds as f64;
            let var = fs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (folds - 1) as f64;
            KScore {
                k,
                mean,
                std_error: (var / folds as f64).sqrt(),
                folds: fs,
            }
        })
        .collect();
    let best = scores
        .iter()
        .min_by(|a, b| a.mean.total_cmp(&b.mean).then(a.k.cmp(&b.k)))
        .unwrap();
    Ok(KSelection { best_k: best.k, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// `n` documents of `len` tokens; even documents use words
    /// 0..half, odd ones half..2*half.
    fn separable(n: usize, len: usize, half: u32, seed: u64) -> Vec<Vec<u32>> {
        let mut r = rng::stream(seed, &[]);
        (0..n)
            .map(|d| {
                let base = if d % 2 == 0 { 0 } else { half };
                (0..len).map(|_| base + r.random_range(0..half)).collect()
            })
            .collect()
    }

    fn quick() -> LdaConfig {
        LdaConfig {
            alpha: Some(0.1),
            iterations: 100,
            burn_in: 20,
            samples: 5,
            ..LdaConfig::default()
        }
    }

    #[test]
    fn counts_stay_consistent_after_every_sweep() {
        let docs = separable(40, 30, 20, 1);
        let keys: Vec<u64> = (0..40).collect();
        let mut s = LdaSampler::new(&docs, &keys, 3, 40, &quick(), 9).unwrap();
        let mut freq = vec![0u32; 40];
        for w in docs.iter().flatten() {
            freq[*w as usize] += 1;
        }
        for _ in 0..10 {
            s.sweep();
            let wt = s.word_topic_counts();
            for w in 0..40 {
                assert_eq!(wt[w * 3..w * 3 + 3].iter().sum::<u32>(), freq[w]);
            }
            let mut from_z = vec![0u64; 3];
            for z in s.assignments() {
                for &t in z {
                    from_z[usize::from(t)] += 1;
                }
            }
            assert_eq!(s.topic_totals(), from_z.as_slice());
        }
    }

    #[test]
    fn fit_is_deterministic_and_order_free() {
        let docs = separable(30, 20, 10, 2);
        let keys: Vec<u64> = (0..30).map(|i| rng::key_of(&format!("doc{i}"))).collect();
        let a = lda_fit_keyed(&docs, &keys, 20, 2, &quick(), 5).unwrap();
        let b = lda_fit_keyed(&docs, &keys, 20, 2, &quick(), 5).unwrap();
        assert_eq!(a, b);
        let mut idx: Vec<usize> = (0..30).collect();
        idx.reverse();
        idx.swap(3, 17);
        let docs_p: Vec<Vec<u32>> = idx.iter().map(|&i| docs[i].clone()).collect();
        let keys_p: Vec<u64> = idx.iter().map(|&i| keys[i]).collect();
        let c = lda_fit_keyed(&docs_p, &keys_p, 20, 2, &quick(), 5).unwrap();
        assert_eq!(a.topic_word_counts(), c.topic_word_counts());
    }

    #[test]
    fn single_topic_is_degenerate() {
        let docs = separable(10, 10, 5, 3);
        let m = lda_fit(&docs, 10, 1, &quick(), 1).unwrap();
        assert_eq!(m.infer(&docs[0], 5, 5, 1).distribution, vec![1.0]);
    }

    #[test]
    fn separates_two_vocabularies() {
        let docs = separable(200, 60, 50, 4);
        let m = lda_fit(&docs, 100, 2, &quick(), 11).unwrap();
        let separated = docs
            .iter()
            .enumerate()
            .filter(|(i, d)| {
                let theta = m.infer(d, 20, 5, *i as u64).distribution;
                theta.iter().cloned().fold(0.0, f64::max) > 0.9
            })
            .count();
        assert!(separated >= 190, "{separated}");
    }

    #[test]
    fn inference_prior_and_normalization() {
        let docs = separable(20, 20, 10, 5);
        let m = lda_fit(&docs, 20, 4, &quick(), 1).unwrap();
        let empty = m.infer(&[], 10, 5, 0);
        assert!(empty.out_of_vocabulary);
        assert_eq!(empty.distribution, vec![0.25; 4]);
        let oov = m.infer(&[999, 1000], 10, 5, 0);
        assert!(oov.out_of_vocabulary);
        for (i, d) in docs.iter().enumerate() {
            let s: f64 = m.infer(d, 10, 5, i as u64).distribution.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_model_perplexity_is_vocabulary_size() {
        let v = 50;
        let m = TopicModel::from_counts(1, 1.0, 0.01, 0, vec![100; v], Vec::new()).unwrap();
        let mut r = rng::stream(8, &[]);
        let heldout: Vec<Vec<u32>> = (0..500)
            .map(|_| (0..200).map(|_| r.random_range(0..v as u32)).collect())
            .collect();
        let p = perplexity(&m, &heldout, 5, 2, 1).unwrap();
        assert!((p - v as f64).abs() / (v as f64) < 0.05, "{p}");
        assert!(perplexity(&m, &[], 5, 2, 1).is_err());
    }

    #[test]
    fn scrambled_vocabulary_scores_worse() {
        let docs = separable(100, 40, 30, 6);
        let m = lda_fit(&docs, 60, 2, &quick(), 3).unwrap();
        let scrambled: Vec<Vec<u32>> = docs
            .iter()
            .map(|d| d.iter().map(|&w| (w * 7 + 13) % 60).collect())
            .collect();
        let own = perplexity(&m, &docs, 10, 5, 1).unwrap();
        let other = perplexity(&m, &scrambled, 10, 5, 1).unwrap();
        assert!(own >= 1.0);
        assert!(own <= other, "{own} vs {other}");
    }

    #[test]
    fn select_k_single_candidate_and_recovery() {
        let docs = separable(150, 60, 100, 7);
        let keys: Vec<u64> = (0..150).collect();
        assert_eq!(select_k(&docs, &keys, 200, &[6], 5, &quick(), 1).unwrap().best_k, 6);
        let sel = select_k(&docs, &keys, 200, &[2, 4, 8], 5, &quick(), 1).unwrap();
        assert_eq!(sel.best_k, 2, "{:?}", sel.scores);
    }

    #[test]
    fn persistence_round_trip() {
        let docs = separable(20, 20, 10, 8);
        let terms: Vec<String> = (0..20).map(|i| format!("w{i:02}")).collect();
        let keys: Vec<u64> = (0..20).collect();
        let mut s = LdaSampler::new(&docs, &keys, 3, 20, &quick(), 2).unwrap();
        s.sweep();
        let m = s.model(terms).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("topics.json");
        m.save(&path).unwrap();
        let back = TopicModel::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.alpha().to_bits(), m.alpha().to_bits());
        assert_eq!(back.top_words(3), m.top_words(3));
    }
}
