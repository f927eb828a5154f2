//! Oracles and fixtures shared by the integration tests and the acceptance
//! harness.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use situmatch::embedding::{fit_builtin, BuiltinConfig, BuiltinEmbedder, TextEmbedder};
use situmatch::extraction::judgment::RawTag;
use situmatch::extraction::GenderLexicon;
use situmatch::matching::Edge;
use situmatch::pipeline::study::StudyConfig;
use situmatch::propensity::{train_propensity, PropensityConfig, PropensityModel, TrainingText};
use situmatch::stats::{Design, Table2x2};
use situmatch::synth::pseudo_words;
use situmatch::topics::{assign_topic, lda_fit, LdaConfig};

// ---------------------------------------------------------------- matching

/// A random bipartite instance with at most `max_side` units per side.
/// Weights are multiples of 1/256 so every subset sum is exact in f64.
pub struct Instance {
    pub n_t: usize,
    pub n_c: usize,
    pub edges: Vec<Edge>,
}

impl Instance {
    pub fn random(rng: &mut ChaCha8Rng, max_side: usize) -> Instance {
        let n_t = rng.random_range(1..=max_side);
        let n_c = rng.random_range(1..=max_side);
        let density: f64 = rng.random_range(0.15..0.9);
        // A few distinct weights make ties common.
        let levels = if rng.random_bool(0.3) { 3 } else { 512 };
        let mut edges = Vec::new();
        for t in 0..n_t {
            for c in 0..n_c {
                if rng.random_bool(density) {
                    edges.push(Edge {
                        treated: t,
                        control: c,
                        weight: rng.random_range(0..levels) as f64 / 256.0,
                    });
                }
            }
        }
        edges.shuffle(rng);
        Instance { n_t, n_c, edges }
    }

    pub fn ids(&self) -> (Vec<String>, Vec<String>) {
        (
            (0..self.n_t).map(|i| format!("t{i:02}")).collect(),
            (0..self.n_c).map(|i| format!("c{i:02}")).collect(),
        )
    }
}

/// Best (cardinality, weight) over every matching, by dynamic programming
/// over treated units and the set of used controls.
pub fn exhaustive_matching(inst: &Instance) -> (usize, f64) {
    let mut adj = vec![Vec::new(); inst.n_t];
    for e in &inst.edges {
        adj[e.treated].push((e.control, e.weight));
    }
    let full = 1usize << inst.n_c;
    // best[mask] after processing a prefix of treated units.
    let mut best: Vec<Option<(usize, f64)>> = vec![None; full];
    best[0] = Some((0, 0.0));
    for row in &adj {
        let mut next = best.clone();
        for mask in 0..full {
            let Some((k, w)) = best[mask] else { continue };
            for &(c, wc) in row {
                if mask & (1 << c) == 0 {
                    let m2 = mask | (1 << c);
                    let cand = (k + 1, w + wc);
                    if better(cand, next[m2]) {
                        next[m2] = Some(cand);
                    }
                }
            }
        }
        best = next;
    }
    best.into_iter()
        .flatten()
        .fold((0, 0.0), |acc, c| if better(c, Some(acc)) { c } else { acc })
}

fn better(a: (usize, f64), b: Option<(usize, f64)>) -> bool {
    match b {
        None => true,
        Some(b) => a.0 > b.0 || (a.0 == b.0 && a.1 < b.1),
    }
}

// ------------------------------------------------------------------ fisher

fn pascal(n: usize) -> Vec<Vec<u128>> {
    let mut rows = vec![vec![1u128]];
    for i in 1..=n {
        let prev = &rows[i - 1];
        let mut row = vec![1u128; i + 1];
        for k in 1..i {
            row[k] = prev[k - 1] + prev[k];
        }
        rows.push(row);
    }
    rows
}

/// Two-sided Fisher p by enumerating every table with the observed margins
/// and comparing hypergeometric weights exactly.
pub struct FisherOracle {
    binom: Vec<Vec<u128>>,
}

impl FisherOracle {
    pub fn new(max_total: usize) -> Self {
        FisherOracle {
            binom: pascal(max_total),
        }
    }

    fn c(&self, n: u64, k: u64) -> u128 {
        self.binom[n as usize][k as usize]
    }

    pub fn p(&self, t: &Table2x2) -> f64 {
        let (r1, r2, c1) = (t.a + t.b, t.c + t.d, t.a + t.c);
        let weight = |x: u64| self.c(r1, x) * self.c(r2, c1 - x);
        let observed = weight(t.a);
        let (mut hit, mut all) = (0u128, 0u128);
        for x in c1.saturating_sub(r2)..=r1.min(c1) {
            let w = weight(x);
            all += w;
            if w <= observed {
                hit += w;
            }
        }
        assert_eq!(all, self.c(r1 + r2, c1), "weights must sum to the column binomial");
        hit as f64 / all as f64
    }
}

/// Every 2x2 table with total at most `max_total` and all four margins
/// positive.
pub fn tables_up_to(max_total: u64) -> Vec<Table2x2> {
    let mut out = Vec::new();
    for a in 0..=max_total {
        for b in 0..=max_total - a {
            for c in 0..=max_total - a - b {
                for d in 0..=max_total - a - b - c {
                    if a + b > 0 && c + d > 0 && a + c > 0 && b + d > 0 {
                        out.push(Table2x2::new(a, b, c, d));
                    }
                }
            }
        }
    }
    out
}

pub fn relative_error(x: f64, reference: f64) -> f64 {
    if x == reference {
        0.0
    } else {
        (x - reference).abs() / reference.abs()
    }
}

// --------------------------------------------------------------- tag rules

pub struct TagCase {
    pub group: &'static str,
    pub body: &'static str,
    pub expected: &'static [RawTag],
}

const fn case(group: &'static str, body: &'static str, expected: &'static [RawTag]) -> TagCase {
    TagCase { group, body, expected }
}

use RawTag::{Esh, Nah, Nta, Yta};

pub const TAG_CASES: &[TagCase] = &[
    // A tag alone on its line, any case.
    case("own line", "NTA\nyou did fine", &[Nta]),
    case("own line", "yta", &[Yta]),
    case("own line", "ESH!", &[Esh]),
    case("own line", "**NTA**\nShe should have asked first.", &[Nta]),
    case("own line", "nah\nthat's fine, nobody did anything wrong", &[Nah]),
    case("own line", "YTA because you lied\nESH", &[Esh]),
    // Several lone-line tags are all kept, deduplicated, in order.
    case("own line, several", "YTA\nESH", &[Yta, Esh]),
    case(
        "own line, several",
        "NTA\n\nActually, thinking more\nESH\nNTA",
        &[Nta, Esh],
    ),
    case("own line, several", "NTA.\nYTA.", &[Nta, Yta]),
    case("own line, several", "**NTA**\nYTA", &[Nta, Yta]),
    case("own line, several", "nta\nNAH", &[Nta, Nah]),
    case("own line, several", "NTA. You were fine.\nYTA", &[Yta]),
    // A tag that is a whole sentence.
    case("own sentence", "You were fine. NTA. She overreacted.", &[Nta]),
    case("own sentence", "YTA - you know why. NTA.", &[Nta]),
    case("own sentence", "NTA? I am not sure what happened here", &[Nta]),
    case("own sentence", "Would I be YTA? NTA.", &[Nta]),
    case("own sentence", "NAH. They both had their reasons.", &[Nah]),
    // The informal lowercase or mixed-case "nah" is not a judgment.
    case("nah exclusion", "Nah. She is right about this one", &[]),
    case("nah exclusion", "Nah, nobody here is wrong.", &[]),
    case("nah exclusion", "honestly nah, just a misunderstanding", &[]),
    case("nah exclusion", "nah - it was a misunderstanding", &[]),
    case("nah exclusion", "NAH, nobody here is wrong.", &[Nah]),
    // Line start: uppercase, or followed by a separator.
    case("line start", "YTA because you lied about the money", &[Yta]),
    case("line start", "yta because you lied about the money", &[]),
    case("line start", "nta - your sister overstepped", &[Nta]),
    case("line start", "Esh; both of you escalated it", &[Esh]),
    case("line start", "yta  because you lied about it", &[Yta]),
    case("line start", "Nta: you owe nobody an explanation", &[Nta]),
    case("line start", "esh : everyone acted badly here", &[Esh]),
    case("line start", "nta-your house, your rules", &[Nta]),
    case("line start", "> YTA and you know it, honestly.", &[Yta]),
    case("line start", "NTA, it was a gift.", &[Nta]),
    case("line start", "Priority: NTA\nYTA is what others said, but no.", &[Yta]),
    case("line start", "YTA if you hid it from her", &[]),
    // An uppercase tag inside a short sentence.
    case("short sentence", "OP, you are clearly NTA!", &[Nta]),
    case("short sentence", "I think you are YTA here.", &[Yta]),
    case("short sentence", "Edit: NTA.", &[Nta]),
    case("short sentence", "Honestly NAH here.", &[Nah]),
    case("short sentence", "I really think that you are YTA here.", &[]),
    case("short sentence", "you are clearly nta here", &[]),
    // Conditionals and questions never count in a short sentence.
    case("if or question", "You are YTA if you did that.", &[]),
    case("if or question", "Would that make you YTA?", &[]),
    case("if or question", "If so, YTA.", &[]),
    case("if or question", "If it were me, NTA.", &[]),
    case("if or question", "Is he NTA? Yes.", &[]),
    // Nothing to find.
    case("none", "", &[]),
    case("none", "I don't know what to think about this.", &[]),
    case("none", "NTAs everywhere in this thread, sadly.", &[]),
];

// ---------------------------------------------------------- neutralization

pub const TREATED_WORD: &str = "husband";
pub const CONTROL_WORD: &str = "wife";

/// Documents of neutral pseudo-words with exactly one gendered word, which
/// alone tells the groups apart.
pub fn single_word_corpus(n: usize, seed: u64) -> Vec<(String, String, bool)> {
    let vocab = pseudo_words(5000, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let treated = i % 2 == 0;
            let len = rng.random_range(30..50);
            let mut words: Vec<&str> = (0..len)
                .map(|_| vocab[rng.random_range(0..vocab.len())].as_str())
                .collect();
            let at = rng.random_range(0..=words.len());
            words.insert(at, if treated { TREATED_WORD } else { CONTROL_WORD });
            (format!("s{seed}-{i}"), words.join(" "), treated)
        })
        .collect()
}

/// Trains on one single-word corpus and returns accuracy on another.
pub fn neutralization_accuracy(aug_prob: f64, seed: u64) -> f64 {
    let (model, embedder) = neutralization_model(aug_prob, seed);
    let test = single_word_corpus(1000, seed + 1000);
    let correct = test
        .iter()
        .filter(|(_, text, treated)| (model.predict(&embedder.embed(text)).unwrap() > 0.5) == *treated)
        .count();
    correct as f64 / test.len() as f64
}

/// The scorer trained on a single-word corpus, with its embedder.
pub fn neutralization_model(aug_prob: f64, seed: u64) -> (PropensityModel, BuiltinEmbedder) {
    let train = single_word_corpus(1000, seed);
    let texts: Vec<&str> = train.iter().map(|(_, t, _)| t.as_str()).collect();
    let cfg = BuiltinConfig {
        dims: 1 << 12,
        reduce_to: None,
        ..BuiltinConfig::default()
    };
    let (embedder, _): (BuiltinEmbedder, _) = fit_builtin(&texts, &cfg, seed).unwrap();
    let examples: Vec<TrainingText<'_>> = train
        .iter()
        .map(|(id, text, treated)| TrainingText {
            id,
            text,
            treated: *treated,
        })
        .collect();
    let pcfg = PropensityConfig {
        aug_prob,
        ..PropensityConfig::default()
    };
    let model = train_propensity(&examples, &GenderLexicon::builtin(), &embedder, &pcfg, seed).unwrap();
    (model, embedder)
}

// --------------------------------------------------------------------- LDA

/// Documents drawn from one of two disjoint vocabularies, with the block
/// each came from.
pub fn two_block_corpus(n: usize, words_per_block: u32, seed: u64) -> (Vec<Vec<u32>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    let mut blocks = Vec::new();
    for i in 0..n {
        let block = i % 2;
        let len = rng.random_range(300..400);
        let base = block as u32 * words_per_block;
        docs.push((0..len).map(|_| base + rng.random_range(0..words_per_block)).collect());
        blocks.push(block);
    }
    (docs, blocks)
}

pub fn two_block_config() -> LdaConfig {
    LdaConfig {
        iterations: 200,
        burn_in: 30,
        samples: 10,
        ..LdaConfig::default()
    }
}

/// Share of documents whose dominant topic has probability above 0.9 and
/// agrees with the block majority mapping.
pub fn separated_share(docs: &[Vec<u32>], blocks: &[usize], k: usize, seed: u64) -> f64 {
    let cfg = two_block_config();
    let model = lda_fit(docs, 100, k, &cfg, seed).unwrap();
    let tops: Vec<(usize, f64)> = docs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let a = assign_topic(&model, &format!("d{i}"), d, 0.4, &cfg, seed + i as u64);
            a.distribution
                .iter()
                .copied()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (t, p)| if p > acc.1 { (t, p) } else { acc },
                )
        })
        .collect();
    let mut votes = vec![vec![0usize; k]; 2];
    for (&(t, _), &b) in tops.iter().zip(blocks) {
        votes[b][t] += 1;
    }
    let topic_of: Vec<usize> = votes.iter().map(|v| (0..k).max_by_key(|&t| v[t]).unwrap()).collect();
    assert_ne!(topic_of[0], topic_of[1], "both blocks mapped to one topic");
    let good = tops
        .iter()
        .zip(blocks)
        .filter(|(&(t, p), &b)| t == topic_of[b] && p > 0.9)
        .count();
    good as f64 / docs.len() as f64
}

// -------------------------------------------------------------------- REML

/// Random-intercept data with columns Intercept, x and z. With `centered`
/// the noise has mean zero inside every group.
pub fn reml_data(
    seed: u64,
    groups: usize,
    per: usize,
    group_sd: f64,
    centered: bool,
) -> (Vec<f64>, Design, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut y, mut rows, mut g) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..groups {
        let u: f64 = group_sd * rng.sample::<f64, _>(StandardNormal);
        let mut e: Vec<f64> = (0..per).map(|_| rng.sample(StandardNormal)).collect();
        if centered {
            // No between-group variation at all in the noise.
            let m = e.iter().sum::<f64>() / per as f64;
            e.iter_mut().for_each(|v| *v -= m);
        }
        for ek in e {
            let x: f64 = rng.sample(StandardNormal);
            let z = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            y.push(0.5 + 2.0 * x - 1.0 * z + u + ek);
            rows.push(vec![1.0, x, z]);
            g.push(k);
        }
    }
    (
        y,
        Design::new(vec!["Intercept".into(), "x".into(), "z".into()], rows).unwrap(),
        g,
    )
}

/// Ordinary least squares through the normal equations.
pub fn ols(y: &[f64], x: &Design) -> Vec<f64> {
    let m = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x.row(i)[j]);
    let v = DVector::from_column_slice(y);
    let xtx = m.transpose() * &m;
    let xty = m.transpose() * v;
    xtx.cholesky().unwrap().solve(&xty).iter().copied().collect()
}

// ---------------------------------------------------------------- pipeline

/// The study settings used for repeated end-to-end runs: a single topic
/// count, a shorter Gibbs chain, and only the headline distance cap.
pub fn repeated_run_config() -> StudyConfig {
    let mut cfg = StudyConfig::default();
    cfg.topics.k_candidates = vec![2];
    cfg.topics.lda.iterations = 60;
    cfg.topics.lda.burn_in = 20;
    cfg.topics.lda.samples = 5;
    cfg.matching.d_max_sweep = vec![cfg.matching.d_max];
    cfg
}
