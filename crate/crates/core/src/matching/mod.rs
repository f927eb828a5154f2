//! Constrained 1:1 matching of treated to control documents, the effect
//! estimate on the matched sample, bootstrap intervals, the distance-cap
//! sweep and balance diagnostics.

pub mod solver;

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use solver::{solve_matching, total_weight, Edge};

use crate::embedding::cosine_distance;
use crate::error::{Error, Result};
use crate::extraction::csv_io;
use crate::rng::{self, site};
use crate::topics::TopicLabel;

/// Everything matching needs to know about one document.
#[derive(Debug, Clone, Copy)]
pub struct MatchUnit<'a> {
    pub id: &'a str,
    pub vector: &'a [f64],
    pub logit: f64,
    pub topic: TopicLabel,
    pub age: u8,
    pub outcome: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConstraints {
    pub d_max: f64,
    /// Logit caliper; pairs need a strictly smaller logit gap.
    pub caliper: f64,
    pub age_delta: u32,
}

impl MatchConstraints {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_max > 0.0 && self.d_max <= 2.0) {
            return Err(Error::invalid(format!("D_max {} outside (0, 2]", self.d_max)));
        }
        if !(self.caliper >= 0.0) {
            return Err(Error::invalid(format!("caliper {} must be nonnegative", self.caliper)));
        }
        Ok(())
    }

    /// The raw feasibility rule, evaluated without any index structure.
    pub fn admits(&self, t: &MatchUnit<'_>, c: &MatchUnit<'_>) -> Option<f64> {
        if (t.logit - c.logit).abs() >= self.caliper
            || t.topic != c.topic
            || t.age.abs_diff(c.age) as u32 > self.age_delta
        {
            return None;
        }
        let d = cosine_distance(t.vector, c.vector).ok()?;
        (d <= self.d_max).then_some(d)
    }
}

/// All feasible edges, sorted by (treated, control) index. Controls are
/// indexed by logit so that only the caliper window is scanned.
pub fn build_edges(treated: &[MatchUnit<'_>], control: &[MatchUnit<'_>], constraints: &MatchConstraints) -> Vec<Edge> {
    let mut by_logit: Vec<usize> = (0..control.len()).collect();
    by_logit.sort_by(|&a, &b| control[a].logit.total_cmp(&control[b].logit).then(a.cmp(&b)));
    let logits: Vec<f64> = by_logit.iter().map(|&j| control[j].logit).collect();
    treated
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, t)| {
            let lo = logits.partition_point(|&l| l <= t.logit - constraints.caliper);
            let hi = logits.partition_point(|&l| l < t.logit + constraints.caliper);
            let mut row: Vec<Edge> = by_logit[lo..hi.max(lo)]
                .iter()
                .filter_map(|&j| {
                    constraints.admits(t, &control[j]).map(|w| Edge {
                        treated: i,
                        control: j,
                        weight: w,
                    })
                })
                .collect();
            row.sort_by_key(|e| e.control);
            row
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub treated_id: String,
    pub control_id: String,
    pub distance: f64,
    pub treated_outcome: u8,
    pub control_outcome: u8,
    pub topic: TopicLabel,
}

/// Builds edges, solves, and returns the pairs in treated-id order.
pub fn match_units(
    treated: &[MatchUnit<'_>],
    control: &[MatchUnit<'_>],
    constraints: &MatchConstraints,
) -> Result<Vec<MatchedPair>> {
    constraints.validate()?;
    let edges = build_edges(treated, control, constraints);
    Ok(pairs_from(&edges, treated, control))
}

fn pairs_from(edges: &[Edge], treated: &[MatchUnit<'_>], control: &[MatchUnit<'_>]) -> Vec<MatchedPair> {
    let t_ids: Vec<&str> = treated.iter().map(|u| u.id).collect();
    let c_ids: Vec<&str> = control.iter().map(|u| u.id).collect();
    solve_matching(edges, &t_ids, &c_ids)
        .into_iter()
        .map(|e| {
            let (t, c) = (&treated[e.treated], &control[e.control]);
            MatchedPair {
                treated_id: t.id.to_string(),
                control_id: c.id.to_string(),
                distance: e.weight,
                treated_outcome: t.outcome,
                control_outcome: c.outcome,
                topic: t.topic,
            }
        })
        .collect()
}

/// Constraint violations of `pairs`, re-checked against the raw units.
pub fn violations(
    pairs: &[MatchedPair],
    treated: &[MatchUnit<'_>],
    control: &[MatchUnit<'_>],
    constraints: &MatchConstraints,
) -> Vec<String> {
    let find = |units: &[MatchUnit<'_>], id: &str| units.iter().position(|u| u.id == id);
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for p in pairs {
        if !seen.insert(("t", p.treated_id.clone())) || !seen.insert(("c", p.control_id.clone())) {
            out.push(format!("{} / {} reuses a unit", p.treated_id, p.control_id));
        }
        match (find(treated, &p.treated_id), find(control, &p.control_id)) {
            (Some(i), Some(j)) => {
                if constraints.admits(&treated[i], &control[j]).is_none() {
                    out.push(format!("{} / {} is infeasible", p.treated_id, p.control_id));
                }
            }
            _ => out.push(format!("{} / {} names an unknown unit", p.treated_id, p.control_id)),
        }
    }
    out
}

fn diff_sum(pairs: &[MatchedPair]) -> i64 {
    pairs
        .iter()
        .map(|p| i64::from(p.treated_outcome) - i64::from(p.control_outcome))
        .sum()
}

/// Mean of treated minus control outcome over the pairs.
pub fn estimate_satt(pairs: &[MatchedPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::TooFew {
            what: "SATT",
            needed: 1,
            got: 0,
        });
    }
    Ok(diff_sum(pairs) as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SattEstimate {
    pub satt: f64,
    pub n_pairs: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bootstrap_b: usize,
    pub level: f64,
    pub seed: u64,
    /// Whether the percentile interval contains the point estimate.
    pub covers_estimate: bool,
}

/// Type 7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap over pairs. Replicate `r` draws from its own stream
/// derived from (seed, r).
pub fn bootstrap_satt(pairs: &[MatchedPair], b: usize, level: f64, seed: u64) -> Result<SattEstimate> {
    if pairs.len() < 2 {
        return Err(Error::TooFew {
            what: "bootstrap",
            needed: 2,
            got: pairs.len(),
        });
    }
    if b == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("bootstrap needs B >= 1 and a level in (0, 1)"));
    }
    let satt = estimate_satt(pairs)?;
    let diffs: Vec<i64> = pairs
        .iter()
        .map(|p| i64::from(p.treated_outcome) - i64::from(p.control_outcome))
        .collect();
    let n = diffs.len();
    let mut reps: Vec<f64> = (0..b as u64)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(seed, &[site::BOOTSTRAP, r]);
            let s: i64 = (0..n).map(|_| diffs[g.random_range(0..n)]).sum();
            s as f64 / n as f64
        })
        .collect();
    reps.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let ci_low = quantile_sorted(&reps, alpha);
    let ci_high = quantile_sorted(&reps, 1.0 - alpha);
    Ok(SattEstimate {
        satt,
        n_pairs: n,
        ci_low,
        ci_high,
        bootstrap_b: b,
        level,
        seed,
        covers_estimate: ci_low <= satt && satt <= ci_high,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d_max: f64,
    /// `ALL` or a topic label.
    pub stratum: String,
    pub n_pairs: usize,
    pub satt: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub d_max: f64,
    pub pairs: Vec<MatchedPair>,
    pub overall: Option<SattEstimate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub b: usize,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { b: 1000, level: 0.95 }
    }
}

/// Matches once per distance cap (caliper and age window fixed) and
/// estimates the effect overall and within each topic stratum.
pub fn sweep_dmax(
    treated: &[MatchUnit<'_>],
    control: &[MatchUnit<'_>],
    caliper: f64,
    age_delta: u32,
    dmax_values: &[f64],
    bootstrap: &BootstrapConfig,
    seed: u64,
) -> Result<(Vec<SweepPoint>, Vec<SweepRow>)> {
    let matched = match_sweep(treated, control, caliper, age_delta, dmax_values)?;
    let (overall, rows) = estimate_sweep(&matched, bootstrap, seed)?;
    let points = matched
        .into_iter()
        .zip(overall)
        .map(|((d_max, pairs), overall)| SweepPoint { d_max, pairs, overall })
        .collect();
    Ok((points, rows))
}

/// Pairs for each distance cap. Edges are built once at the widest cap and
/// filtered for the others.
pub fn match_sweep(
    treated: &[MatchUnit<'_>],
    control: &[MatchUnit<'_>],
    caliper: f64,
    age_delta: u32,
    dmax_values: &[f64],
) -> Result<Vec<(f64, Vec<MatchedPair>)>> {
    for &d in dmax_values {
        MatchConstraints {
            d_max: d,
            caliper,
            age_delta,
        }
        .validate()?;
    }
    if dmax_values.is_empty() {
        return Ok(Vec::new());
    }
    let widest = dmax_values.iter().cloned().fold(f64::NAN, f64::max);
    let all_edges = build_edges(
        treated,
        control,
        &MatchConstraints {
            d_max: widest,
            caliper,
            age_delta,
        },
    );
    Ok(dmax_values
        .iter()
        .map(|&d_max| {
            let edges: Vec<Edge> = all_edges.iter().filter(|e| e.weight <= d_max).copied().collect();
            (d_max, pairs_from(&edges, treated, control))
        })
        .collect())
}

/// Bootstrap estimates per distance cap, overall and per topic stratum.
/// Strata with fewer than two pairs get a point estimate only.
pub fn estimate_sweep(
    matched: &[(f64, Vec<MatchedPair>)],
    bootstrap: &BootstrapConfig,
    seed: u64,
) -> Result<(Vec<Option<SattEstimate>>, Vec<SweepRow>)> {
    let mut overall_all = Vec::new();
    let mut rows = Vec::new();
    for (di, (d_max, pairs)) in matched.iter().enumerate() {
        let d_max = *d_max;
        let estimate = |subset: &[MatchedPair], key: u64| -> Result<(Option<f64>, Option<SattEstimate>)> {
            let point = estimate_satt(subset).ok();
            let boot = if subset.len() >= 2 {
                Some(bootstrap_satt(
                    subset,
                    bootstrap.b,
                    bootstrap.level,
                    rng::derive_seed(seed, &[di as u64, key]),
                )?)
            } else {
                None
            };
            Ok((point, boot))
        };
        let (satt, overall) = estimate(pairs, u64::MAX)?;
        rows.push(SweepRow {
            d_max,
            stratum: "ALL".into(),
            n_pairs: pairs.len(),
            satt,
            ci_low: overall.as_ref().map(|e| e.ci_low),
            ci_high: overall.as_ref().map(|e| e.ci_high),
        });
        let mut topics: Vec<TopicLabel> = pairs.iter().map(|p| p.topic).collect();
        topics.sort_unstable();
        topics.dedup();
        for topic in topics {
            let subset: Vec<MatchedPair> = pairs.iter().filter(|p| p.topic == topic).cloned().collect();
            let key = match topic {
                TopicLabel::Topic(t) => u64::from(t),
                TopicLabel::Other => u64::MAX - 1,
            };
            let (satt, boot) = estimate(&subset, key)?;
            rows.push(SweepRow {
                d_max,
                stratum: topic.to_string(),
                n_pairs: subset.len(),
                satt,
                ci_low: boot.as_ref().map(|e| e.ci_low),
                ci_high: boot.as_ref().map(|e| e.ci_high),
            });
        }
        overall_all.push(overall);
    }
    Ok((overall_all, rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Balance {
    pub smd: f64,
    pub variance_ratio: f64,
    pub pass: bool,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = if x.len() > 1 {
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v)
}

/// Standardized mean difference and variance ratio of matched logits.
/// Passes when |smd| < 0.25 and the ratio lies in [0.5, 2].
pub fn balance_diagnostics(treated: &[f64], control: &[f64]) -> Result<Balance> {
    if treated.is_empty() || control.is_empty() {
        return Err(Error::TooFew {
            what: "balance diagnostics",
            needed: 1,
            got: 0,
        });
    }
    let (mt, vt) = mean_var(treated);
    let (mc, vc) = mean_var(control);
    let pooled = ((vt + vc) / 2.0).sqrt();
    let smd = if pooled > 0.0 {
        (mt - mc) / pooled
    } else if mt == mc {
        0.0
    } else {
        (mt - mc).signum() * f64::INFINITY
    };
    let variance_ratio = if vc > 0.0 {
        vt / vc
    } else if vt == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    let pass = vc > 0.0 && smd.abs() < 0.25 && (0.5..=2.0).contains(&variance_ratio);
    Ok(Balance {
        smd,
        variance_ratio,
        pass,
    })
}

pub fn write_pairs(path: &Path, pairs: &[MatchedPair]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for p in pairs {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pairs(path: &Path) -> Result<Vec<MatchedPair>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
