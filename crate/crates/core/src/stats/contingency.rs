//! 2x2 tables: odds ratio with Fisher's exact test, Breslow-Day
//! homogeneity, and per-stratum reports.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// a = treated & positive, b = treated & negative, c = control & positive,
/// d = control & negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Table2x2 {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl Table2x2 {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Table2x2 { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn add(&mut self, other: &Table2x2) {
        self.a += other.a;
        self.b += other.b;
        self.c += other.c;
        self.d += other.d;
    }

    fn has_zero_margin(&self) -> bool {
        self.a + self.b == 0 || self.c + self.d == 0 || self.a + self.c == 0 || self.b + self.d == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OddsRatio {
    pub or: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p: f64,
    pub level: f64,
    /// 0.5 was added to every cell for the OR and interval.
    pub corrected: bool,
}

/// Sample odds ratio with a Woolf (log-normal) interval and the two-sided
/// Fisher exact p-value. A table with a zero cell gets 0.5 added to every
/// cell for the OR and interval only.
pub fn odds_ratio_fisher(t: &Table2x2, level: f64) -> Result<OddsRatio> {
    if t.a + t.b == 0 || t.c + t.d == 0 {
        return Err(Error::Undefined("odds ratio with an empty row"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level {level} outside (0, 1)")));
    }
    let corrected = t.a == 0 || t.b == 0 || t.c == 0 || t.d == 0;
    let k = if corrected { 0.5 } else { 0.0 };
    let (a, b, c, d) = (t.a as f64 + k, t.b as f64 + k, t.c as f64 + k, t.d as f64 + k);
    let or = (a * d) / (b * c);
    let se = (1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d).sqrt();
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0);
    Ok(OddsRatio {
        or,
        ci_low: (or.ln() - z * se).exp(),
        ci_high: (or.ln() + z * se).exp(),
        p: fisher_exact_p(t),
        level,
        corrected,
    })
}

/// Largest total for which tables are enumerated with exact integers.
const EXACT_LIMIT: u64 = 100;

/// Two-sided Fisher exact p-value: total probability of the tables with the
/// observed margins that are no more likely than the observed one.
pub fn fisher_exact_p(t: &Table2x2) -> f64 {
    let r1 = t.a + t.b;
    let r2 = t.c + t.d;
    let c1 = t.a + t.c;
    let n = t.total();
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    if lo == hi {
        return 1.0;
    }
    if n <= EXACT_LIMIT {
        fisher_exact_int(t)
    } else {
        fisher_exact_float(t)
    }
}

fn fisher_exact_int(t: &Table2x2) -> f64 {
    let (r1, r2, c1) = (t.a + t.b, t.c + t.d, t.a + t.c);
    let (lo, hi) = (c1.saturating_sub(r2), r1.min(c1));
    let w = |x: u64| binomial(r1, x) * binomial(r2, c1 - x);
    let observed = w(t.a);
    let (mut hit, mut all) = (0u128, 0u128);
    for x in lo..=hi {
        let wx = w(x);
        all += wx;
        if wx <= observed {
            hit += wx;
        }
    }
    (hit as f64 / all as f64).min(1.0)
}

fn fisher_exact_float(t: &Table2x2) -> f64 {
    let (r1, r2, c1) = (t.a + t.b, t.c + t.d, t.a + t.c);
    let (lo, hi) = (c1.saturating_sub(r2), r1.min(c1));
    // Relative weights by the ratio recurrence, scaled at the mode.
    let mut logw = Vec::with_capacity((hi - lo + 1) as usize);
    let mut acc = 0.0f64;
    logw.push(0.0);
    for x in lo..hi {
        // w(x+1)/w(x) = (r1-x)(c1-x) / ((x+1)(r2-c1+x+1))
        let num = ((r1 - x) as f64) * ((c1 - x) as f64);
        let den = ((x + 1) as f64) * ((r2 + x + 1 - c1) as f64);
        acc += num.ln() - den.ln();
        logw.push(acc);
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let observed = w[(t.a - lo) as usize];
    let cutoff = observed * (1.0 + 1e-7);
    let all: f64 = w.iter().sum();
    let hit: f64 = w.iter().filter(|&&x| x <= cutoff).sum();
    (hit / all).min(1.0)
}

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * u128::from(n - i) / u128::from(i + 1);
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreslowDay {
    pub chi2: f64,
    pub df: usize,
    pub p: f64,
    pub common_or: f64,
    /// Strata dropped for having a zero margin.
    pub excluded: usize,
}

/// Breslow-Day test of a common odds ratio across strata, using the
/// Mantel-Haenszel estimate.
pub fn breslow_day(strata: &[Table2x2]) -> Result<BreslowDay> {
    let used: Vec<&Table2x2> = strata.iter().filter(|t| !t.has_zero_margin()).collect();
    let excluded = strata.len() - used.len();
    if used.len() < 2 {
        return Err(Error::TooFew {
            what: "Breslow-Day test (strata with positive margins)",
            needed: 2,
            got: used.len(),
        });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for t in &used {
        let n = t.total() as f64;
        num += t.a as f64 * t.d as f64 / n;
        den += t.b as f64 * t.c as f64 / n;
    }
    if num == 0.0 || den == 0.0 {
        return Err(Error::Undefined("Mantel-Haenszel odds ratio is 0 or infinite"));
    }
    let psi = num / den;
    let mut chi2 = 0.0;
    for t in &used {
        let r1 = (t.a + t.b) as f64;
        let c1 = (t.a + t.c) as f64;
        let n = t.total() as f64;
        let x = expected_a(r1, c1, n, psi);
        let cells = [x, r1 - x, c1 - x, n - r1 - c1 + x];
        if cells.iter().any(|v| *v <= 0.0) {
            continue;
        }
        let var = 1.0 / cells.iter().map(|v| 1.0 / v).sum::<f64>();
        chi2 += (t.a as f64 - x).powi(2) / var;
    }
    let df = used.len() - 1;
    let p = ChiSquared::new(df as f64)
        .map_err(|_| Error::Undefined("chi-square degrees of freedom"))?
        .sf(chi2);
    Ok(BreslowDay {
        chi2,
        df,
        p,
        common_or: psi,
        excluded,
    })
}

/// Expected count in cell a with fixed margins under odds ratio `psi`: the
/// root of (1-psi)x^2 + (n - r1 - c1 + psi(r1 + c1))x - psi r1 c1 = 0
/// inside [max(0, r1 + c1 - n), min(r1, c1)].
fn expected_a(r1: f64, c1: f64, n: f64, psi: f64) -> f64 {
    let lo = (r1 + c1 - n).max(0.0);
    let hi = r1.min(c1);
    let qa = 1.0 - psi;
    let qb = n - r1 - c1 + psi * (r1 + c1);
    let qc = -psi * r1 * c1;
    if qa.abs() < 1e-12 {
        return (-qc / qb).clamp(lo, hi);
    }
    let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
    // Numerically stable pair of roots.
    let q = -0.5 * (qb + qb.signum() * disc);
    let roots = [q / qa, qc / q];
    roots
        .into_iter()
        .filter(|x| x.is_finite())
        .min_by(|x, y| {
            let dx = if *x < lo {
                lo - x
            } else if *x > hi {
                x - hi
            } else {
                0.0
            };
            let dy = if *y < lo {
                lo - y
            } else if *y > hi {
                y - hi
            } else {
                0.0
            };
            dx.total_cmp(&dy)
        })
        .unwrap_or(lo)
        .clamp(lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Significance {
    #[serde(rename = "")]
    None,
    #[serde(rename = "*")]
    P05,
    #[serde(rename = "**")]
    P01,
    #[serde(rename = "***")]
    P001,
}

impl Significance {
    pub fn of(p: f64) -> Self {
        if p < 0.001 {
            Significance::P001
        } else if p < 0.01 {
            Significance::P01
        } else if p < 0.05 {
            Significance::P05
        } else {
            Significance::None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumOr {
    pub stratum: String,
    pub table: Table2x2,
    /// `None` when a cell is below the minimum count.
    pub result: Option<OddsRatio>,
    pub significance: Option<Significance>,
}

/// One (treated, positive outcome, stratum) observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub treated: bool,
    pub positive: bool,
    pub stratum: String,
}

pub fn table_of<'a>(obs: impl IntoIterator<Item = &'a Observation>) -> Table2x2 {
    let mut t = Table2x2::default();
    for o in obs {
        match (o.treated, o.positive) {
            (true, true) => t.a += 1,
            (true, false) => t.b += 1,
            (false, true) => t.c += 1,
            (false, false) => t.d += 1,
        }
    }
    t
}

/// Odds ratio and Fisher test per stratum, strata in sorted order. Strata
/// with any cell below `min_cell` are reported without a result.
pub fn stratified_or_report(obs: &[Observation], min_cell: u64, level: f64) -> Result<Vec<StratumOr>> {
    let mut names: Vec<&str> = obs.iter().map(|o| o.stratum.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    names
        .into_iter()
        .map(|s| {
            let table = table_of(obs.iter().filter(|o| o.stratum == s));
            let enough = [table.a, table.b, table.c, table.d].iter().all(|&x| x >= min_cell);
            let result = if enough {
                Some(odds_ratio_fisher(&table, level)?)
            } else {
                None
            };
            Ok(StratumOr {
                stratum: s.to_string(),
                table,
                significance: result.map(|r| Significance::of(r.p)),
                result,
            })
        })
        .collect()
}

/// Upper bounds of `bins` equal-count age groups (the last bound is the
/// maximum age).
pub fn quantile_bins(ages: &[u8], bins: usize) -> Vec<u8> {
    if ages.is_empty() || bins == 0 {
        return Vec::new();
    }
    let mut sorted = ages.to_vec();
    sorted.sort_unstable();
    let mut bounds: Vec<u8> = (1..=bins)
        .map(|i| sorted[((i * sorted.len()).div_ceil(bins)).saturating_sub(1)])
        .collect();
    bounds.dedup();
    bounds
}

/// Label of the bin holding `age`, e.g. "23-27".
pub fn bin_label(age: u8, bounds: &[u8], min_age: u8) -> String {
    let mut lower = min_age;
    for &b in bounds {
        if age <= b {
            return format!("{lower}-{b}");
        }
        lower = b + 1;
    }
    format!("{lower}+")
}
