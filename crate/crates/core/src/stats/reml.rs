//! Linear mixed model with one random intercept, fitted by restricted
//! maximum likelihood.
//!
//! With V = σ²(I + λZZᵀ) the restricted log-likelihood profiles out σ² and β
//! in closed form, leaving a one-dimensional search over the variance ratio
//! λ = σ²_group / σ². Each group's block of V⁻¹ is (I - w 11ᵀ)/σ² with
//! w = λ / (1 + λ m) for a group of size m.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Dense design matrix with named columns, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    names: Vec<String>,
    rows: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let p = names.len();
        let mut data = Vec::with_capacity(rows.len() * p);
        for r in &rows {
            if r.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: r.len(),
                });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("design matrix".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Design {
            names,
            rows: rows.len(),
            data,
        })
    }

    /// Intercept, a, b and a:b for two 0/1 factors.
    pub fn interaction(a_name: &str, a: &[f64], b_name: &str, b: &[f64]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        let names = vec![
            "Intercept".to_string(),
            a_name.to_string(),
            b_name.to_string(),
            format!("{a_name}:{b_name}"),
        ];
        Design::new(names, a.iter().zip(b).map(|(&x, &y)| vec![1.0, x, y, x * y]).collect())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.ncols();
        &self.data[i * p..(i + 1) * p]
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.ncols(), &self.data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedModelFit {
    pub coefficients: Vec<Coefficient>,
    pub group_variance: f64,
    pub residual_variance: f64,
    /// Group-to-residual variance ratio at the optimum.
    pub ratio: f64,
    pub log_likelihood: f64,
    pub n_obs: usize,
    pub n_groups: usize,
}

impl MixedModelFit {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// Per-group sufficient statistics.
struct Group {
    m: f64,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    s: DVector<f64>,
    sy: f64,
    yy: f64,
}

struct Problem {
    n: usize,
    p: usize,
    groups: Vec<Group>,
}

struct Profile {
    ll: f64,
    beta: DVector<f64>,
    a_inv: DMatrix<f64>,
    sigma2: f64,
}

impl Problem {
    fn new(y: &[f64], x: &Design, groups: &[usize]) -> Self {
        let p = x.ncols();
        let mut by: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &g) in groups.iter().enumerate() {
            by.entry(g).or_default().push(i);
        }
        let groups = by
            .into_values()
            .map(|rows| {
                let mut g = Group {
                    m: rows.len() as f64,
                    xtx: DMatrix::zeros(p, p),
                    xty: DVector::zeros(p),
                    s: DVector::zeros(p),
                    sy: 0.0,
                    yy: 0.0,
                };
                for &i in &rows {
                    let r = DVector::from_column_slice(x.row(i));
                    g.xtx += &r * r.transpose();
                    g.xty += &r * y[i];
                    g.s += &r;
                    g.sy += y[i];
                    g.yy += y[i] * y[i];
                }
                g
            })
            .collect();
        Problem { n: y.len(), p, groups }
    }

    fn profile(&self, lambda: f64) -> Option<Profile> {
        let p = self.p;
        let mut a = DMatrix::zeros(p, p);
        let mut b = DVector::zeros(p);
        let mut q = 0.0;
        let mut logdet_h = 0.0;
        for g in &self.groups {
            let w = lambda / (1.0 + lambda * g.m);
            a += &g.xtx - &g.s * g.s.transpose() * w;
            b += &g.xty - &g.s * (w * g.sy);
            q += g.yy - w * g.sy * g.sy;
            logdet_h += (lambda * g.m).ln_1p();
        }
        let chol = a.cholesky()?;
        let beta = chol.solve(&b);
        let rss = q - b.dot(&beta);
        let dof = (self.n - p) as f64;
        let sigma2 = rss / dof;
        if !(sigma2 > 0.0) {
            return None;
        }
        let logdet_a: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let ll = -0.5 * (dof * ((2.0 * std::f64::consts::PI).ln() + sigma2.ln() + 1.0) + logdet_h + logdet_a);
        Some(Profile {
            ll,
            beta,
            a_inv: chol.inverse(),
            sigma2,
        })
    }
}

/// Restricted log-likelihood at variance ratio `lambda`, with σ² and β
/// profiled out.
pub fn restricted_log_likelihood(y: &[f64], x: &Design, groups: &[usize], lambda: f64) -> Result<f64> {
    validate(y, x, groups)?;
    Problem::new(y, x, groups)
        .profile(lambda)
        .map(|p| p.ll)
        .ok_or(Error::Undefined("restricted likelihood at this variance ratio"))
}

const GRID_LO: f64 = -6.0;
const GRID_HI: f64 = 6.0;
const GRID_POINTS: usize = 61;
const TOLERANCE: f64 = 1e-8;

/// Fits y = Xβ + u_group + e. The ratio is located on a log grid and refined
/// by golden-section search; a maximum at the top of the grid is reported as
/// a bracketing failure with the likelihood trace.
pub fn reml_random_intercept(y: &[f64], x: &Design, groups: &[usize]) -> Result<MixedModelFit> {
    validate(y, x, groups)?;
    check_rank(x)?;
    let prob = Problem::new(y, x, groups);
    if prob.groups.len() < 2 {
        return Err(Error::TooFew {
            what: "random intercept model (groups)",
            needed: 2,
            got: prob.groups.len(),
        });
    }
    let f = |l: f64| prob.profile(l).map_or(f64::NEG_INFINITY, |p| p.ll);

    let mut grid = vec![0.0];
    grid.extend(
        (0..GRID_POINTS).map(|i| 10f64.powf(GRID_LO + (GRID_HI - GRID_LO) * i as f64 / (GRID_POINTS - 1) as f64)),
    );
    let trace: Vec<(f64, f64)> = grid.iter().map(|&l| (l, f(l))).collect();
    let best = (0..trace.len())
        .max_by(|&i, &j| trace[i].1.total_cmp(&trace[j].1).then(j.cmp(&i)))
        .unwrap_or(0);
    if !trace[best].1.is_finite() || best == trace.len() - 1 {
        return Err(Error::Bracket(trace));
    }
    let (mut lo, mut hi) = (trace[best.saturating_sub(1)].0, trace[best + 1].0);

    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > TOLERANCE * (1.0 + lo.abs()) {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
    }
    let candidates = [
        (lo, f(lo)),
        (hi, f(hi)),
        ((lo + hi) / 2.0, f((lo + hi) / 2.0)),
        trace[best],
    ];
    let (ratio, _) = candidates.into_iter().fold(
        (f64::NAN, f64::NEG_INFINITY),
        |acc, c| if c.1 > acc.1 { c } else { acc },
    );

    let fit = prob
        .profile(ratio)
        .ok_or(Error::Undefined("restricted likelihood at the optimum"))?;
    let normal = Normal::standard();
    let coefficients = x
        .names()
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let std_error = (fit.sigma2 * fit.a_inv[(i, i)]).sqrt();
            let estimate = fit.beta[i];
            let z = estimate / std_error;
            Coefficient {
                name: name.clone(),
                estimate,
                std_error,
                z,
                p: (2.0 * normal.sf(z.abs())).min(1.0),
            }
        })
        .collect();
    Ok(MixedModelFit {
        coefficients,
        group_variance: ratio * fit.sigma2,
        residual_variance: fit.sigma2,
        ratio,
        log_likelihood: fit.ll,
        n_obs: y.len(),
        n_groups: prob.groups.len(),
    })
}

fn validate(y: &[f64], x: &Design, groups: &[usize]) -> Result<()> {
    if y.len() != x.nrows() || groups.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: if y.len() != x.nrows() { x.nrows() } else { groups.len() },
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response".into()));
    }
    if y.len() <= x.ncols() {
        return Err(Error::TooFew {
            what: "mixed model (observations beyond the number of columns)",
            needed: x.ncols() + 1,
            got: y.len(),
        });
    }
    Ok(())
}

/// Fails with the names of a dependent column and the earlier columns that
/// span it.
fn check_rank(x: &Design) -> Result<()> {
    let m = x.matrix();
    let mut basis: Vec<usize> = Vec::new();
    for j in 0..m.ncols() {
        let col = m.column(j).into_owned();
        let norm = col.norm();
        if basis.is_empty() {
            if norm == 0.0 {
                return Err(Error::RankDeficient(vec![x.names()[j].clone()]));
            }
            basis.push(j);
            continue;
        }
        let b = m.select_columns(&basis);
        let coef = (b.transpose() * &b)
            .cholesky()
            .map(|c| c.solve(&(b.transpose() * &col)))
            .ok_or_else(|| Error::RankDeficient(basis.iter().map(|&k| x.names()[k].clone()).collect()))?;
        let resid = (&col - &b * &coef).norm();
        if resid <= 1e-10 * norm.max(1.0) {
            let mut names: Vec<String> = basis
                .iter()
                .zip(coef.iter())
                .filter(|(_, c)| c.abs() > 1e-8)
                .map(|(&k, _)| x.names()[k].clone())
                .collect();
            names.push(x.names()[j].clone());
            return Err(Error::RankDeficient(names));
        }
        basis.push(j);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn simulate(seed: u64, groups: usize, per: usize, group_sd: f64) -> (Vec<f64>, Design, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::new();
        let mut rows = Vec::new();
        let mut g = Vec::new();
        for k in 0..groups {
            let u: f64 = group_sd * rng.sample::<f64, _>(StandardNormal);
            for _ in 0..per {
                let x: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                y.push(1.0 + 2.0 * x + u + e);
                rows.push(vec![1.0, x]);
                g.push(k);
            }
        }
        (y, Design::new(vec!["Intercept".into(), "x".into()], rows).unwrap(), g)
    }

    #[test]
    fn recovers_a_planted_coefficient() {
        let (y, x, g) = simulate(3, 50, 20, 1.0);
        let fit = reml_random_intercept(&y, &x, &g).unwrap();
        let c = fit.coefficient("x").unwrap();
        assert!((c.estimate - 2.0).abs() < 3.0 * c.std_error, "{c:?}");
        assert!(
            fit.group_variance > 0.3 && fit.group_variance < 2.0,
            "{}",
            fit.group_variance
        );
        assert!(fit.coefficients.iter().all(|c| (0.0..=1.0).contains(&c.p)));
    }

    #[test]
    fn shift_invariance() {
        let (y, x, g) = simulate(5, 12, 8, 0.7);
        let a = reml_random_intercept(&y, &x, &g).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + 10.0).collect();
        let b = reml_random_intercept(&shifted, &x, &g).unwrap();
        assert!((a.group_variance - b.group_variance).abs() < 1e-6);
        let (ia, ib) = (a.coefficient("Intercept").unwrap(), b.coefficient("Intercept").unwrap());
        assert!((ib.estimate - ia.estimate - 10.0).abs() < 1e-6);
    }

    #[test]
    fn collinear_columns_are_named() {
        let rows = (0..10).map(|i| vec![1.0, i as f64, 2.0 * i as f64 + 1.0]).collect();
        let x = Design::new(vec!["Intercept".into(), "a".into(), "b".into()], rows).unwrap();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let g: Vec<usize> = (0..10).map(|i| i % 2).collect();
        match reml_random_intercept(&y, &x, &g) {
            Err(Error::RankDeficient(names)) => assert_eq!(names, vec!["Intercept", "a", "b"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_group_is_rejected() {
        let (y, x, _) = simulate(1, 1, 10, 0.0);
        assert!(reml_random_intercept(&y, &x, &[0; 10]).is_err());
    }

    #[test]
    fn interaction_design() {
        let d = Design::interaction("Gender", &[0.0, 1.0, 1.0], "isDissimilar", &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(d.names()[3], "Gender:isDissimilar");
        assert_eq!(d.row(2), &[1.0, 1.0, 1.0, 1.0]);
    }
}
