//! Rank correlation and inter-rater agreement.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KendallTau {
    pub tau: f64,
    pub z: f64,
    pub p: f64,
}

/// Tie-corrected Kendall tau-b with a two-sided normal-approximation p-value
/// using the tie-adjusted variance of the concordance count.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<KendallTau> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::TooFew {
            what: "Kendall tau",
            needed: 2,
            got: n,
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Kendall tau input".into()));
    }
    let mut s: i64 = 0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].total_cmp(&x[j]) as i64;
            let dy = y[i].total_cmp(&y[j]) as i64;
            s += dx * dy;
        }
    }
    let tx = tie_groups(x);
    let ty = tie_groups(y);
    let n0 = (n * (n - 1) / 2) as f64;
    let n1: f64 = tx.iter().map(|&t| t * (t - 1.0) / 2.0).sum();
    let n2: f64 = ty.iter().map(|&t| t * (t - 1.0) / 2.0).sum();
    if n1 == n0 || n2 == n0 {
        return Err(Error::Undefined("Kendall tau with a constant input"));
    }
    let s = s as f64;
    let tau = (s / ((n0 - n1) * (n0 - n2)).sqrt()).clamp(-1.0, 1.0);

    let nf = n as f64;
    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let vt: f64 = tx.iter().map(|&t| t * (t - 1.0) * (2.0 * t + 5.0)).sum();
    let vu: f64 = ty.iter().map(|&t| t * (t - 1.0) * (2.0 * t + 5.0)).sum();
    let v1 = tx.iter().map(|&t| t * (t - 1.0)).sum::<f64>() * ty.iter().map(|&t| t * (t - 1.0)).sum::<f64>()
        / (2.0 * nf * (nf - 1.0));
    let v2 = if n > 2 {
        tx.iter().map(|&t| t * (t - 1.0) * (t - 2.0)).sum::<f64>()
            * ty.iter().map(|&t| t * (t - 1.0) * (t - 2.0)).sum::<f64>()
            / (9.0 * nf * (nf - 1.0) * (nf - 2.0))
    } else {
        0.0
    };
    let var = (v0 - vt - vu) / 18.0 + v1 + v2;
    let z = if var > 0.0 { s / var.sqrt() } else { 0.0 };
    let p = (2.0 * Normal::standard().sf(z.abs())).min(1.0);
    Ok(KendallTau { tau, z, p })
}

/// Sizes of the groups of equal values (singletons included).
fn tie_groups(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut run = 1.0;
    for w in s.windows(2) {
        if w[0] == w[1] {
            run += 1.0;
        } else {
            out.push(run);
            run = 1.0;
        }
    }
    out.push(run);
    out
}

/// Units by raters grid of ordinal scores 1 to 5; `None` is a missing rating.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RatingsMatrix {
    raters: usize,
    rows: Vec<Vec<Option<u8>>>,
}

impl RatingsMatrix {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 5;

    pub fn new(raters: usize) -> Self {
        RatingsMatrix {
            raters,
            rows: Vec::new(),
        }
    }

    pub fn from_rows(rows: Vec<Vec<Option<u8>>>) -> Result<Self> {
        let raters = rows.first().map_or(0, Vec::len);
        let mut m = RatingsMatrix::new(raters);
        for r in rows {
            m.push_unit(r)?;
        }
        Ok(m)
    }

    pub fn push_unit(&mut self, row: Vec<Option<u8>>) -> Result<()> {
        if row.len() != self.raters {
            return Err(Error::DimensionMismatch {
                expected: self.raters,
                got: row.len(),
            });
        }
        if let Some(v) = row.iter().flatten().find(|v| !(Self::MIN..=Self::MAX).contains(*v)) {
            return Err(Error::invalid(format!("rating {v} outside 1..=5")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn units(&self) -> usize {
        self.rows.len()
    }

    pub fn raters(&self) -> usize {
        self.raters
    }

    pub fn rows(&self) -> &[Vec<Option<u8>>] {
        &self.rows
    }
}

/// Krippendorff's alpha with the ordinal difference function. Units with
/// fewer than two ratings are not pairable and are ignored.
pub fn krippendorff_alpha(ratings: &RatingsMatrix) -> Result<f64> {
    const K: usize = RatingsMatrix::MAX as usize;
    let mut o = [[0.0f64; K]; K];
    let mut used = 0usize;
    for row in ratings.rows() {
        let vals: Vec<usize> = row.iter().flatten().map(|&v| v as usize - 1).collect();
        let m = vals.len();
        if m < 2 {
            continue;
        }
        used += 1;
        let w = 1.0 / (m - 1) as f64;
        for (i, &a) in vals.iter().enumerate() {
            for (j, &b) in vals.iter().enumerate() {
                if i != j {
                    o[a][b] += w;
                }
            }
        }
    }
    if used == 0 {
        return Err(Error::Undefined("Krippendorff alpha without pairable values"));
    }
    let marg: Vec<f64> = o.iter().map(|r| r.iter().sum()).collect();
    let n: f64 = marg.iter().sum();
    let delta2 = |c: usize, k: usize| {
        let (lo, hi) = (c.min(k), c.max(k));
        let span: f64 = marg[lo..=hi].iter().sum::<f64>() - (marg[lo] + marg[hi]) / 2.0;
        span * span
    };
    let (mut d_o, mut d_e) = (0.0, 0.0);
    for c in 0..K {
        for k in 0..K {
            if c == k {
                continue;
            }
            let d = delta2(c, k);
            d_o += o[c][k] * d;
            d_e += marg[c] * marg[k] * d;
        }
    }
    d_o /= n;
    d_e /= n * (n - 1.0);
    if d_e == 0.0 {
        return Err(Error::Undefined("Krippendorff alpha with a single observed value"));
    }
    Ok(1.0 - d_o / d_e)
}

/// Middle value of exactly three ratings.
pub fn median_aggregate(ratings: &[u8]) -> Result<u8> {
    if ratings.len() != 3 {
        return Err(Error::invalid(format!(
            "median aggregation needs exactly 3 ratings, got {}",
            ratings.len()
        )));
    }
    let mut v = [ratings[0], ratings[1], ratings[2]];
    v.sort_unstable();
    Ok(v[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tau_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau_b(&a, &a).unwrap().tau, 1.0);
        let r = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(kendall_tau_b(&a, &r).unwrap().tau, -1.0);
        let t = kendall_tau_b(&a, &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((t.tau - 4.0 / 6.0).abs() < 1e-15);
        assert!(kendall_tau_b(&a, &[2.0; 4]).is_err());
        assert!(kendall_tau_b(&a[..1], &a[..1]).is_err());
    }

    #[test]
    fn tau_with_ties() {
        // C = 3, D = 1 and one tie on each side: 2 / sqrt(5 * 5).
        let x = [1.0, 1.0, 2.0, 3.0];
        let y = [1.0, 2.0, 2.0, 1.5];
        let t = kendall_tau_b(&x, &y).unwrap();
        let (mut c, mut d) = (0, 0);
        for i in 0..4 {
            for j in i + 1..4 {
                let s = (x[i] - x[j]) * (y[i] - y[j]);
                if s > 0.0 {
                    c += 1;
                } else if s < 0.0 {
                    d += 1;
                }
            }
        }
        let expect = (c - d) as f64 / (5.0f64 * 5.0).sqrt();
        assert!((t.tau - expect).abs() < 1e-15);
        assert!(t.p > 0.0 && t.p <= 1.0);
    }

    #[test]
    fn alpha_binary_by_hand() {
        // Units (1,1), (2,2), (1,2): alpha = 1 - (n-1)(o12+o21)/(2 n1 n2) = 4/9.
        let m = RatingsMatrix::from_rows(vec![
            vec![Some(1), Some(1)],
            vec![Some(2), Some(2)],
            vec![Some(1), Some(2)],
        ])
        .unwrap();
        assert!((krippendorff_alpha(&m).unwrap() - 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_perfect_and_missing() {
        let m = RatingsMatrix::from_rows(vec![
            vec![Some(3), Some(3), None],
            vec![Some(5), None, Some(5)],
            vec![Some(1), Some(1), Some(1)],
            vec![Some(2), None, None],
        ])
        .unwrap();
        assert_eq!(krippendorff_alpha(&m).unwrap(), 1.0);
        let lonely = RatingsMatrix::from_rows(vec![vec![Some(2), None]]).unwrap();
        assert!(krippendorff_alpha(&lonely).is_err());
        assert!(RatingsMatrix::from_rows(vec![vec![Some(6)]]).is_err());
    }

    #[test]
    fn alpha_near_zero_when_shuffled() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pool: Vec<u8> = (0..3000).map(|_| rng.random_range(1..=5)).collect();
        pool.shuffle(&mut rng);
        let rows = pool.chunks(3).map(|c| c.iter().map(|&v| Some(v)).collect()).collect();
        let a = krippendorff_alpha(&RatingsMatrix::from_rows(rows).unwrap()).unwrap();
        assert!(a.abs() < 0.1, "{a}");
    }

    #[test]
    fn medians() {
        assert_eq!(median_aggregate(&[5, 4, 5]).unwrap(), 5);
        assert_eq!(median_aggregate(&[1, 3, 5]).unwrap(), 3);
        assert_eq!(median_aggregate(&[2, 2, 5]).unwrap(), 2);
        assert!(median_aggregate(&[1, 2]).is_err());
    }
}
