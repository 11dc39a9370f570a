use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;

/// One-dimensional Gaussian mixture; components sorted by mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm1D {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub gmm: Gmm1D,
    /// Log-likelihood of the data before each M-step and after the last.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
}

/// Below this, `f64::exp` returns 0.
const EXP_UNDERFLOW: f64 = -745.2;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

impl Gmm1D {
    pub fn k(&self) -> usize {
        self.means.len()
    }

    /// Per component `ln w − ½(ln 2π + ln v)` and `1/(2v)`.
    fn log_terms(&self) -> (Vec<f64>, Vec<f64>) {
        let bias = (0..self.k())
            .map(|c| self.weights[c].ln() - 0.5 * (LN_2PI + self.variances[c].ln()))
            .collect();
        let half_inv = self.variances.iter().map(|v| 0.5 / v).collect();
        (bias, half_inv)
    }

    /// Posterior responsibilities for one value, written into `out`; returns
    /// the log density. `terms` comes from [`Gmm1D::log_terms`].
    fn posterior(&self, terms: &(Vec<f64>, Vec<f64>), x: f64, out: &mut [f64]) -> f64 {
        let (max, sum) = self.posterior_parts(terms, x, out);
        max + sum.ln()
    }

    /// As [`Gmm1D::posterior`], but returns the log density split as
    /// `max + ln(sum)` with `sum` in `[1, k]`, so callers can batch the
    /// logarithm. The largest component's weight is exactly 1 before
    /// normalization and skips its exponential.
    fn posterior_parts(&self, terms: &(Vec<f64>, Vec<f64>), x: f64, out: &mut [f64]) -> (f64, f64) {
        let (bias, half_inv) = terms;
        let mut max = f64::NEG_INFINITY;
        let mut arg = 0;
        for (c, o) in out.iter_mut().enumerate() {
            let d = x - self.means[c];
            *o = bias[c] - d * d * half_inv[c];
            if *o > max {
                max = *o;
                arg = c;
            }
        }
        let mut sum = 0.0;
        for (c, o) in out.iter_mut().enumerate() {
            let d = *o - max;
            // exp underflows to exactly zero here; skip its slow path.
            *o = if c == arg {
                1.0
            } else if d < EXP_UNDERFLOW {
                0.0
            } else {
                d.exp()
            };
            sum += *o;
        }
        let inv = 1.0 / sum;
        for o in out.iter_mut() {
            *o *= inv;
        }
        (max, sum)
    }

    pub fn log_likelihood(&self, values: &[f64]) -> f64 {
        let terms = self.log_terms();
        let mut buf = vec![0.0; self.k()];
        values.iter().map(|&x| self.posterior(&terms, x, &mut buf)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.variances.len() != k || self.weights.len() != k {
            return Err(Error::Contract("mixture component arrays disagree".into()));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Contract("mixture weights do not sum to 1".into()));
        }
        if self.variances.iter().any(|&v| !(v >= VARIANCE_FLOOR)) {
            return Err(Error::Contract("mixture variance below floor".into()));
        }
        Ok(())
    }
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre.
fn kmeans_pp(values: &[f64], k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut centers = vec![values[rng.random_range(0..values.len())]];
    let mut d2: Vec<f64> = values.iter().map(|v| (v - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut x = rng.random::<f64>() * total;
            let mut pick = values.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if x < d {
                    pick = i;
                    break;
                }
                x -= d;
            }
            values[pick]
        } else {
            values[rng.random_range(0..values.len())]
        };
        centers.push(next);
        for (d, v) in d2.iter_mut().zip(values) {
            *d = d.min((v - next).powi(2));
        }
    }
    centers
}

/// EM fit from a k-means++ start. Stops when the gain in log-likelihood per
/// value drops below `tol` or after `max_iter` iterations. When `k` exceeds the number of
/// distinct values it is reduced with a warning.
pub fn fit_gmm(values: &[f64], k: usize, max_iter: usize, tol: f64, seed: u64) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if values.is_empty() {
        return Err(Error::Field("cannot fit a mixture to no values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Field("non-finite value in field".into()));
    }
    // Distinct values, counted only up to k.
    let mut distinct: Vec<f64> = Vec::with_capacity(k);
    for &v in values {
        if !distinct.contains(&v) {
            distinct.push(v);
            if distinct.len() == k {
                break;
            }
        }
    }
    let k = if k > distinct.len() {
        warn!("k = {k} exceeds the {} distinct field values; using {}", distinct.len(), distinct.len());
        distinct.len()
    } else {
        k
    };
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(VARIANCE_FLOOR);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp(values, k, &mut rng);
    centers.sort_by(f64::total_cmp);
    let mut gmm = Gmm1D {
        means: centers,
        variances: vec![var; k],
        weights: vec![1.0 / k as f64; k],
    };
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut r = vec![0.0; k];
    loop {
        // One pass computes the log-likelihood and the sufficient statistics
        // for the next M-step. Values are centred on the data mean so the
        // second moment keeps its precision.
        let (bias, half_inv) = gmm.log_terms();
        let means = &gmm.means;
        let mut ll = 0.0;
        let mut prod = 1.0;
        let (mut nk, mut s1, mut s2) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        for (i, &x) in values.iter().enumerate() {
            let mut max = f64::NEG_INFINITY;
            let mut arg = 0;
            for c in 0..k {
                let d = x - means[c];
                let o = bias[c] - d * d * half_inv[c];
                r[c] = o;
                if o > max {
                    max = o;
                    arg = c;
                }
            }
            let mut sum = 0.0;
            for c in 0..k {
                let d = r[c] - max;
                r[c] = if c == arg {
                    1.0
                } else if d < EXP_UNDERFLOW {
                    0.0
                } else {
                    d.exp()
                };
                sum += r[c];
            }
            // Each factor is at most k, so batches of 32 stay finite.
            ll += max;
            prod *= sum;
            if i % 32 == 31 {
                ll += prod.ln();
                prod = 1.0;
            }
            let inv = 1.0 / sum;
            let y = x - mean;
            for c in 0..k {
                let w = r[c] * inv;
                nk[c] += w;
                s1[c] += w * y;
                s2[c] += w * y * y;
            }
        }
        ll += prod.ln();
        let gain = history.last().map(|&prev: &f64| ll - prev);
        history.push(ll);
        if iterations >= max_iter || gain.is_some_and(|g| g < tol * n) {
            break;
        }
        iterations += 1;
        for c in 0..k {
            let nk = nk[c];
            if nk <= 0.0 {
                continue;
            }
            let m = s1[c] / nk;
            gmm.means[c] = mean + m;
            gmm.variances[c] = (s2[c] / nk - m * m).max(VARIANCE_FLOOR);
            gmm.weights[c] = nk / n;
        }
        let wsum: f64 = gmm.weights.iter().sum();
        gmm.weights.iter_mut().for_each(|w| *w /= wsum);
    }
    // Canonical component order.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| gmm.means[a].total_cmp(&gmm.means[b]).then(a.cmp(&b)));
    let gmm = Gmm1D {
        means: order.iter().map(|&c| gmm.means[c]).collect(),
        variances: order.iter().map(|&c| gmm.variances[c]).collect(),
        weights: order.iter().map(|&c| gmm.weights[c]).collect(),
    };
    Ok(GmmFit {
        gmm,
        log_likelihood: history,
        iterations,
    })
}

/// Per-value posterior probabilities, `k` entries per row.
pub fn soft_assign(gmm: &Gmm1D, values: &[f64]) -> Vec<Vec<f64>> {
    let terms = gmm.log_terms();
    values
        .iter()
        .map(|&x| {
            let mut r = vec![0.0; gmm.k()];
            gmm.posterior(&terms, x, &mut r);
            r
        })
        .collect()
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
