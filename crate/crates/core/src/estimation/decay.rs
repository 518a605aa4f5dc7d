use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

const TAU_CAP_SPANS: f64 = 100.0;

/// `P(t) = P0·exp(-t/τ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    #[serde(rename = "P0")]
    pub p0: f64,
    pub tau_us: f64,
    /// Data minus model, in input order.
    pub residuals: Vec<f64>,
    pub non_decreasing: bool,
    pub tau_capped: bool,
}

impl DecayFit {
    pub fn predict(&self, t_ns: f64) -> f64 {
        self.p0 * (-t_ns / (1000.0 * self.tau_us)).exp()
    }
}

/// Unweighted least squares (Levenberg-Marquardt in `P0` and `1/τ`),
/// started from a log-linear fit. Times in ns.
pub fn fit_exponential_decay<T: Real>(points: &[(T, T)]) -> Result<DecayFit> {
    if points.len() < 2 {
        return Err(invalid("decay fit needs at least 2 points"));
    }
    let pts: Vec<(f64, f64)> = points
        .iter()
        .map(|(t, p)| (t.as_f64() / 1000.0, p.as_f64()))
        .collect();
    for &(t, p) in &pts {
        if !t.is_finite() || !(p > 0.0 && p <= 1.0) {
            return Err(invalid(format!("bad decay point ({}, {p})", t * 1000.0)));
        }
    }
    let mut sorted = pts.clone();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(invalid("decay fit times must be distinct"));
    }
    let span = sorted.last().unwrap().0 - sorted[0].0;
    let non_decreasing = pts.len() >= 3 && sorted.windows(2).all(|w| w[1].1 >= w[0].1);

    // log-linear start
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1.ln() - ml)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let k_min = 1.0 / (TAU_CAP_SPANS * span);
    let mut k = (-sxy / sxx).max(k_min);
    let mut a = (ml + k * mt).exp();

    let sse = |a: f64, k: f64| {
        pts.iter()
            .map(|&(t, p)| (p - a * (-k * t).exp()).powi(2))
            .sum::<f64>()
    };
    let mut cost = sse(a, k);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let (mut jtj, mut jtr) = ([[0.0f64; 2]; 2], [0.0f64; 2]);
        for &(t, p) in &pts {
            let e = (-k * t).exp();
            let r = p - a * e;
            let j = [e, -a * t * e];
            for u in 0..2 {
                jtr[u] += j[u] * r;
                for v in 0..2 {
                    jtj[u][v] += j[u] * j[v];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let m = [
                [jtj[0][0] * (1.0 + lambda), jtj[0][1]],
                [jtj[1][0], jtj[1][1] * (1.0 + lambda)],
            ];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let da = (jtr[0] * m[1][1] - jtr[1] * m[0][1]) / det;
            let dk = (m[0][0] * jtr[1] - m[1][0] * jtr[0]) / det;
            let (na, nk) = (a + da, k + dk);
            let c = sse(na, nk);
            if c.is_finite() && c <= cost {
                let small = da.abs() <= 1e-14 * a.abs() && dk.abs() <= 1e-14 * k.abs().max(k_min);
                a = na;
                k = nk;
                cost = c;
                lambda = (lambda * 0.1).max(1e-12);
                improved = !small;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }

    let tau_capped = !(k > k_min);
    if tau_capped {
        k = k_min;
        let (num, den) = pts.iter().fold((0.0, 0.0), |(n, d), &(t, p)| {
            let e = (-k * t).exp();
            (n + p * e, d + e * e)
        });
        a = num / den;
    }
    Ok(DecayFit {
        p0: a,
        tau_us: 1.0 / k,
        residuals: pts.iter().map(|&(t, p)| p - a * (-k * t).exp()).collect(),
        non_decreasing,
        tau_capped,
    })
}
