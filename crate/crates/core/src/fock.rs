//! Phase-insensitive single-mode states as photon-number distributions.
//!
//! Quadrature convention: vacuum variance 1/2, so `P₀(x) = e^{-x²}/√π`.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::modes::{overlap_sq, ModeFunction};
use crate::scalar::Real;

/// Tolerance on `Σcₙ = 1`, widened to the rounding of narrower scalars.
pub const PROB_TOL: f64 = 1e-9;

/// Default truncation of the photon-number basis.
pub const DEFAULT_N_MAX: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct FockDiagonalState<T> {
    c: Vec<T>,
}

impl<T: Real> FockDiagonalState<T> {
    pub fn new(c: Vec<T>) -> Result<Self> {
        if c.is_empty() {
            return Err(invalid("photon-number distribution is empty"));
        }
        if c.iter().any(|&x| !x.is_finite() || x < T::zero()) {
            return Err(invalid("probabilities must be finite and non-negative"));
        }
        let total = c.iter().fold(T::zero(), |a, &x| a + x).as_f64();
        let tol = PROB_TOL.max(4.0 * c.len() as f64 * T::default_epsilon().as_f64());
        if (total - 1.0).abs() > tol {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { c })
    }

    /// Clamps negatives to zero and rescales to unit sum.
    pub fn from_weights(w: Vec<T>) -> Result<Self> {
        let w: Vec<T> = w.into_iter().map(|x| x.max(T::zero())).collect();
        let total = w.iter().fold(T::zero(), |a, &x| a + x);
        if !(total > T::zero()) || !total.is_finite() {
            return Err(Error::DegenerateInput(
                "weights have no positive mass".into(),
            ));
        }
        Ok(Self {
            c: w.into_iter().map(|x| x / total).collect(),
        })
    }

    pub fn vacuum() -> Self {
        Self { c: vec![T::one()] }
    }

    pub fn fock(n: usize) -> Self {
        let mut c = vec![T::zero(); n + 1];
        c[n] = T::one();
        Self { c }
    }

    /// `(1-p)|0⟩⟨0| + p|1⟩⟨1|`.
    pub fn single_photon_mixture(p: T) -> Result<Self> {
        if !(p >= T::zero() && p <= T::one()) {
            return Err(invalid(format!("purity {p} outside [0, 1]")));
        }
        Ok(Self {
            c: vec![T::one() - p, p],
        })
    }

    /// Poisson distribution truncated at `n_max` and renormalized.
    pub fn poisson(mean: T, n_max: usize) -> Result<Self> {
        let mut w = Vec::with_capacity(n_max + 1);
        let mut term = (-mean).exp();
        for n in 0..=n_max {
            w.push(term);
            term = term * mean / T::lit((n + 1) as f64);
        }
        Self::from_weights(w)
    }

    /// Geometric (thermal) distribution truncated at `n_max` and renormalized.
    pub fn thermal(mean: T, n_max: usize) -> Result<Self> {
        let ratio = mean / (T::one() + mean);
        let mut w = Vec::with_capacity(n_max + 1);
        let mut term = T::one();
        for _ in 0..=n_max {
            w.push(term);
            term *= ratio;
        }
        Self::from_weights(w)
    }

    pub fn probabilities(&self) -> &[T] {
        &self.c
    }

    pub fn n_max(&self) -> usize {
        self.c.len() - 1
    }

    /// `cₙ`, zero beyond the truncation.
    pub fn prob(&self, n: usize) -> T {
        self.c.get(n).copied().unwrap_or_else(T::zero)
    }

    /// Zero-pads or truncates (renormalizing) to `n_max`.
    pub fn resized(&self, n_max: usize) -> Result<Self> {
        let mut c = self.c.clone();
        c.resize(n_max + 1, T::zero());
        Self::from_weights(c)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,c_n")?;
        for (n, c) in self.c.iter().enumerate() {
            writeln!(w, "{n},{c}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty distribution file".into()))??;
        if header.trim() != "n,c_n" {
            return Err(Error::Format(format!(
                "unexpected distribution header '{header}'"
            )));
        }
        let mut c = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (n, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("malformed row '{line}'")))?;
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad index '{n}'")))?;
            if n != row {
                return Err(Error::Format(format!("expected n = {row}, found {n}")));
            }
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad value '{v}'")))?;
            c.push(T::lit(v));
        }
        Self::new(c)
    }
}

/// Harmonic-oscillator eigenfunctions `φₙ(x) = Hₙ(x)e^{-x²/2}/√(2ⁿn!√π)`
/// for `n = 0..=n_max`, by the normalized three-term recurrence.
pub fn hermite_functions<T: Real>(x: T, n_max: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n_max + 1);
    let phi0 = T::pi().powf(T::lit(-0.25)) * (-x * x * T::lit(0.5)).exp();
    out.push(phi0);
    if n_max == 0 {
        return out;
    }
    out.push(T::lit(2f64.sqrt()) * x * phi0);
    for n in 1..n_max {
        let nf = T::lit(n as f64);
        let next = (T::lit(2.0) / (nf + T::one())).sqrt() * x * out[n]
            - (nf / (nf + T::one())).sqrt() * out[n - 1];
        out.push(next);
    }
    out
}

/// `Pₙ(x)` for `n = 0..=n_max`.
pub fn fock_quadrature_pdfs<T: Real>(x: T, n_max: usize) -> Vec<T> {
    hermite_functions(x, n_max)
        .into_iter()
        .map(|f| f * f)
        .collect()
}

/// Laguerre polynomials `Lₙ(y)` for `n = 0..=n_max`.
pub fn laguerre<T: Real>(y: T, n_max: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(T::one());
    if n_max == 0 {
        return out;
    }
    out.push(T::one() - y);
    for k in 1..n_max {
        let kf = T::lit(k as f64);
        let next = ((T::lit(2.0) * kf + T::one() - y) * out[k] - kf * out[k - 1]) / (kf + T::one());
        out.push(next);
    }
    out
}

/// Marginal quadrature density `Σ cₙ Pₙ(x)`.
pub fn quadrature_pdf<T: Real>(state: &FockDiagonalState<T>, x: T) -> T {
    fock_quadrature_pdfs(x, state.n_max())
        .into_iter()
        .zip(&state.c)
        .fold(T::zero(), |acc, (p, &c)| acc + c * p)
}

/// `W(x, p) = Σ cₙ (-1)ⁿ Lₙ(2r²) e^{-r²} / π`.
pub fn wigner<T: Real>(state: &FockDiagonalState<T>, x: T, p: T) -> T {
    let r2 = x * x + p * p;
    let lag = laguerre(T::lit(2.0) * r2, state.n_max());
    let mut acc = T::zero();
    for (n, (&c, l)) in state.c.iter().zip(lag).enumerate() {
        if n % 2 == 0 {
            acc += c * l;
        } else {
            acc -= c * l;
        }
    }
    acc * (-r2).exp() / T::pi()
}

/// `W(0, 0) = Σ (-1)ⁿ cₙ / π`.
pub fn wigner_origin<T: Real>(state: &FockDiagonalState<T>) -> T {
    let parity =
        state.c.iter().enumerate().fold(
            T::zero(),
            |acc, (n, &c)| {
                if n % 2 == 0 {
                    acc + c
                } else {
                    acc - c
                }
            },
        );
    parity / T::pi()
}

/// Cut of a rotationally symmetric Wigner function along the x axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerSection {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

impl WignerSection {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,w")?;
        for (x, v) in self.x.iter().zip(&self.w) {
            writeln!(w, "{x},{v}")?;
        }
        Ok(())
    }
}

/// Samples `W(x, 0)` on `points` evenly spaced values over `[-extent, extent]`.
pub fn wigner_section<T: Real>(
    state: &FockDiagonalState<T>,
    extent: f64,
    points: usize,
) -> WignerSection {
    let points = points.max(2);
    let x: Vec<f64> = (0..points)
        .map(|i| -extent + 2.0 * extent * i as f64 / (points - 1) as f64)
        .collect();
    let w = x
        .iter()
        .map(|&x| wigner(state, T::lit(x), T::zero()).as_f64())
        .collect();
    WignerSection { x, w }
}

/// Beam-splitter loss with transmission `eta`.
pub fn apply_loss<T: Real>(state: &FockDiagonalState<T>, eta: T) -> Result<FockDiagonalState<T>> {
    if !(eta >= T::zero() && eta <= T::one()) {
        return Err(invalid(format!("transmission {eta} outside [0, 1]")));
    }
    let n_max = state.n_max();
    let loss = T::one() - eta;
    let mut out = vec![T::zero(); n_max + 1];
    for (n, &cn) in state.c.iter().enumerate() {
        if cn == T::zero() {
            continue;
        }
        // binomial weights C(n,m) η^m (1-η)^(n-m), built by ratio so nothing overflows
        let mut binom = T::one();
        for (m, slot) in out.iter_mut().enumerate().take(n + 1) {
            *slot += cn * binom * eta.powi(m as i32) * loss.powi((n - m) as i32);
            binom = binom * T::lit((n - m) as f64) / T::lit((m + 1) as f64);
        }
    }
    Ok(FockDiagonalState { c: out })
}

pub fn mean_photon<T: Real>(state: &FockDiagonalState<T>) -> T {
    state
        .c
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (n, &c)| acc + T::lit(n as f64) * c)
}

/// `g²(0) = ⟨n(n-1)⟩ / ⟨n⟩²`.
pub fn g2_zero<T: Real>(state: &FockDiagonalState<T>) -> Result<T> {
    let mean = mean_photon(state);
    if !(mean > T::zero()) {
        return Err(Error::UndefinedCorrelation(
            "g2 is undefined for the vacuum".into(),
        ));
    }
    let fact2 = state.c.iter().enumerate().fold(T::zero(), |acc, (n, &c)| {
        let nf = T::lit(n as f64);
        acc + nf * (nf - T::one()) * c
    });
    Ok(fact2 / (mean * mean))
}

/// Single-photon weight seen through a mismatched mode: `p·|(ψ₀, ψ)|²`.
pub fn purity_under_mismatch<T: Real>(
    p: T,
    psi0: &ModeFunction<T>,
    psi: &ModeFunction<T>,
) -> Result<T> {
    if !(p >= T::zero() && p <= T::one()) {
        return Err(invalid(format!("purity {p} outside [0, 1]")));
    }
    Ok(p * overlap_sq(psi0, psi)?)
}

/// Exact sampler for photon numbers and Fock-state quadratures.
///
/// Quadratures of `|n⟩` are drawn by rejection from `N(0, n + 1/2)`; the
/// envelope constant is found on a fine grid once per `n`.
#[derive(Debug, Clone)]
pub struct FockSampler {
    cdf: Vec<f64>,
    bounds: Vec<f64>,
}

impl FockSampler {
    pub fn new<T: Real>(state: &FockDiagonalState<T>) -> Self {
        let mut acc = 0.0;
        let cdf = state
            .c
            .iter()
            .map(|c| {
                acc += c.as_f64();
                acc
            })
            .collect();
        let bounds = (0..=state.n_max()).map(envelope_bound).collect();
        Self { cdf, bounds }
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        self.cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cdf.len() - 1)
    }

    pub fn sample_quadrature<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> f64 {
        let s2 = n as f64 + 0.5;
        let s = s2.sqrt();
        if n == 0 {
            return s * f64::std_normal(rng);
        }
        let bound = self.bounds[n];
        loop {
            let x = s * f64::std_normal(rng);
            let accept = fock_quadrature_pdfs(x, n)[n] / (proposal_pdf(x, s2) * bound);
            if rng.random::<f64>() < accept {
                return x;
            }
        }
    }

    /// One quadrature draw from `Σ cₙ Pₙ`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let n = self.sample_n(rng);
        self.sample_quadrature(n, rng)
    }
}

fn proposal_pdf(x: f64, s2: f64) -> f64 {
    (-x * x / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt()
}

fn envelope_bound(n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let s2 = n as f64 + 0.5;
    let x_max = 8.0 + 4.0 * s2.sqrt();
    let steps = 200_000;
    let mut best: f64 = 0.0;
    for i in 0..=steps {
        let x = x_max * i as f64 / steps as f64;
        best = best.max(fock_quadrature_pdfs(x, n)[n] / proposal_pdf(x, s2));
    }
    best * 1.001
}
