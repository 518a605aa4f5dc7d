use rayon::prelude::*;

use super::simplex::NelderMead;
use crate::error::{invalid, Error, Result};
use crate::fock::{fock_quadrature_pdfs, FockDiagonalState};
use crate::scalar::Real;

pub const MIN_SAMPLES: usize = 1000;
pub const MAX_N_MAX: usize = 10;

/// `Pₙ(xⱼ)` tabulated once per sample set, row-major by sample.
#[derive(Debug, Clone)]
pub struct LikelihoodTable<T> {
    k: usize,
    p: Vec<T>,
}

impl<T: Real> LikelihoodTable<T> {
    pub fn new(samples: &[T], n_max: usize) -> Result<Self> {
        if !(1..=MAX_N_MAX).contains(&n_max) {
            return Err(invalid(format!("n_max {n_max} outside [1, {MAX_N_MAX}]")));
        }
        if samples.len() < MIN_SAMPLES {
            return Err(Error::InsufficientData(format!(
                "maximum likelihood needs at least {MIN_SAMPLES} samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(invalid("samples contain non-finite values"));
        }
        let first = samples[0];
        if samples.iter().all(|&x| x == first) {
            return Err(Error::FitFailure("samples have zero variance".into()));
        }
        let p = samples
            .par_iter()
            .flat_map_iter(|&x| fock_quadrature_pdfs(x, n_max))
            .collect();
        Ok(Self { k: n_max + 1, p })
    }

    /// Table for a resample given by row indices.
    pub fn gather(&self, rows: &[usize]) -> Result<Self> {
        let mut p = Vec::with_capacity(rows.len() * self.k);
        for &r in rows {
            p.extend_from_slice(&self.p[r * self.k..(r + 1) * self.k]);
        }
        let t = Self { k: self.k, p };
        let first = &t.p[..t.k];
        if t.p.chunks_exact(t.k).all(|row| row == first) {
            return Err(Error::FitFailure("samples have zero variance".into()));
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.p.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn n_max(&self) -> usize {
        self.k - 1
    }

    /// Neumaier-compensated, so `f32` tables stay usable at full experimental scale.
    pub fn loglik(&self, c: &[T]) -> T {
        let (sum, comp) = self
            .p
            .chunks_exact(self.k)
            .map(|row| {
                row.iter()
                    .zip(c)
                    .fold(T::zero(), |a, (&p, &c)| a + p * c)
                    .ln()
            })
            .fold((T::zero(), T::zero()), |(s, comp), l| {
                let t = s + l;
                let lost = if s.abs() >= l.abs() {
                    (s - t) + l
                } else {
                    (l - t) + s
                };
                (t, comp + lost)
            });
        sum + comp
    }

    /// Best of several downhill-simplex runs in softmax coordinates, then
    /// one restart from the winner.
    pub fn fit(&self, starts: &[Vec<T>], nm: &NelderMead) -> Result<MleFit<T>> {
        let objective = |y: &[T]| -self.loglik(&softmax(y));
        let runs: Vec<_> = starts
            .par_iter()
            .map(|y0| nm.minimize(objective, y0))
            .collect();
        let best = runs
            .iter()
            .min_by(|a, b| a.value.partial_cmp(&b.value).unwrap())
            .ok_or_else(|| invalid("no starting points"))?;
        let polish = nm.minimize(objective, &best.x);
        let evaluations = runs.iter().map(|r| r.evaluations).sum::<usize>() + polish.evaluations;
        let fin = if polish.value <= best.value {
            &polish
        } else {
            best
        };
        if !fin.value.is_finite() || fin.value >= T::max_value().unwrap() {
            return Err(Error::FitFailure("likelihood is zero everywhere".into()));
        }
        let c = softmax(&fin.x);
        Ok(MleFit {
            state: FockDiagonalState::new(c)?,
            loglik: -fin.value,
            evaluations,
            converged: polish.converged,
            y: fin.x.clone(),
        })
    }

    /// Uniform start plus vacuum-heavy and photon-heavy corners.
    pub fn default_starts(&self) -> Vec<Vec<T>> {
        let uniform = vec![T::zero(); self.k];
        let mut vac = uniform.clone();
        vac[0] = T::lit(3.0);
        let mut one = uniform.clone();
        one[1] = T::lit(3.0);
        vec![uniform, vac, one]
    }
}

pub(super) fn softmax<T: Real>(y: &[T]) -> Vec<T> {
    let m = y.iter().copied().fold(y[0], |a, b| a.max(b));
    let e: Vec<T> = y.iter().map(|&v| (v - m).exp()).collect();
    let s = e.iter().fold(T::zero(), |a, &b| a + b);
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone)]
pub struct MleFit<T> {
    pub state: FockDiagonalState<T>,
    pub loglik: T,
    pub evaluations: usize,
    pub converged: bool,
    /// Softmax coordinates of the optimum, reusable as a warm start.
    pub y: Vec<T>,
}

pub fn mle_photon_distribution<T: Real>(samples: &[T], n_max: usize) -> Result<MleFit<T>> {
    let table = LikelihoodTable::new(samples, n_max)?;
    table.fit(&table.default_starts(), &NelderMead::default())
}
