use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mle::LikelihoodTable;
use super::simplex::NelderMead;
use crate::error::{invalid, Error, Result};
use crate::homodyne::{frame_rng, FrameSet};
use crate::modes::ModeFunction;
use crate::scalar::Real;

pub const DEFAULT_RESAMPLES: usize = 50;
const MIN_RESAMPLES: usize = 20;
const MAX_FAILURE_RATE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub std: f64,
    pub mean: f64,
    pub resamples: usize,
    pub failures: usize,
    /// `c₁` of each successful resample, in resample order.
    pub values: Vec<f64>,
}

/// Frames are resampled with replacement and re-estimated with the fixed
/// mode `psi0`.
pub fn bootstrap_purity<T: Real>(
    fs: &FrameSet,
    psi0: &ModeFunction<T>,
    resamples: usize,
    n_max: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    let x = fs.extract_all(psi0)?;
    bootstrap_quadratures(&x, resamples, n_max, seed)
}

/// Extraction is linear per frame, so resampling frames and resampling
/// their extracted quadratures are the same operation.
pub fn bootstrap_quadratures<T: Real>(
    x: &[T],
    resamples: usize,
    n_max: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    if resamples < MIN_RESAMPLES {
        return Err(invalid(format!(
            "bootstrap needs at least {MIN_RESAMPLES} resamples, got {resamples}"
        )));
    }
    let table = match LikelihoodTable::new(x, n_max) {
        Ok(t) => t,
        Err(Error::FitFailure(_)) => {
            return Err(Error::UnstableEstimate(format!(
                "all {resamples} resamples failed: zero-variance samples"
            )))
        }
        Err(e) => return Err(e),
    };
    let full = table.fit(&table.default_starts(), &NelderMead::default())?;
    bootstrap_fit(&table, &full.y, resamples, seed)
}

/// Resamples the rows of an already-fitted table, warm-starting every fit
/// from the full-data optimum `y`.
pub fn bootstrap_fit<T: Real>(
    table: &LikelihoodTable<T>,
    y: &[T],
    resamples: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    if resamples < MIN_RESAMPLES {
        return Err(invalid(format!(
            "bootstrap needs at least {MIN_RESAMPLES} resamples, got {resamples}"
        )));
    }
    let warm = NelderMead {
        step: 0.25,
        ..Default::default()
    };
    let m = table.len();
    let start = vec![y.to_vec()];
    let outcomes: Vec<Result<f64>> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = frame_rng(seed, b as u64);
            let rows: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
            let t = table.gather(&rows)?;
            Ok(t.fit(&start, &warm)?.state.prob(1).as_f64())
        })
        .collect();
    let values: Vec<f64> = outcomes
        .iter()
        .filter_map(|r| r.as_ref().ok().copied())
        .collect();
    let failures = resamples - values.len();
    if failures as f64 > MAX_FAILURE_RATE * resamples as f64 || values.len() < 2 {
        return Err(Error::UnstableEstimate(format!(
            "{failures} of {resamples} bootstrap fits failed"
        )));
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(BootstrapSummary {
        std: var.sqrt(),
        mean,
        resamples,
        failures,
        values,
    })
}
