use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::{quadrature_pdf, FockDiagonalState};
use crate::scalar::Real;

const MIN_BINS: usize = 10;
const SUBDIV: usize = 32;

/// Density-normalized histogram on a symmetric range with the model
/// averaged over each bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub model: Vec<f64>,
    pub width: f64,
}

impl Histogram {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,density,model")?;
        for i in 0..self.x.len() {
            writeln!(w, "{},{},{}", self.x[i], self.density[i], self.model[i])?;
        }
        Ok(())
    }

    pub fn density_at(&self, x: f64) -> f64 {
        let lo = self.x[0] - self.width / 2.0;
        let i = ((x - lo) / self.width)
            .floor()
            .clamp(0.0, (self.x.len() - 1) as f64) as usize;
        self.density[i]
    }
}

pub fn histogram_with_overlay<T: Real>(
    samples: &[T],
    bins: usize,
    state: &FockDiagonalState<T>,
) -> Result<Histogram> {
    if bins < MIN_BINS {
        return Err(invalid(format!(
            "need at least {MIN_BINS} bins, got {bins}"
        )));
    }
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples to histogram".into()));
    }
    let range = samples.iter().fold(6.0f64, |r, x| r.max(x.as_f64().abs()));
    if !range.is_finite() {
        return Err(invalid("samples contain non-finite values"));
    }
    let width = 2.0 * range / bins as f64;
    let mut counts = vec![0usize; bins];
    for x in samples {
        let i = ((x.as_f64() + range) / width).floor() as usize;
        counts[i.min(bins - 1)] += 1;
    }
    let norm = 1.0 / (samples.len() as f64 * width);
    let pdf = |x: f64| quadrature_pdf(state, T::lit(x)).as_f64();
    let h = width / SUBDIV as f64;
    let x: Vec<f64> = (0..bins)
        .map(|i| -range + (i as f64 + 0.5) * width)
        .collect();
    let model = x
        .iter()
        .map(|&c| {
            // composite Simpson over the bin
            let a = c - width / 2.0;
            let mut s = pdf(a) + pdf(a + width);
            for k in 1..SUBDIV {
                s += pdf(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0 / width
        })
        .collect();
    Ok(Histogram {
        x,
        density: counts.iter().map(|&c| c as f64 * norm).collect(),
        model,
        width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_normalized() {
        for state in [
            FockDiagonalState::<f64>::vacuum(),
            FockDiagonalState::single_photon_mixture(0.582).unwrap(),
            FockDiagonalState::fock(5),
        ] {
            let h = histogram_with_overlay(&[0.0, 1.0, -2.0], 60, &state).unwrap();
            let total: f64 = h.model.iter().sum::<f64>() * h.width;
            assert!((total - 1.0).abs() < 1e-6, "{total}");
            let area: f64 = h.density.iter().sum::<f64>() * h.width;
            assert!((area - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn range_covers_outliers() {
        let h =
            histogram_with_overlay(&[9.5, -1.0], 19, &FockDiagonalState::<f64>::vacuum()).unwrap();
        assert!((h.x[0] + 9.5 - h.width / 2.0).abs() < 1e-12);
        assert!(h.density[18] > 0.0);
        assert!(histogram_with_overlay(&[0.0f64], 9, &FockDiagonalState::vacuum()).is_err());
    }

    #[test]
    fn csv_header() {
        let h = histogram_with_overlay(&[0.0f64], 10, &FockDiagonalState::vacuum()).unwrap();
        let mut out = Vec::new();
        h.write_csv(&mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert!(s.starts_with("x,density,model\n"));
        assert_eq!(s.lines().count(), 11);
    }
}
