//! Photon-counting view of the same states: click densities, timing-jitter
//! mixtures and intensity correlations.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::homodyne::frame_rng;
use crate::modes::{overlap_sq, time_shift, ModeFunction};
use crate::scalar::Real;

/// Probability density over grid-aligned detection delays.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JitterKernel {
    delays_ns: Vec<f64>,
    weights: Vec<f64>,
    dt: f64,
}

impl JitterKernel {
    /// `delays_ns` must be multiples of `dt`; `Σ wᵢ·dt = 1`.
    pub fn new(delays_ns: Vec<f64>, weights: Vec<f64>, dt: f64) -> Result<Self> {
        if delays_ns.is_empty() || delays_ns.len() != weights.len() {
            return Err(invalid(
                "kernel needs matching, non-empty delays and weights",
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("kernel weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum::<f64>() * dt;
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("kernel integrates to {total}, not 1")));
        }
        for &d in &delays_ns {
            if ((d / dt) - (d / dt).round()).abs() > 1e-6 {
                return Err(invalid(format!("delay {d} ns is off the {dt} ns grid")));
            }
        }
        Ok(Self {
            delays_ns,
            weights,
            dt,
        })
    }

    pub fn delta(dt: f64) -> Self {
        Self {
            delays_ns: vec![0.0],
            weights: vec![1.0 / dt],
            dt,
        }
    }

    /// Gaussian truncated at ±5σ and renormalized on the grid; `σ = 0` gives
    /// the delta kernel.
    pub fn gaussian(sigma_ns: f64, dt: f64) -> Result<Self> {
        if !(sigma_ns >= 0.0) {
            return Err(invalid("jitter width must be non-negative"));
        }
        let half = (5.0 * sigma_ns / dt).ceil() as i64;
        if half == 0 {
            return Ok(Self::delta(dt));
        }
        let delays: Vec<f64> = (-half..=half).map(|k| k as f64 * dt).collect();
        let raw: Vec<f64> = delays
            .iter()
            .map(|d| (-0.5 * (d / sigma_ns).powi(2)).exp())
            .collect();
        let s: f64 = raw.iter().sum::<f64>() * dt;
        Self::new(delays, raw.into_iter().map(|w| w / s).collect(), dt)
    }

    pub fn delays_ns(&self) -> &[f64] {
        &self.delays_ns
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Probability mass `p(τ)·dτ` of each delay.
    fn masses(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.delays_ns
            .iter()
            .zip(&self.weights)
            .map(|(&d, &w)| (d, w * self.dt))
    }
}

/// Density per ns on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeDensity {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl TimeDensity {
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dt
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_ns,density")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{v}", self.t0 + i as f64 * self.dt)?;
        }
        Ok(())
    }
}

/// `p·η·|ψ(t)|²`.
pub fn detection_density<T: Real>(p: f64, eta: f64, psi: &ModeFunction<T>) -> Result<TimeDensity> {
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&eta) {
        return Err(invalid("probability and efficiency must lie in [0, 1]"));
    }
    let s = p * eta / psi.dt();
    Ok(TimeDensity {
        t0: psi.t0(),
        dt: psi.dt(),
        values: psi
            .samples()
            .iter()
            .map(|x| s * x.as_f64().powi(2))
            .collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct JitterOutcome {
    pub density: TimeDensity,
    /// `∫p(τ)|(φ_τ, ψ_ref)|² dτ`.
    pub purity: f64,
}

fn shifted_copies<T: Real>(
    phi: &ModeFunction<T>,
    kernel: &JitterKernel,
) -> Result<Vec<(f64, ModeFunction<T>)>> {
    if (kernel.dt - phi.dt()).abs() > 1e-9 * phi.dt() {
        return Err(invalid("kernel and mode use different dt"));
    }
    kernel
        .masses()
        .map(|(d, m)| Ok((m, time_shift(phi, d)?.embed(phi.t0(), phi.len())?)))
        .collect()
}

/// Fails if a delayed copy of `φ` leaves its own window.
pub fn jitter_decohered<T: Real>(
    phi: &ModeFunction<T>,
    kernel: &JitterKernel,
    psi_ref: &ModeFunction<T>,
) -> Result<JitterOutcome> {
    let copies = shifted_copies(phi, kernel)?;
    let mut values = vec![0.0; phi.len()];
    let mut purity = 0.0;
    for (m, c) in &copies {
        for (v, x) in values.iter_mut().zip(c.samples()) {
            *v += m * x.as_f64().powi(2) / phi.dt();
        }
        purity += m * overlap_sq(c, psi_ref)?.as_f64();
    }
    Ok(JitterOutcome {
        density: TimeDensity {
            t0: phi.t0(),
            dt: phi.dt(),
            values,
        },
        purity: purity.clamp(0.0, 1.0),
    })
}

/// Leading eigenvector of the jittered ensemble `Σ p(τ)dτ φ_τ φ_τᵀ` and its
/// eigenvalue (the best purity any single reference mode can reach).
pub fn ensemble_mode<T: Real>(
    phi: &ModeFunction<T>,
    kernel: &JitterKernel,
) -> Result<(ModeFunction<T>, f64)> {
    let copies = shifted_copies(phi, kernel)?;
    let n = phi.len();
    let mut rho = DMatrix::<f64>::zeros(n, n);
    for (m, c) in &copies {
        let v = nalgebra::DVector::from_iterator(n, c.samples().iter().map(|x| x.as_f64()));
        rho.ger(*m, &v, &v, 1.0);
    }
    let eig = SymmetricEigen::new(rho);
    let lead = eig.eigenvalues.imax();
    let mut v: Vec<f64> = eig.eigenvectors.column(lead).iter().copied().collect();
    if v.iter().sum::<f64>() < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let mode =
        ModeFunction::from_unnormalized(v.into_iter().map(T::lit).collect(), phi.t0(), phi.dt())?;
    Ok((mode, eig.eigenvalues[lead]))
}

/// A pure photon and a jitter mixture with the same click density.
#[derive(Debug, Clone, Serialize)]
pub struct DetectionContrast {
    pub pure_density: TimeDensity,
    pub mixed_density: TimeDensity,
    pub max_density_difference: f64,
    /// Homodyne purity of the pure photon in its own mode.
    pub pure_purity: f64,
    /// Mixture purity in the pure photon's mode.
    pub mixed_purity: f64,
    /// Mixture purity in its best single mode.
    pub mixed_best_purity: f64,
}

pub fn detection_vs_homodyne<T: Real>(
    phi: &ModeFunction<T>,
    kernel: &JitterKernel,
) -> Result<DetectionContrast> {
    let mixed = jitter_decohered(phi, kernel, phi)?;
    let amp: Vec<T> = mixed
        .density
        .values
        .iter()
        .map(|v| T::lit((v * phi.dt()).sqrt()))
        .collect();
    let pure = ModeFunction::from_unnormalized(amp, phi.t0(), phi.dt())?;
    let pure_density = detection_density(1.0, 1.0, &pure)?;
    let mixed_in_pure = jitter_decohered(phi, kernel, &pure)?;
    let (_, best) = ensemble_mode(phi, kernel)?;
    let max_density_difference = pure_density
        .values
        .iter()
        .zip(&mixed.density.values)
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    Ok(DetectionContrast {
        pure_purity: overlap_sq(&pure, &pure)?.as_f64(),
        pure_density,
        mixed_density: mixed.density,
        max_density_difference,
        mixed_purity: mixed_in_pure.purity,
        mixed_best_purity: best,
    })
}

/// Click times from two detectors over a record of length `duration_ns`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickRecord {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub duration_ns: f64,
}

/// Delay bins centred on `k·width` for `|k·width| ≤ max_ns`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TauBins {
    pub width_ns: f64,
    pub max_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct G2Curve {
    pub tau_ns: Vec<f64>,
    pub g2: Vec<f64>,
    pub err: Vec<f64>,
}

impl G2Curve {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "tau_ns,g2,err")?;
        for i in 0..self.tau_ns.len() {
            writeln!(w, "{},{},{}", self.tau_ns[i], self.g2[i], self.err[i])?;
        }
        Ok(())
    }

    pub fn at(&self, tau_ns: f64) -> (f64, f64) {
        let i = self
            .tau_ns
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - tau_ns)
                    .abs()
                    .partial_cmp(&(b.1 - tau_ns).abs())
                    .unwrap()
            })
            .map(|(i, _)| i)
            .unwrap_or(0);
        (self.g2[i], self.err[i])
    }
}

pub const MIN_EVENTS: usize = 100;

/// Coincidences at delay `t_b - t_a`, normalized by the accidental rate
/// `N_a·N_b·width / T`. Errors are Poisson.
pub fn g2_from_counts(clicks: &ClickRecord, bins: &TauBins) -> Result<G2Curve> {
    let (na, nb) = (clicks.a.len(), clicks.b.len());
    if na == 0 || nb == 0 {
        return Err(Error::InsufficientData("empty click stream".into()));
    }
    if na < MIN_EVENTS || nb < MIN_EVENTS {
        return Err(Error::InsufficientData(format!(
            "need {MIN_EVENTS} events per detector, got {na} and {nb}"
        )));
    }
    if !(bins.width_ns > 0.0 && bins.max_ns >= 0.0 && clicks.duration_ns > 0.0) {
        return Err(invalid("bin width and duration must be positive"));
    }
    let kmax = (bins.max_ns / bins.width_ns).floor() as i64;
    let nbins = (2 * kmax + 1) as usize;
    let reach = (kmax as f64 + 0.5) * bins.width_ns;
    let mut a = clicks.a.clone();
    let mut b = clicks.b.clone();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut counts = vec![0u64; nbins];
    let mut lo = 0;
    for &ta in &a {
        while lo < b.len() && b[lo] < ta - reach {
            lo += 1;
        }
        for &tb in b[lo..].iter().take_while(|&&tb| tb < ta + reach) {
            let k = ((tb - ta) / bins.width_ns).round() as i64 + kmax;
            if (0..nbins as i64).contains(&k) {
                counts[k as usize] += 1;
            }
        }
    }
    let norm = na as f64 * nb as f64 * bins.width_ns / clicks.duration_ns;
    Ok(G2Curve {
        tau_ns: (-kmax..=kmax).map(|k| k as f64 * bins.width_ns).collect(),
        g2: counts.iter().map(|&c| c as f64 / norm).collect(),
        err: counts
            .iter()
            .map(|&c| (c.max(1) as f64).sqrt() / norm)
            .collect(),
    })
}

/// Homogeneous Poisson click times.
pub fn poisson_clicks<R: Rng + ?Sized>(
    rate_per_ns: f64,
    duration_ns: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let exp = Exp::new(rate_per_ns).map_err(|e| invalid(e.to_string()))?;
    let mut t = 0.0;
    let mut out = Vec::new();
    loop {
        t += exp.sample(rng);
        if t >= duration_ns {
            return Ok(out);
        }
        out.push(t);
    }
}

/// Keeps each click independently with probability `eta`.
pub fn thin<R: Rng + ?Sized>(clicks: &[f64], eta: f64, rng: &mut R) -> Vec<f64> {
    clicks
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < eta)
        .collect()
}

/// Heralded trials at Poisson times, each carrying at most one photon in
/// `mode` that is split 50/50 onto two detectors.
#[derive(Debug, Clone)]
pub struct HeraldedSource<'a, T> {
    pub trial_rate_per_ns: f64,
    pub purity: f64,
    pub efficiency: f64,
    pub mode: &'a ModeFunction<T>,
}

const TRIALS_PER_STREAM: usize = 4096;

impl<T: Real> HeraldedSource<'_, T> {
    pub fn simulate(&self, duration_ns: f64, seed: u64) -> Result<ClickRecord> {
        let density = detection_density(self.purity, self.efficiency, self.mode)?;
        let click_prob = density.integral();
        let mut cdf: Vec<f64> = density
            .values
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v * density.dt;
                Some(*acc)
            })
            .collect();
        let last = *cdf.last().unwrap_or(&1.0);
        cdf.iter_mut()
            .for_each(|c| *c /= last.max(f64::MIN_POSITIVE));

        let mut master = frame_rng(seed, u64::MAX);
        let trials = poisson_clicks(self.trial_rate_per_ns, duration_ns, &mut master)?;
        let parts: Vec<(Vec<f64>, Vec<f64>)> = trials
            .par_chunks(TRIALS_PER_STREAM)
            .enumerate()
            .map(|(s, chunk)| {
                let mut rng = frame_rng(seed, s as u64);
                let (mut a, mut b) = (Vec::new(), Vec::new());
                for &t in chunk {
                    if rng.random::<f64>() >= click_prob {
                        continue;
                    }
                    let u: f64 = rng.random();
                    let i = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
                    let t_click = t + density.t0 + (i as f64 + rng.random::<f64>()) * density.dt;
                    if rng.random::<bool>() {
                        a.push(t_click);
                    } else {
                        b.push(t_click);
                    }
                }
                (a, b)
            })
            .collect();
        let (a, b) = parts
            .into_iter()
            .fold((Vec::new(), Vec::new()), |(mut a, mut b), (x, y)| {
                a.extend(x);
                b.extend(y);
                (a, b)
            });
        Ok(ClickRecord { a, b, duration_ns })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn phi() -> ModeFunction<f64> {
        ModeFunction::gaussian(0.0, 1.0, 600, 300.0, 50.0).unwrap()
    }

    #[test]
    fn density_integrals() {
        assert_abs_diff_eq!(
            detection_density(1.0, 1.0, &phi()).unwrap().integral(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            detection_density(0.582, 0.5, &phi()).unwrap().integral(),
            0.291,
            epsilon = 1e-12
        );
        assert!(detection_density(1.2, 1.0, &phi()).is_err());
    }

    #[test]
    fn delta_kernel_is_identity() {
        let out = jitter_decohered(&phi(), &JitterKernel::delta(1.0), &phi()).unwrap();
        assert_abs_diff_eq!(out.purity, 1.0, epsilon = 1e-12);
        let pure = detection_density(1.0, 1.0, &phi()).unwrap();
        assert_eq!(out.density, pure);
    }

    #[test]
    fn kernel_off_grid_rejected() {
        let narrow = ModeFunction::<f64>::gaussian(0.0, 1.0, 120, 60.0, 20.0).unwrap();
        let k = JitterKernel::gaussian(25.0, 1.0).unwrap();
        assert!(matches!(
            jitter_decohered(&narrow, &k, &narrow),
            Err(Error::InvalidArgument(_))
        ));
        assert!(JitterKernel::new(vec![0.0, 1.0], vec![0.5, 0.4], 1.0).is_err());
        assert!(JitterKernel::new(vec![0.0, 1.5], vec![0.5, 0.5], 1.0).is_err());
    }

    #[test]
    fn g2_needs_events() {
        let empty = ClickRecord {
            a: vec![],
            b: vec![1.0; 200],
            duration_ns: 1e6,
        };
        let bins = TauBins {
            width_ns: 10.0,
            max_ns: 100.0,
        };
        assert!(matches!(
            g2_from_counts(&empty, &bins),
            Err(Error::InsufficientData(_))
        ));
        let few = ClickRecord {
            a: vec![1.0; 99],
            b: vec![1.0; 200],
            duration_ns: 1e6,
        };
        assert!(matches!(
            g2_from_counts(&few, &bins),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn g2_csv() {
        let mut rng = frame_rng(1, 0);
        let rec = ClickRecord {
            a: poisson_clicks(1e-3, 1e6, &mut rng).unwrap(),
            b: poisson_clicks(1e-3, 1e6, &mut rng).unwrap(),
            duration_ns: 1e6,
        };
        let g = g2_from_counts(
            &rec,
            &TauBins {
                width_ns: 50.0,
                max_ns: 200.0,
            },
        )
        .unwrap();
        assert_eq!(g.tau_ns.len(), 9);
        let mut out = Vec::new();
        g.write_csv(&mut out).unwrap();
        assert!(String::from_utf8(out)
            .unwrap()
            .starts_with("tau_ns,g2,err\n"));
    }
}
