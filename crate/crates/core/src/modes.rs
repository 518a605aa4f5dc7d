//! Discretized temporal mode functions.
//!
//! A mode is stored as `ψᵢ = ψ(tᵢ)·√dt` on a uniform grid `tᵢ = t0 + i·dt`,
//! so normalization and inner products reduce to plain dot products. Times
//! are in nanoseconds; values outside the stored window are exactly zero.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Normalization tolerance for stored modes.
pub const NORM_TOL: f64 = 1e-9;

/// Grid offsets must be integral to within this fraction of a sample.
const GRID_TOL: f64 = 1e-6;

/// Default sample interval, matching a 1 GS/s digitizer.
pub const DEFAULT_DT_NS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct ModeFunction<T> {
    samples: Vec<T>,
    t0: f64,
    dt: f64,
}

/// Integer number of samples between two grid origins sharing `dt`.
pub(crate) fn grid_offset(from_t0: f64, to_t0: f64, dt: f64) -> Result<i64> {
    let steps = (to_t0 - from_t0) / dt;
    let k = steps.round();
    if (steps - k).abs() > GRID_TOL {
        return Err(invalid(format!(
            "grids are not aligned: origins {from_t0} and {to_t0} differ by {steps} samples"
        )));
    }
    Ok(k as i64)
}

fn check_grid(t0: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid(format!(
            "sample interval must be positive, got {dt}"
        )));
    }
    if !t0.is_finite() {
        return Err(invalid("start time must be finite"));
    }
    Ok(())
}

fn norm_sq<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x)
}

impl<T: Real> ModeFunction<T> {
    /// Wraps samples that are already normalized.
    pub fn new(samples: Vec<T>, t0: f64, dt: f64) -> Result<Self> {
        check_grid(t0, dt)?;
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(invalid("mode samples must be finite"));
        }
        let n2 = norm_sq(&samples).as_f64();
        if (n2 - 1.0).abs() > NORM_TOL {
            return Err(invalid(format!(
                "mode is not normalized: sum of squares = {n2}"
            )));
        }
        Ok(Self { samples, t0, dt })
    }

    /// Normalizes arbitrary samples.
    pub fn from_unnormalized(mut samples: Vec<T>, t0: f64, dt: f64) -> Result<Self> {
        check_grid(t0, dt)?;
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(invalid("mode samples must be finite"));
        }
        let n2 = norm_sq(&samples);
        if !(n2.as_f64() > 1e-300) {
            return Err(Error::DegenerateInput("mode has zero norm".into()));
        }
        let inv = T::one() / n2.sqrt();
        samples.iter_mut().for_each(|x| *x *= inv);
        Ok(Self { samples, t0, dt })
    }

    /// Samples a continuous envelope `f(t)` on `n` grid points and normalizes.
    pub fn from_fn(t0: f64, dt: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let scale = dt.sqrt();
        let samples = (0..n)
            .map(|i| T::lit(f(t0 + i as f64 * dt) * scale))
            .collect();
        Self::from_unnormalized(samples, t0, dt)
    }

    /// Unit-height boxcar over `[start, start + width)` on the given grid.
    pub fn boxcar(t0: f64, dt: f64, n: usize, start: f64, width: f64) -> Result<Self> {
        Self::from_fn(t0, dt, n, |t| {
            if t >= start - 1e-9 && t < start + width - 1e-9 {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Gaussian amplitude envelope whose intensity has the given FWHM.
    pub fn gaussian(t0: f64, dt: f64, n: usize, center: f64, intensity_fwhm: f64) -> Result<Self> {
        // |ψ|² ∝ exp(-(t-c)²/σ²) has FWHM 2σ√ln2.
        let sigma = intensity_fwhm / (2.0 * std::f64::consts::LN_2.sqrt());
        Self::from_fn(t0, dt, n, |t| {
            (-(t - center).powi(2) / (2.0 * sigma * sigma)).exp()
        })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Exclusive end of the stored window.
    pub fn t_end(&self) -> f64 {
        self.t0 + self.samples.len() as f64 * self.dt
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |i| self.time(i))
    }

    pub fn norm_sq(&self) -> T {
        norm_sq(&self.samples)
    }

    /// Continuous-time value `ψ(tᵢ)` (undoes the `√dt` scaling).
    pub fn amplitude(&self, i: usize) -> T {
        self.samples[i] / T::lit(self.dt.sqrt())
    }

    /// Re-grids onto `[t0, t0 + n·dt)`, zero-padding or cropping.
    ///
    /// Fails if the new window drops more than `NORM_TOL` of the energy.
    pub fn embed(&self, t0: f64, n: usize) -> Result<Self> {
        let k = grid_offset(self.t0, t0, self.dt)?;
        let mut out = vec![T::zero(); n];
        for (j, slot) in out.iter_mut().enumerate() {
            let i = j as i64 + k;
            if i >= 0 && (i as usize) < self.samples.len() {
                *slot = self.samples[i as usize];
            }
        }
        let lost = (T::one() - norm_sq(&out)).as_f64();
        if lost > NORM_TOL {
            return Err(invalid(format!(
                "mode does not fit in window [{t0}, {}): {lost:.3e} of the energy falls outside",
                t0 + n as f64 * self.dt
            )));
        }
        Ok(Self {
            samples: out,
            t0,
            dt: self.dt,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_ns,psi")?;
        for (t, x) in self.times().zip(&self.samples) {
            writeln!(w, "{t},{x}")?;
        }
        Ok(())
    }

    /// Reads a `t_ns,psi` table. Rows must sit on a uniform grid; samples
    /// are renormalized only if they miss unit norm by more than `NORM_TOL`.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty mode file".into()))??;
        if header.trim() != "t_ns,psi" {
            return Err(Error::Format(format!("unexpected mode header '{header}'")));
        }
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (t, x) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("malformed mode row '{line}'")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad number '{s}': {e}")))
            };
            times.push(parse(t)?);
            samples.push(T::lit(parse(x)?));
        }
        if times.len() < 2 {
            return Err(Error::Format("mode file needs at least two rows".into()));
        }
        let dt = times[1] - times[0];
        for (i, &t) in times.iter().enumerate() {
            if (t - (times[0] + i as f64 * dt)).abs() > GRID_TOL * dt.abs().max(1.0) {
                return Err(Error::Format(format!("row {i} is off the uniform grid")));
            }
        }
        let n2 = norm_sq(&samples).as_f64();
        if (n2 - 1.0).abs() <= NORM_TOL {
            Self::new(samples, times[0], dt)
        } else {
            Self::from_unnormalized(samples, times[0], dt)
        }
    }
}

/// `(a, b) = Σᵢ aᵢbᵢ` over the common support of two aligned modes.
pub fn inner_product<T: Real>(a: &ModeFunction<T>, b: &ModeFunction<T>) -> Result<T> {
    if (a.dt - b.dt).abs() > GRID_TOL * a.dt {
        return Err(invalid(format!(
            "sample intervals differ: {} vs {}",
            a.dt, b.dt
        )));
    }
    // b index = a index - k
    let k = grid_offset(a.t0, b.t0, a.dt)?;
    let lo = k.max(0);
    let hi = (a.len() as i64).min(b.len() as i64 + k);
    let mut acc = T::zero();
    for i in lo..hi {
        acc += a.samples[i as usize] * b.samples[(i - k) as usize];
    }
    Ok(acc)
}

pub fn overlap_sq<T: Real>(a: &ModeFunction<T>, b: &ModeFunction<T>) -> Result<T> {
    let ip = inner_product(a, b)?;
    Ok(ip * ip)
}

/// Delays a mode by `delta_ns`, which must be a whole number of samples.
pub fn time_shift<T: Real>(m: &ModeFunction<T>, delta_ns: f64) -> Result<ModeFunction<T>> {
    let steps = delta_ns / m.dt;
    if (steps - steps.round()).abs() > GRID_TOL {
        return Err(invalid(format!(
            "shift {delta_ns} ns is not a multiple of dt = {} ns",
            m.dt
        )));
    }
    Ok(ModeFunction {
        samples: m.samples.clone(),
        t0: m.t0 + steps.round() * m.dt,
        dt: m.dt,
    })
}

/// Zeroes samples outside `[t_lo, t_hi]` and renormalizes.
pub fn clip_and_renormalize<T: Real>(
    m: &ModeFunction<T>,
    t_lo: f64,
    t_hi: f64,
) -> Result<ModeFunction<T>> {
    if !(t_lo < t_hi) {
        return Err(invalid(format!("empty clip window [{t_lo}, {t_hi}]")));
    }
    let eps = GRID_TOL * m.dt;
    let clipped: Vec<T> = m
        .samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let t = m.time(i);
            if t >= t_lo - eps && t <= t_hi + eps {
                x
            } else {
                T::zero()
            }
        })
        .collect();
    if norm_sq(&clipped).as_f64() <= 1e-12 {
        return Err(Error::DegenerateInput(format!(
            "clip window [{t_lo}, {t_hi}] leaves no energy"
        )));
    }
    ModeFunction::from_unnormalized(clipped, m.t0, m.dt)
}

/// The real mode a fixed local-oscillator frame sees when the signal is
/// detuned by `delta` (rad/s) with phase `phi`: `normalize(ψ(t)·cos(δt + φ))`.
pub fn detuned_mode<T: Real>(m: &ModeFunction<T>, delta: f64, phi: f64) -> Result<ModeFunction<T>> {
    let rotated: Vec<T> = m
        .samples
        .iter()
        .enumerate()
        .map(|(i, &x)| x * T::lit((delta * m.time(i) * 1e-9 + phi).cos()))
        .collect();
    if norm_sq(&rotated).as_f64() <= 1e-24 {
        return Err(Error::DegenerateInput(
            "detuned projection has zero norm".into(),
        ));
    }
    ModeFunction::from_unnormalized(rotated, m.t0, m.dt)
}

/// Effective purity factor `|(ψ, ψ_detuned)|²` from measuring a detuned mode.
///
/// A projection that leaves nothing in the measured quadrature contributes
/// no signal, so it scores 0 rather than failing.
pub fn detuning_overlap_penalty<T: Real>(m: &ModeFunction<T>, delta: f64, phi: f64) -> Result<T> {
    match detuned_mode(m, delta, phi) {
        Ok(d) => overlap_sq(m, &d),
        Err(Error::DegenerateInput(_)) => Ok(T::zero()),
        Err(e) => Err(e),
    }
}

/// Modified Gram-Schmidt over modes sharing one grid.
pub fn orthonormalize<T: Real>(modes: &[ModeFunction<T>]) -> Result<Vec<ModeFunction<T>>> {
    let mut out: Vec<ModeFunction<T>> = Vec::with_capacity(modes.len());
    for m in modes {
        if let Some(first) = out.first() {
            if first.t0 != m.t0 || first.dt != m.dt || first.len() != m.len() {
                return Err(invalid("orthonormalize needs modes on a common grid"));
            }
        }
        let mut v = m.samples.clone();
        for q in &out {
            let c = v
                .iter()
                .zip(&q.samples)
                .fold(T::zero(), |a, (&x, &y)| a + x * y);
            v.iter_mut().zip(&q.samples).for_each(|(x, &y)| *x -= c * y);
        }
        out.push(ModeFunction::from_unnormalized(v, m.t0, m.dt)?);
    }
    Ok(out)
}

/// Matrix of pairwise inner products.
pub fn gram_matrix<T: Real>(modes: &[ModeFunction<T>]) -> Result<Vec<Vec<T>>> {
    modes
        .iter()
        .map(|a| modes.iter().map(|b| inner_product(a, b)).collect())
        .collect()
}

/// Complex envelope prior to projection onto the local-oscillator frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexEnvelope<T> {
    re: Vec<T>,
    im: Vec<T>,
    t0: f64,
    dt: f64,
}

impl<T: Real> ComplexEnvelope<T> {
    pub fn from_unnormalized(mut re: Vec<T>, mut im: Vec<T>, t0: f64, dt: f64) -> Result<Self> {
        check_grid(t0, dt)?;
        if re.len() != im.len() {
            return Err(invalid("real and imaginary parts differ in length"));
        }
        if re.iter().chain(&im).any(|x| !x.is_finite()) {
            return Err(invalid("envelope samples must be finite"));
        }
        let n2 = norm_sq(&re) + norm_sq(&im);
        if !(n2.as_f64() > 1e-300) {
            return Err(Error::DegenerateInput("envelope has zero norm".into()));
        }
        let inv = T::one() / n2.sqrt();
        re.iter_mut().chain(im.iter_mut()).for_each(|x| *x *= inv);
        Ok(Self { re, im, t0, dt })
    }

    pub fn re(&self) -> &[T] {
        &self.re
    }

    pub fn im(&self) -> &[T] {
        &self.im
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// Global phase θ maximizing `Σ Re(e^{-iθ} zᵢ)²`, i.e. `½·arg Σ zᵢ²`.
    pub fn real_frame_phase(&self) -> T {
        let (mut sr, mut si) = (T::zero(), T::zero());
        for (&a, &b) in self.re.iter().zip(&self.im) {
            sr += a * a - b * b;
            si += T::lit(2.0) * a * b;
        }
        si.atan2(sr) * T::lit(0.5)
    }

    /// Rotates into the real frame and keeps the real part, renormalized.
    pub fn to_real_mode(&self) -> Result<ModeFunction<T>> {
        let theta = self.real_frame_phase();
        let (c, s) = (theta.cos(), theta.sin());
        let samples = self
            .re
            .iter()
            .zip(&self.im)
            .map(|(&a, &b)| a * c + b * s)
            .collect();
        ModeFunction::from_unnormalized(samples, self.t0, self.dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn boxcar(start: f64, width: f64) -> ModeFunction<f64> {
        ModeFunction::boxcar(0.0, 1.0, 400, start, width).unwrap()
    }

    #[test]
    fn self_overlap_is_one() {
        let m = ModeFunction::<f64>::gaussian(0.0, 1.0, 300, 150.0, 50.0).unwrap();
        assert_abs_diff_eq!(inner_product(&m, &m).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(overlap_sq(&m, &m).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn disjoint_boxcars_are_orthogonal() {
        let a = boxcar(0.0, 100.0);
        let b = boxcar(200.0, 100.0);
        assert_eq!(inner_product(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn half_shifted_boxcar_overlaps_by_half() {
        // Riemann-sum oracle: 50 shared unit bins out of 100, each weighted 1/100.
        let oracle: f64 = (0..400)
            .map(|i| {
                let t = i as f64;
                let a = if (100.0..200.0).contains(&t) {
                    0.1
                } else {
                    0.0
                };
                let b = if (150.0..250.0).contains(&t) {
                    0.1
                } else {
                    0.0
                };
                a * b
            })
            .sum();
        assert_abs_diff_eq!(oracle, 0.5, epsilon = 1e-12);
        let a = boxcar(100.0, 100.0);
        let b = boxcar(150.0, 100.0);
        assert_abs_diff_eq!(inner_product(&a, &b).unwrap(), oracle, epsilon = 1e-12);
        // Same answer when the shift lives in t0 instead of the samples.
        let c = time_shift(&a, 50.0).unwrap();
        assert_abs_diff_eq!(inner_product(&a, &c).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn mismatched_dt_is_rejected() {
        let a = ModeFunction::<f64>::boxcar(0.0, 1.0, 10, 0.0, 10.0).unwrap();
        let b = ModeFunction::<f64>::boxcar(0.0, 2.0, 10, 0.0, 20.0).unwrap();
        assert!(matches!(
            inner_product(&a, &b),
            Err(Error::InvalidArgument(_))
        ));
        let c = ModeFunction::<f64>::boxcar(0.5, 1.0, 10, 0.0, 20.0).unwrap();
        assert!(matches!(
            inner_product(&a, &c),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn shift_round_trips_and_rejects_fractional_steps() {
        let m = ModeFunction::<f64>::gaussian(0.0, 1.0, 300, 150.0, 50.0).unwrap();
        assert_eq!(time_shift(&m, 0.0).unwrap(), m);
        let back = time_shift(&time_shift(&m, 100.0).unwrap(), -100.0).unwrap();
        assert_eq!(back, m);
        assert!(matches!(
            time_shift(&m, 0.5),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn clip_covering_support_is_identity() {
        let m = boxcar(100.0, 100.0);
        let c = clip_and_renormalize(&m, -1000.0, 1000.0).unwrap();
        for (a, b) in c.samples().iter().zip(m.samples()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn clip_half_boxcar_scales_by_sqrt_two() {
        let m = boxcar(100.0, 100.0);
        let c = clip_and_renormalize(&m, 100.0, 149.0).unwrap();
        for (i, (&x, &y)) in c.samples().iter().zip(m.samples()).enumerate() {
            if (100..150).contains(&i) {
                assert_abs_diff_eq!(x, y * 2f64.sqrt(), epsilon = 1e-14);
            } else {
                assert_eq!(x, 0.0);
            }
        }
    }

    #[test]
    fn clip_with_no_energy_is_degenerate() {
        let m = boxcar(100.0, 100.0);
        assert!(matches!(
            clip_and_renormalize(&m, 300.0, 350.0),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn detuning_limits() {
        let m = ModeFunction::<f64>::gaussian(0.0, 1.0, 400, 200.0, 50.0).unwrap();
        assert_abs_diff_eq!(
            detuning_overlap_penalty(&m, 0.0, 0.0).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_eq!(
            detuning_overlap_penalty(&m, 0.0, std::f64::consts::FRAC_PI_2).unwrap(),
            0.0
        );
        assert!(matches!(
            detuned_mode(&m, 0.0, std::f64::consts::FRAC_PI_2),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn small_detuning_barely_matters() {
        // Oracle: direct numeric integral of ψ²cos / sqrt(∫ψ²cos²) on a 10x finer grid.
        let fwhm = 50.0;
        let sigma = fwhm / (2.0 * std::f64::consts::LN_2.sqrt());
        let delta = 2.0 * std::f64::consts::PI * 500e3;
        let h = 0.1;
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for i in 0..4000 {
            let t = i as f64 * h;
            let psi2 = (-(t - 200.0).powi(2) / (sigma * sigma)).exp();
            let co = (delta * t * 1e-9).cos();
            a += psi2 * co * h;
            b += psi2 * h;
            c += psi2 * co * co * h;
        }
        let oracle = a * a / (b * c);
        let m = ModeFunction::<f64>::gaussian(0.0, 1.0, 400, 200.0, fwhm).unwrap();
        let got = detuning_overlap_penalty(&m, delta, 0.0).unwrap();
        assert!(got >= 0.99);
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-6);
    }

    #[test]
    fn embed_pads_and_refuses_to_drop_energy() {
        let m = boxcar(100.0, 100.0);
        let e = m.embed(-100.0, 600).unwrap();
        assert_abs_diff_eq!(inner_product(&m, &e).unwrap(), 1.0, epsilon = 1e-12);
        assert!(m.embed(150.0, 100).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = ModeFunction::<f64>::gaussian(-50.0, 1.0, 200, 20.0, 30.0).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = ModeFunction::<f64>::read_csv(&buf[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn complex_envelope_projects_global_phase_away() {
        let m = ModeFunction::<f64>::gaussian(0.0, 1.0, 200, 100.0, 30.0).unwrap();
        let theta: f64 = 1.1;
        let re = m.samples().iter().map(|x| x * theta.cos()).collect();
        let im = m.samples().iter().map(|x| x * theta.sin()).collect();
        let env = ComplexEnvelope::from_unnormalized(re, im, 0.0, 1.0).unwrap();
        let real = env.to_real_mode().unwrap();
        assert_abs_diff_eq!(overlap_sq(&real, &m).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn f32_modes_work() {
        let m = ModeFunction::<f32>::gaussian(0.0, 1.0, 200, 100.0, 30.0).unwrap();
        assert!((inner_product(&m, &m).unwrap() - 1.0).abs() < 1e-5);
    }

    fn random_mode(v: Vec<f64>) -> Option<ModeFunction<f64>> {
        ModeFunction::from_unnormalized(v, 0.0, 1.0).ok()
    }

    proptest! {
        #[test]
        fn cauchy_schwarz(a in prop::collection::vec(-1.0f64..1.0, 32), b in prop::collection::vec(-1.0f64..1.0, 32)) {
            if let (Some(a), Some(b)) = (random_mode(a), random_mode(b)) {
                prop_assert!(inner_product(&a, &b).unwrap().abs() <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn shift_preserves_pairwise_products(
            a in prop::collection::vec(-1.0f64..1.0, 24),
            b in prop::collection::vec(-1.0f64..1.0, 24),
            k in -50i64..50,
        ) {
            if let (Some(a), Some(b)) = (random_mode(a), random_mode(b)) {
                let sa = time_shift(&a, k as f64).unwrap();
                let sb = time_shift(&b, k as f64).unwrap();
                prop_assert_eq!(sa.norm_sq(), a.norm_sq());
                prop_assert_eq!(inner_product(&sa, &sb).unwrap(), inner_product(&a, &b).unwrap());
            }
        }

        #[test]
        fn clip_is_idempotent(v in prop::collection::vec(0.01f64..1.0, 40), lo in 0.0f64..15.0, w in 5.0f64..20.0) {
            let m = random_mode(v).unwrap();
            let once = clip_and_renormalize(&m, lo, lo + w).unwrap();
            let twice = clip_and_renormalize(&once, lo, lo + w).unwrap();
            for (x, y) in once.samples().iter().zip(twice.samples()) {
                prop_assert!((x - y).abs() < 1e-14);
            }
        }

        #[test]
        fn orthonormalized_gram_is_identity(vs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 16), 1..5)) {
            let modes: Vec<_> = vs.into_iter().filter_map(random_mode).collect();
            if let Ok(q) = orthonormalize(&modes) {
                let g = gram_matrix(&q).unwrap();
                for (i, row) in g.iter().enumerate() {
                    for (j, &x) in row.iter().enumerate() {
                        let want = if i == j { 1.0 } else { 0.0 };
                        prop_assert!((x - want).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
