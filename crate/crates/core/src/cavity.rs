//! Linear two-mode model of the memory cavity (MC) coupled to the shutter
//! cavity (SC), and the released-photon envelope it emits.
//!
//! Amplitude equations, with Δ(t) the SC detuning (Δ_closed before release,
//! zero after):
//!
//! ```text
//! da_M/dt = -(γ_M/2) a_M - i g a_S
//! da_S/dt = -i g a_M - (κ_out/2 + γ_S/2 + iΔ(t)) a_S
//! ```
//!
//! The output field is `√κ_out · a_S`. Internally all rates are in 1/ns.

use std::io::Write;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::modes::{clip_and_renormalize, overlap_sq, time_shift, ComplexEnvelope, ModeFunction};
use crate::scalar::Real;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Closed-shutter SC detuning (rad/s) that leaks 1% of the stored photon
/// before a release at 150 ns, for [`CavityParams::published`] and
/// [`ShutterSchedule::published`]. Reproduced by [`calibrate_closed_detuning`].
pub const DEFAULT_CLOSED_DETUNING: f64 = 1.999_571_2e9;

/// Pre-leak fraction the default detuning is calibrated to.
pub const DEFAULT_PRELEAK_TARGET: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CavityParams {
    /// Memory cavity round-trip length (m).
    pub mc_round_trip_m: f64,
    /// Memory cavity fractional round-trip loss.
    pub mc_loss: f64,
    /// Shutter cavity round-trip length (m).
    pub sc_round_trip_m: f64,
    /// Shutter cavity fractional round-trip loss.
    pub sc_loss: f64,
    /// Power transmission of the MC-SC coupler.
    pub t_mc_sc: f64,
    /// Power transmission of the SC output coupler.
    pub t_sc_out: f64,
}

impl CavityParams {
    /// Published hardware: 1.4 m MC with 0.25% loss (midpoint of 0.2-0.3%),
    /// 0.7 m SC with 3% loss, 97% and 83% coupler reflectivities.
    pub fn published() -> Self {
        Self {
            mc_round_trip_m: 1.4,
            mc_loss: 0.0025,
            sc_round_trip_m: 0.7,
            sc_loss: 0.03,
            t_mc_sc: 0.03,
            t_sc_out: 0.17,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mc_round_trip_m", self.mc_round_trip_m),
            ("sc_round_trip_m", self.sc_round_trip_m),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("mc_loss", self.mc_loss),
            ("sc_loss", self.sc_loss),
            ("t_mc_sc", self.t_mc_sc),
            ("t_sc_out", self.t_sc_out),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(invalid(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }

    /// Free spectral range of the memory cavity (Hz).
    pub fn fsr_mc_hz(&self) -> f64 {
        SPEED_OF_LIGHT / self.mc_round_trip_m
    }
}

impl Default for CavityParams {
    fn default() -> Self {
        Self::published()
    }
}

/// Coupled-mode rates, all in 1/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub gamma_m: f64,
    pub gamma_s: f64,
    pub kappa_out: f64,
    pub g: f64,
}

impl Rates {
    fn per_ns(&self) -> Self {
        Self {
            gamma_m: self.gamma_m * 1e-9,
            gamma_s: self.gamma_s * 1e-9,
            kappa_out: self.kappa_out * 1e-9,
            g: self.g * 1e-9,
        }
    }
}

/// Maps cavity geometry to rates via the round-trip times `τ = L/c`.
pub fn derive_rates(p: &CavityParams) -> Rates {
    let tau_m = p.mc_round_trip_m / SPEED_OF_LIGHT;
    let tau_s = p.sc_round_trip_m / SPEED_OF_LIGHT;
    Rates {
        gamma_m: p.mc_loss / tau_m,
        gamma_s: p.sc_loss / tau_s,
        kappa_out: p.t_sc_out / tau_s,
        g: (p.t_mc_sc / (tau_m * tau_s)).sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShutterSchedule {
    /// Shutter opening time (ns).
    pub t_release_ns: f64,
    /// SC detuning while closed (rad/s).
    pub closed_detuning: f64,
    /// Integration window start (ns); the photon is in the MC here.
    pub t_start_ns: f64,
    pub t_end_ns: f64,
    /// RK4 step (ns).
    pub dt_int_ns: f64,
    /// Output sample interval (ns), a whole number of integration steps.
    pub sample_dt_ns: f64,
}

impl ShutterSchedule {
    /// Photon present from -50 ns, envelope recorded to 800 ns.
    pub fn published(t_release_ns: f64) -> Self {
        Self {
            t_release_ns,
            closed_detuning: DEFAULT_CLOSED_DETUNING,
            t_start_ns: -50.0,
            t_end_ns: 800.0,
            dt_int_ns: 0.1,
            sample_dt_ns: 1.0,
        }
    }

    /// Shutter held closed across `[t_start, t_end]`, for lifetime probes.
    pub fn closed(t_start_ns: f64, t_end_ns: f64, closed_detuning: f64) -> Self {
        Self {
            t_release_ns: f64::INFINITY,
            closed_detuning,
            t_start_ns,
            t_end_ns,
            dt_int_ns: 0.1,
            sample_dt_ns: 1.0,
        }
    }

    fn steps(&self, from: f64, to: f64, what: &str) -> Result<usize> {
        let k = (to - from) / self.dt_int_ns;
        if (k - k.round()).abs() > 1e-6 || k < 0.0 {
            return Err(invalid(format!("{what} is not on the integration grid")));
        }
        Ok(k.round() as usize)
    }

    fn validate_grid(&self) -> Result<()> {
        if !(self.dt_int_ns > 0.0) || !(self.dt_int_ns <= 1.0) {
            return Err(invalid(format!(
                "dt_int must be in (0, 1] ns, got {}",
                self.dt_int_ns
            )));
        }
        if !(self.t_start_ns < self.t_end_ns) {
            return Err(invalid("integration window is empty"));
        }
        let ratio = self.sample_dt_ns / self.dt_int_ns;
        if !(ratio >= 1.0) || (ratio - ratio.round()).abs() > 1e-6 {
            return Err(invalid(
                "sample_dt must be a whole number of integration steps",
            ));
        }
        self.steps(self.t_start_ns, self.t_end_ns, "window end")?;
        if !self.closed_detuning.is_finite() {
            return Err(invalid("closed detuning must be finite"));
        }
        Ok(())
    }

    fn validate_release(&self) -> Result<()> {
        self.validate_grid()?;
        if !(self.t_start_ns < self.t_release_ns && self.t_release_ns < self.t_end_ns) {
            return Err(invalid(format!(
                "release time {} outside ({}, {})",
                self.t_release_ns, self.t_start_ns, self.t_end_ns
            )));
        }
        self.steps(self.t_start_ns, self.t_release_ns, "release time")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleaseMetrics {
    /// FWHM of the main lobe of |ψ(t)|².
    pub fwhm_ns: f64,
    pub peak_time_ns: f64,
    /// Photon probability emitted before the shutter opens.
    pub preleak_fraction: f64,
    /// Total photon probability emitted through the output coupler.
    pub emitted_fraction: f64,
    pub mc_loss_fraction: f64,
    pub sc_loss_fraction: f64,
    /// |a_M|² + |a_S|² left at the window end.
    pub residual_population: f64,
    /// Most negative envelope value after the peak, relative to the peak.
    pub post_peak_min_ratio: f64,
}

impl ReleaseMetrics {
    /// Sum of every energy channel; 1 up to integration error.
    pub fn energy_total(&self) -> f64 {
        self.emitted_fraction
            + self.mc_loss_fraction
            + self.sc_loss_fraction
            + self.residual_population
    }

    /// The envelope swings negative after the main lobe.
    pub fn has_overshoot(&self) -> bool {
        self.post_peak_min_ratio < -1e-3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReleaseResult<T> {
    pub schedule: ShutterSchedule,
    /// Output field projected to a real mode, main lobe positive.
    pub envelope: ModeFunction<T>,
    /// |a_M(t)|² on the envelope grid.
    pub mc_population: Vec<T>,
    pub metrics: ReleaseMetrics,
}

impl<T: Real> ReleaseResult<T> {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_ns,psi,mc_pop")?;
        for (i, (x, p)) in self
            .envelope
            .samples()
            .iter()
            .zip(&self.mc_population)
            .enumerate()
        {
            writeln!(w, "{},{x},{p}", self.envelope.time(i))?;
        }
        Ok(())
    }

    pub fn metrics_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.metrics)?)
    }
}

type C<T> = Complex<T>;

#[derive(Clone, Copy)]
struct State<T> {
    a_m: C<T>,
    a_s: C<T>,
    emitted: T,
    lost_m: T,
    lost_s: T,
}

impl<T: Real> State<T> {
    fn axpy(&self, h: T, k: &State<T>) -> State<T> {
        State {
            a_m: self.a_m + k.a_m * h,
            a_s: self.a_s + k.a_s * h,
            emitted: self.emitted + k.emitted * h,
            lost_m: self.lost_m + k.lost_m * h,
            lost_s: self.lost_s + k.lost_s * h,
        }
    }

    fn is_finite(&self) -> bool {
        [
            self.a_m.re,
            self.a_m.im,
            self.a_s.re,
            self.a_s.im,
            self.emitted,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

struct Model<T> {
    half_gamma_m: T,
    g: T,
    kappa: T,
    gamma_s: T,
    gamma_m: T,
    half_sc: T,
}

impl<T: Real> Model<T> {
    fn new(r: &Rates) -> Self {
        let r = r.per_ns();
        Self {
            half_gamma_m: T::lit(r.gamma_m / 2.0),
            g: T::lit(r.g),
            kappa: T::lit(r.kappa_out),
            gamma_s: T::lit(r.gamma_s),
            gamma_m: T::lit(r.gamma_m),
            half_sc: T::lit((r.kappa_out + r.gamma_s) / 2.0),
        }
    }

    fn deriv(&self, y: &State<T>, detuning: T) -> State<T> {
        let i = C::new(T::zero(), T::one());
        let pop_s = y.a_s.norm_sqr();
        State {
            a_m: -y.a_m * self.half_gamma_m - i * y.a_s * self.g,
            a_s: -i * y.a_m * self.g - y.a_s * C::new(self.half_sc, detuning),
            emitted: self.kappa * pop_s,
            lost_m: self.gamma_m * y.a_m.norm_sqr(),
            lost_s: self.gamma_s * pop_s,
        }
    }

    fn rk4(&self, y: &State<T>, h: T, detuning: T) -> State<T> {
        let half = h * T::lit(0.5);
        let k1 = self.deriv(y, detuning);
        let k2 = self.deriv(&y.axpy(half, &k1), detuning);
        let k3 = self.deriv(&y.axpy(half, &k2), detuning);
        let k4 = self.deriv(&y.axpy(h, &k3), detuning);
        let sixth = h / T::lit(6.0);
        State {
            a_m: y.a_m + (k1.a_m + (k2.a_m + k3.a_m) * T::lit(2.0) + k4.a_m) * sixth,
            a_s: y.a_s + (k1.a_s + (k2.a_s + k3.a_s) * T::lit(2.0) + k4.a_s) * sixth,
            emitted: y.emitted
                + (k1.emitted + (k2.emitted + k3.emitted) * T::lit(2.0) + k4.emitted) * sixth,
            lost_m: y.lost_m
                + (k1.lost_m + (k2.lost_m + k3.lost_m) * T::lit(2.0) + k4.lost_m) * sixth,
            lost_s: y.lost_s
                + (k1.lost_s + (k2.lost_s + k3.lost_s) * T::lit(2.0) + k4.lost_s) * sixth,
        }
    }
}

/// RK4 substeps per integration step so that the fastest rate times the
/// substep stays below 1/4; exactly 1 for the default parameters when open.
fn substeps(r: &Rates, detuning_per_ns: f64, h_ns: f64) -> usize {
    let r = r.per_ns();
    let fastest = detuning_per_ns.abs() + r.g + 0.5 * (r.kappa_out + r.gamma_s + r.gamma_m);
    ((fastest * h_ns / 0.25).ceil() as usize).max(1)
}

struct Trace<T> {
    a_s: Vec<C<T>>,
    pop_m: Vec<T>,
    final_state: State<T>,
    emitted_at_release: T,
}

fn integrate<T: Real>(
    p: &CavityParams,
    s: &ShutterSchedule,
    stop_at_release: bool,
) -> Result<Trace<T>> {
    p.validate()?;
    let rates = derive_rates(p);
    let model = Model::<T>::new(&rates);
    let n_steps = s.steps(s.t_start_ns, s.t_end_ns, "window end")?;
    let per_sample = (s.sample_dt_ns / s.dt_int_ns).round() as usize;
    let release_step = if s.t_release_ns.is_finite() && s.t_release_ns < s.t_end_ns {
        s.steps(s.t_start_ns, s.t_release_ns, "release time")?
    } else {
        usize::MAX
    };
    let closed = s.closed_detuning * 1e-9;
    let sub_closed = substeps(&rates, closed, s.dt_int_ns);
    let sub_open = substeps(&rates, 0.0, s.dt_int_ns);

    let mut y = State {
        a_m: C::new(T::one(), T::zero()),
        a_s: C::new(T::zero(), T::zero()),
        emitted: T::zero(),
        lost_m: T::zero(),
        lost_s: T::zero(),
    };
    let n_samples = n_steps / per_sample;
    let mut a_s = Vec::with_capacity(n_samples);
    let mut pop_m = Vec::with_capacity(n_samples);
    let mut emitted_at_release = T::zero();
    for step in 0..n_steps {
        if step % per_sample == 0 && a_s.len() < n_samples {
            a_s.push(y.a_s);
            pop_m.push(y.a_m.norm_sqr());
        }
        if step == release_step {
            emitted_at_release = y.emitted;
            if stop_at_release {
                break;
            }
        }
        let (det, sub) = if step < release_step {
            (T::lit(closed), sub_closed)
        } else {
            (T::zero(), sub_open)
        };
        let h = T::lit(s.dt_int_ns / sub as f64);
        for _ in 0..sub {
            y = model.rk4(&y, h, det);
        }
        if !y.is_finite() {
            return Err(Error::NumericFailure(format!(
                "cavity state became non-finite at t = {} ns",
                s.t_start_ns + (step + 1) as f64 * s.dt_int_ns
            )));
        }
    }
    if release_step == usize::MAX {
        emitted_at_release = y.emitted;
    }
    Ok(Trace {
        a_s,
        pop_m,
        final_state: y,
        emitted_at_release,
    })
}

/// Integrates the release and returns the normalized output envelope.
pub fn simulate_release<T: Real>(
    p: &CavityParams,
    s: &ShutterSchedule,
) -> Result<ReleaseResult<T>> {
    s.validate_release()?;
    let trace = integrate::<T>(p, s, false)?;
    let rates = derive_rates(p);
    let scale = T::lit((rates.kappa_out * 1e-9).sqrt() * s.sample_dt_ns.sqrt());
    let re: Vec<T> = trace.a_s.iter().map(|z| z.re * scale).collect();
    let im: Vec<T> = trace.a_s.iter().map(|z| z.im * scale).collect();
    let complex = ComplexEnvelope::from_unnormalized(re, im, s.t_start_ns, s.sample_dt_ns)?;
    let mut envelope = complex.to_real_mode()?;
    let peak = envelope
        .samples()
        .iter()
        .copied()
        .fold(
            T::zero(),
            |best, x| if x.abs() > best.abs() { x } else { best },
        );
    if peak < T::zero() {
        let flipped = envelope.samples().iter().map(|&x| -x).collect();
        envelope = ModeFunction::new(flipped, envelope.t0(), envelope.dt())?;
    }
    let y = trace.final_state;
    let mut metrics = shape_metrics(&envelope);
    metrics.preleak_fraction = trace.emitted_at_release.as_f64();
    metrics.emitted_fraction = y.emitted.as_f64();
    metrics.mc_loss_fraction = y.lost_m.as_f64();
    metrics.sc_loss_fraction = y.lost_s.as_f64();
    metrics.residual_population = (y.a_m.norm_sqr() + y.a_s.norm_sqr()).as_f64();
    Ok(ReleaseResult {
        schedule: *s,
        envelope,
        mc_population: trace.pop_m,
        metrics,
    })
}

fn shape_metrics<T: Real>(m: &ModeFunction<T>) -> ReleaseMetrics {
    let v: Vec<f64> = m.samples().iter().map(|x| x.as_f64()).collect();
    let intensity: Vec<f64> = v.iter().map(|x| x * x).collect();
    let (peak, &peak_val) =
        intensity.iter().enumerate().fold(
            (0, &0.0),
            |best, (i, x)| if *x > *best.1 { (i, x) } else { best },
        );
    let half = peak_val / 2.0;
    let dt = m.dt();
    let mut left = m.time(0);
    for i in (0..peak).rev() {
        if intensity[i] < half {
            let frac = (half - intensity[i]) / (intensity[i + 1] - intensity[i]);
            left = m.time(i) + frac * dt;
            break;
        }
    }
    let mut right = m.time(v.len() - 1);
    for i in peak + 1..v.len() {
        if intensity[i] < half {
            let frac = (intensity[i - 1] - half) / (intensity[i - 1] - intensity[i]);
            right = m.time(i - 1) + frac * dt;
            break;
        }
    }
    let peak_amp = v[peak];
    let post_min = v[peak..].iter().copied().fold(f64::INFINITY, f64::min);
    ReleaseMetrics {
        fwhm_ns: right - left,
        peak_time_ns: m.time(peak),
        preleak_fraction: 0.0,
        emitted_fraction: 0.0,
        mc_loss_fraction: 0.0,
        sc_loss_fraction: 0.0,
        residual_population: 0.0,
        post_peak_min_ratio: post_min / peak_amp,
    }
}

/// Memory lifetime from the shutter-closed decay of |a_M|².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lifetime {
    /// 1/e decay time (ns); infinite when no decay is resolvable.
    pub tau_ns: f64,
    /// The decay time exceeds ten probe windows and is not well measured.
    pub exceeds_window: bool,
}

/// 1/e decay time of the MC population with the shutter closed over the
/// whole `[t_start, t_end]` probe window, from a log-linear fit.
pub fn storage_lifetime(p: &CavityParams, s: &ShutterSchedule) -> Result<Lifetime> {
    s.validate_grid()?;
    if s.t_release_ns < s.t_end_ns {
        return Err(invalid("shutter must stay closed over the probe window"));
    }
    let trace = integrate::<f64>(p, s, false)?;
    let mut pops = trace.pop_m;
    pops.push(trace.final_state.a_m.norm_sqr());
    if pops.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::FitFailure("population vanished during probe".into()));
    }
    let n = pops.len() as f64;
    let ts: Vec<f64> = (0..pops.len()).map(|i| i as f64 * s.sample_dt_ns).collect();
    let ys: Vec<f64> = pops.iter().map(|x| x.ln()).collect();
    let tm = ts.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - tm) * (y - ym)).sum();
    let sxx: f64 = ts.iter().map(|t| (t - tm).powi(2)).sum();
    let slope = sxy / sxx;
    let span = s.t_end_ns - s.t_start_ns;
    if slope > 1e-12 {
        return Err(Error::FitFailure(format!(
            "population grows (slope {slope:.3e}/ns)"
        )));
    }
    let tau_ns = if slope < 0.0 {
        -1.0 / slope
    } else {
        f64::INFINITY
    };
    Ok(Lifetime {
        tau_ns,
        exceeds_window: tau_ns > 10.0 * span,
    })
}

/// One release per schedule, computed in parallel; order is preserved.
pub fn envelope_family<T: Real>(
    p: &CavityParams,
    schedules: &[ShutterSchedule],
) -> Result<Vec<ReleaseResult<T>>> {
    schedules
        .par_iter()
        .map(|s| simulate_release(p, s))
        .collect()
}

/// Overlap of two envelopes after aligning their release times, restricted
/// to the post-release window both cover.
pub fn post_release_overlap<T: Real>(a: &ReleaseResult<T>, b: &ReleaseResult<T>) -> Result<T> {
    let (ta, tb) = (a.schedule.t_release_ns, b.schedule.t_release_ns);
    let span = (a.envelope.t_end() - ta).min(b.envelope.t_end() - tb) - a.envelope.dt();
    let ca = clip_and_renormalize(&a.envelope, ta, ta + span)?;
    let cb = clip_and_renormalize(&b.envelope, tb, tb + span)?;
    overlap_sq(&time_shift(&ca, tb - ta)?, &cb)
}

/// Finds the closed detuning giving `target` pre-leak for `template`'s
/// release time, by bisection on log Δ.
pub fn calibrate_closed_detuning(
    p: &CavityParams,
    template: &ShutterSchedule,
    target: f64,
) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(invalid(format!("pre-leak target {target} outside (0, 1)")));
    }
    template.validate_release()?;
    let preleak = |delta: f64| -> Result<f64> {
        let s = ShutterSchedule {
            closed_detuning: delta,
            ..*template
        };
        Ok(integrate::<f64>(p, &s, true)?.emitted_at_release)
    };
    let g = derive_rates(p).g;
    let (mut lo, mut hi) = ((0.01 * g).ln(), (1e5 * g).ln());
    if preleak(lo.exp())? < target {
        return Err(invalid("target pre-leak exceeds the undetuned leak"));
    }
    if preleak(hi.exp())? > target {
        return Err(invalid("target pre-leak below the reachable minimum"));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if preleak(mid.exp())? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}
