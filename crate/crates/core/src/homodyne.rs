//! Synthetic homodyne frames: one excited temporal mode embedded in
//! multimode vacuum, sampled on the digitizer grid.
//!
//! Every sample carries independent vacuum noise of variance 1/2 (flat
//! detector response). The excited mode's component is then replaced by a
//! draw from the state's quadrature law:
//! `frame = w - (ψ·w)ψ + x_ψ ψ`.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::{apply_loss, FockDiagonalState, FockSampler};
use crate::modes::{detuned_mode, grid_offset, ModeFunction};
use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"PMFRAMES";
const FORMAT_VERSION: u32 = 1;

/// Vacuum quadrature standard deviation, `√(1/2)`.
pub const VACUUM_STD: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detuning {
    /// Signal-LO detuning (rad/s).
    pub delta: f64,
    /// Phase at t = 0 (rad).
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImperfectionConfig {
    /// Scattered-LO contamination `α`.
    pub displacement: Option<Displacement>,
    pub detuning: Option<Detuning>,
    /// Extra transmission applied to the state before detection.
    pub extra_loss: f64,
    /// Std of additive electronic noise per sample (quadrature units).
    pub electronic_noise_std: f64,
}

impl Default for ImperfectionConfig {
    fn default() -> Self {
        Self {
            displacement: None,
            detuning: None,
            extra_loss: 1.0,
            electronic_noise_std: 0.0,
        }
    }
}

impl ImperfectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.extra_loss) {
            return Err(invalid(format!(
                "extra_loss {} outside [0, 1]",
                self.extra_loss
            )));
        }
        if !(self.electronic_noise_std >= 0.0) {
            return Err(invalid("electronic noise std must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdcSpec {
    pub bits: u32,
    /// Half-range: levels span `[-full_scale, +full_scale]`.
    pub full_scale: f64,
}

impl AdcSpec {
    pub fn new(bits: u32, full_scale: f64) -> Result<Self> {
        if !(2..=16).contains(&bits) {
            return Err(invalid(format!("ADC bits {bits} outside [2, 16]")));
        }
        if !(full_scale > 0.0 && full_scale.is_finite()) {
            return Err(invalid(format!(
                "ADC full scale must be positive, got {full_scale}"
            )));
        }
        Ok(Self { bits, full_scale })
    }

    /// 8 bits over ±10 vacuum standard deviations.
    pub fn default_8bit() -> Self {
        Self {
            bits: 8,
            full_scale: 10.0 * VACUUM_STD,
        }
    }

    pub fn step(&self) -> f64 {
        2.0 * self.full_scale / (1u64 << self.bits) as f64
    }
}

/// Uniform mid-rise quantizer saturating at the outermost levels.
pub fn quantize_adc<T: Real>(frame: &mut [T], adc: &AdcSpec) {
    let step = adc.step();
    let levels = (1u64 << adc.bits) as f64;
    for x in frame.iter_mut() {
        let k = ((x.as_f64() + adc.full_scale) / step)
            .floor()
            .clamp(0.0, levels - 1.0);
        *x = T::lit(-adc.full_scale + (k + 0.5) * step);
    }
}

/// A batch of frames, stored row-major at 32-bit precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    n_frames: usize,
    n_samples: usize,
    t0: f64,
    dt: f64,
    adc: Option<AdcSpec>,
    seed: u64,
    samples: Vec<f32>,
}

impl FrameSet {
    pub fn new(
        n_samples: usize,
        t0: f64,
        dt: f64,
        adc: Option<AdcSpec>,
        seed: u64,
        samples: Vec<f32>,
    ) -> Result<Self> {
        if n_samples == 0 || !samples.len().is_multiple_of(n_samples) {
            return Err(invalid("sample count is not a whole number of frames"));
        }
        if !(dt > 0.0) {
            return Err(invalid("dt must be positive"));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(invalid("frames contain non-finite samples"));
        }
        Ok(Self {
            n_frames: samples.len() / n_samples,
            n_samples,
            t0,
            dt,
            adc,
            seed,
            samples,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn adc(&self) -> Option<AdcSpec> {
        self.adc
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.samples[i * self.n_samples..(i + 1) * self.n_samples]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.samples.chunks_exact(self.n_samples)
    }

    /// New set holding the chosen frames, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut samples = Vec::with_capacity(indices.len() * self.n_samples);
        for &i in indices {
            samples.extend_from_slice(self.frame(i));
        }
        Self {
            n_frames: indices.len(),
            samples,
            ..self.clone()
        }
    }

    /// Mode samples aligned to this grid (zero where the mode is absent).
    pub fn align_mode<T: Real>(&self, psi: &ModeFunction<T>) -> Result<Vec<T>> {
        if (psi.dt() - self.dt).abs() > 1e-9 * self.dt {
            return Err(invalid(format!(
                "mode dt {} differs from frame dt {}",
                psi.dt(),
                self.dt
            )));
        }
        let k = grid_offset(self.t0, psi.t0(), self.dt)?;
        let mut out = vec![T::zero(); self.n_samples];
        for (i, &x) in psi.samples().iter().enumerate() {
            let j = i as i64 + k;
            if j >= 0 && (j as usize) < self.n_samples {
                out[j as usize] = x;
            }
        }
        Ok(out)
    }

    /// `Σᵢ ψ0ᵢ xᵢ` for every frame.
    pub fn extract_all<T: Real>(&self, psi0: &ModeFunction<T>) -> Result<Vec<T>> {
        let w = self.align_mode(psi0)?;
        let (lo, hi) = support(&w);
        Ok(self
            .samples
            .par_chunks_exact(self.n_samples)
            .map(|f| dot_f32(&f[lo..hi], &w[lo..hi]))
            .collect())
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_frames as u64).to_le_bytes())?;
        w.write_all(&(self.n_samples as u64).to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&self.t0.to_le_bytes())?;
        match self.adc {
            Some(a) => {
                w.write_all(&[1u8])?;
                w.write_all(&a.bits.to_le_bytes())?;
                w.write_all(&a.full_scale.to_le_bytes())?;
            }
            None => {
                w.write_all(&[0u8])?;
                w.write_all(&0u32.to_le_bytes())?;
                w.write_all(&0f64.to_le_bytes())?;
            }
        }
        w.write_all(&self.seed.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.samples.len() * 4);
        for x in &self.samples {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a frame-set file".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported frame-set version {version}"
            )));
        }
        let n_frames = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let n_samples = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let dt = f64::from_le_bytes(read_array(&mut r)?);
        let t0 = f64::from_le_bytes(read_array(&mut r)?);
        let [has_adc] = read_array::<_, 1>(&mut r)?;
        let bits = u32::from_le_bytes(read_array(&mut r)?);
        let full_scale = f64::from_le_bytes(read_array(&mut r)?);
        let seed = u64::from_le_bytes(read_array(&mut r)?);
        let adc = match has_adc {
            0 => None,
            1 => Some(AdcSpec::new(bits, full_scale)?),
            v => return Err(Error::Format(format!("bad ADC flag {v}"))),
        };
        let total = n_frames
            .checked_mul(n_samples)
            .ok_or_else(|| Error::Format("frame-set dimensions overflow".into()))?;
        let mut bytes = vec![0u8; total * 4];
        r.read_exact(&mut bytes)?;
        let samples = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::new(n_samples, t0, dt, adc, seed, samples)
    }

    /// Long-format CSV (`frame,t_ns,x`), intended for small sets.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "frame,t_ns,x")?;
        for (m, f) in self.frames().enumerate() {
            for (i, x) in f.iter().enumerate() {
                writeln!(w, "{m},{},{x}", self.t0 + i as f64 * self.dt)?;
            }
        }
        Ok(())
    }
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn support<T: Real>(w: &[T]) -> (usize, usize) {
    let lo = w.iter().position(|x| *x != T::zero()).unwrap_or(0);
    let hi = w
        .iter()
        .rposition(|x| *x != T::zero())
        .map_or(lo, |i| i + 1);
    (lo, hi)
}

fn dot_f32<T: Real>(f: &[f32], w: &[T]) -> T {
    f.iter()
        .zip(w)
        .fold(T::zero(), |acc, (&x, &y)| acc + T::lit(x as f64) * y)
}

/// `Σᵢ ψ0ᵢ·frameᵢ` for a single frame starting at `t0`.
pub fn extract_quadrature<T: Real>(
    frame: &[T],
    t0: f64,
    dt: f64,
    psi0: &ModeFunction<T>,
) -> Result<T> {
    if (psi0.dt() - dt).abs() > 1e-9 * dt {
        return Err(invalid(format!(
            "mode dt {} differs from frame dt {dt}",
            psi0.dt()
        )));
    }
    let k = grid_offset(t0, psi0.t0(), dt)?;
    let mut acc = T::zero();
    for (i, &x) in psi0.samples().iter().enumerate() {
        let j = i as i64 + k;
        if j >= 0 && (j as usize) < frame.len() {
            acc += x * frame[j as usize];
        }
    }
    Ok(acc)
}

/// Precomputed generator for one condition: the mode as seen by the LO,
/// the post-loss state's sampler and the noise knobs.
#[derive(Debug, Clone)]
pub struct FrameSynth<T> {
    mode: Vec<T>,
    t0: f64,
    dt: f64,
    sampler: FockSampler,
    offset: T,
    electronic: T,
}

impl<T: Real> FrameSynth<T> {
    /// `psi` must fit inside the `n_samples` frame starting at `t0`.
    pub fn new(
        state: &FockDiagonalState<T>,
        psi: &ModeFunction<T>,
        imperfections: &ImperfectionConfig,
        t0: f64,
        n_samples: usize,
    ) -> Result<Self> {
        imperfections.validate()?;
        let measured = match imperfections.detuning {
            Some(d) => detuned_mode(psi, d.delta, d.phi)?,
            None => psi.clone(),
        };
        let mode = measured.embed(t0, n_samples)?.into_samples();
        let state = apply_loss(state, T::lit(imperfections.extra_loss))?;
        let offset = imperfections
            .displacement
            .map_or(0.0, |a| std::f64::consts::SQRT_2 * a.re);
        Ok(Self {
            mode,
            t0,
            dt: psi.dt(),
            sampler: FockSampler::new(&state),
            offset: T::lit(offset),
            electronic: T::lit(imperfections.electronic_noise_std),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.mode.len()
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Fills `out` with one frame.
    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [T]) {
        let s = T::lit(VACUUM_STD);
        let mut proj = T::zero();
        for (o, &m) in out.iter_mut().zip(&self.mode) {
            *o = s * T::std_normal(rng);
            proj += *o * m;
        }
        let x = T::lit(self.sampler.sample(rng)) + self.offset;
        let shift = x - proj;
        for (o, &m) in out.iter_mut().zip(&self.mode) {
            *o += shift * m;
        }
        if self.electronic > T::zero() {
            for o in out.iter_mut() {
                *o += self.electronic * T::std_normal(rng);
            }
        }
    }

    pub fn frame<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut out = vec![T::zero(); self.mode.len()];
        self.fill(rng, &mut out);
        out
    }
}

/// One frame on the mode's own grid.
pub fn synth_frame<T: Real, R: Rng + ?Sized>(
    state: &FockDiagonalState<T>,
    psi: &ModeFunction<T>,
    imperfections: &ImperfectionConfig,
    rng: &mut R,
) -> Result<Vec<T>> {
    Ok(FrameSynth::new(state, psi, imperfections, psi.t0(), psi.len())?.frame(rng))
}

/// Independent RNG stream for frame `index` under `master_seed`.
pub fn frame_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Grid the frames are recorded on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameWindow {
    pub t0_ns: f64,
    pub n_samples: usize,
    pub dt_ns: f64,
}

/// `M` frames; frame `i` uses stream `i` of `master_seed`, so the result
/// does not depend on how the work is scheduled.
pub fn synth_condition<T: Real>(
    state: &FockDiagonalState<T>,
    psi: &ModeFunction<T>,
    n_frames: usize,
    imperfections: &ImperfectionConfig,
    adc: Option<&AdcSpec>,
    window: &FrameWindow,
    master_seed: u64,
) -> Result<FrameSet> {
    if n_frames == 0 {
        return Err(invalid("frame count must be at least 1"));
    }
    if (psi.dt() - window.dt_ns).abs() > 1e-9 * window.dt_ns {
        return Err(invalid("mode and frame window use different dt"));
    }
    let synth = FrameSynth::new(state, psi, imperfections, window.t0_ns, window.n_samples)?;
    let n = window.n_samples;
    let mut samples = vec![0f32; n_frames * n];
    samples.par_chunks_mut(n).enumerate().for_each_init(
        || vec![T::zero(); n],
        |buf, (i, out)| {
            let mut rng = frame_rng(master_seed, i as u64);
            synth.fill(&mut rng, buf);
            if let Some(adc) = adc {
                quantize_adc(buf, adc);
            }
            for (o, x) in out.iter_mut().zip(buf.iter()) {
                *o = x.as_f64() as f32;
            }
        },
    );
    FrameSet::new(
        n,
        window.t0_ns,
        window.dt_ns,
        adc.copied(),
        master_seed,
        samples,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mode() -> ModeFunction<f64> {
        ModeFunction::gaussian(0.0, 1.0, 200, 100.0, 50.0).unwrap()
    }

    fn window() -> FrameWindow {
        FrameWindow {
            t0_ns: 0.0,
            n_samples: 200,
            dt_ns: 1.0,
        }
    }

    #[test]
    fn projection_examples() {
        let m = mode();
        let frame: Vec<f64> = m.samples().iter().map(|x| 3.7 * x).collect();
        assert_abs_diff_eq!(
            extract_quadrature(&frame, 0.0, 1.0, &m).unwrap(),
            3.7,
            epsilon = 1e-12
        );
        let other = ModeFunction::<f64>::boxcar(0.0, 1.0, 200, 0.0, 10.0).unwrap();
        let q = crate::modes::orthonormalize(&[m.clone(), other]).unwrap();
        assert_abs_diff_eq!(
            extract_quadrature(q[1].samples(), 0.0, 1.0, &m).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let coarse = ModeFunction::<f64>::gaussian(0.0, 2.0, 100, 100.0, 50.0).unwrap();
        assert!(matches!(
            extract_quadrature(&frame, 0.0, 1.0, &coarse),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn vacuum_frames_have_half_variance() {
        let fs = synth_condition(
            &FockDiagonalState::<f64>::vacuum(),
            &mode(),
            10_000,
            &ImperfectionConfig::default(),
            None,
            &window(),
            3,
        )
        .unwrap();
        // per-bin variance: std error of a variance estimate is var·√(2/M)
        let band = 3.0 * 0.5 * (2.0f64 / 10_000.0).sqrt();
        for i in [0, 50, 100, 199] {
            let v: f64 = fs.frames().map(|f| (f[i] as f64).powi(2)).sum::<f64>() / 10_000.0;
            assert!((v - 0.5).abs() < band, "bin {i}: {v}");
        }
        let q = fs.extract_all(&mode()).unwrap();
        let v: f64 = q.iter().map(|x| x * x).sum::<f64>() / q.len() as f64;
        assert!((v - 0.5).abs() < 0.01 + band, "mode variance {v}");
    }

    #[test]
    fn seeds_are_deterministic() {
        let state = FockDiagonalState::single_photon_mixture(0.582).unwrap();
        let make = |seed| {
            synth_condition(
                &state,
                &mode(),
                50,
                &ImperfectionConfig::default(),
                None,
                &window(),
                seed,
            )
            .unwrap()
        };
        assert_eq!(make(9), make(9));
        assert_ne!(make(9), make(10));
    }

    #[test]
    fn zero_frames_rejected() {
        let r = synth_condition(
            &FockDiagonalState::<f64>::vacuum(),
            &mode(),
            0,
            &ImperfectionConfig::default(),
            None,
            &window(),
            1,
        );
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn quantizer_levels_and_rails() {
        let adc = AdcSpec::new(8, 2.0).unwrap();
        let step = adc.step();
        let on_level = -2.0 + 37.5 * step;
        let mut f = vec![on_level, 5.0, -5.0, 0.001];
        quantize_adc(&mut f, &adc);
        assert_eq!(f[0], on_level);
        assert_abs_diff_eq!(f[1], 2.0 - step / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f[2], -2.0 + step / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f[3], step / 2.0, epsilon = 1e-15);
        assert!(AdcSpec::new(1, 1.0).is_err());
        assert!(AdcSpec::new(8, 0.0).is_err());
    }

    #[test]
    fn displacement_shifts_mode_mean() {
        let imp = ImperfectionConfig {
            displacement: Some(Displacement { re: 0.5, im: 0.0 }),
            ..Default::default()
        };
        let fs = synth_condition(
            &FockDiagonalState::<f64>::vacuum(),
            &mode(),
            4000,
            &imp,
            None,
            &window(),
            5,
        )
        .unwrap();
        let q = fs.extract_all(&mode()).unwrap();
        let mean = q.iter().sum::<f64>() / q.len() as f64;
        assert_abs_diff_eq!(mean, 0.5 * 2f64.sqrt(), epsilon = 0.05);
    }

    #[test]
    fn binary_round_trip() {
        let fs = synth_condition(
            &FockDiagonalState::single_photon_mixture(0.5).unwrap(),
            &mode(),
            20,
            &ImperfectionConfig::default(),
            Some(&AdcSpec::default_8bit()),
            &window(),
            77,
        )
        .unwrap();
        let mut buf = Vec::new();
        fs.write_binary(&mut buf).unwrap();
        assert_eq!(FrameSet::read_binary(&buf[..]).unwrap(), fs);
        assert!(FrameSet::read_binary(&buf[..10]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            FrameSet::read_binary(&bad[..]),
            Err(Error::Format(_))
        ));
        let mut csv = Vec::new();
        fs.write_csv(&mut csv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap().lines().count(),
            20 * 200 + 1
        );
    }

    #[test]
    fn mode_outside_window_rejected() {
        let w = FrameWindow {
            t0_ns: 150.0,
            n_samples: 20,
            dt_ns: 1.0,
        };
        let r = synth_condition(
            &FockDiagonalState::<f64>::vacuum(),
            &mode(),
            5,
            &ImperfectionConfig::default(),
            None,
            &w,
            1,
        );
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }
}
