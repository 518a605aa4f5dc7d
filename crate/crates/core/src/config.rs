//! Experiment configuration (TOML). Every field has a default, and the
//! fully resolved config is echoed into sweep reports.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cavity::{CavityParams, ShutterSchedule, DEFAULT_CLOSED_DETUNING};
use crate::error::{Error, Result};
use crate::estimation::{DEFAULT_RESAMPLES, MAX_N_MAX};
use crate::fock::DEFAULT_N_MAX;
use crate::homodyne::{AdcSpec, FrameWindow, ImperfectionConfig};

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReleaseConfig {
    pub closed_detuning: f64,
    pub t_start_ns: f64,
    pub t_end_ns: f64,
    pub dt_int_ns: f64,
    pub sample_dt_ns: f64,
    /// Shutter-closed probe window for the lifetime estimate.
    pub lifetime_probe_ns: f64,
}

impl Default for ReleaseConfig {
    fn default() -> Self {
        let s = ShutterSchedule::published(0.0);
        Self {
            closed_detuning: DEFAULT_CLOSED_DETUNING,
            t_start_ns: s.t_start_ns,
            t_end_ns: s.t_end_ns,
            dt_int_ns: s.dt_int_ns,
            sample_dt_ns: s.sample_dt_ns,
            lifetime_probe_ns: 1000.0,
        }
    }
}

impl ReleaseConfig {
    pub fn schedule(&self, t_release_ns: f64) -> ShutterSchedule {
        ShutterSchedule {
            t_release_ns,
            closed_detuning: self.closed_detuning,
            t_start_ns: self.t_start_ns,
            t_end_ns: self.t_end_ns,
            dt_int_ns: self.dt_int_ns,
            sample_dt_ns: self.sample_dt_ns,
        }
    }

    pub fn lifetime_probe(&self) -> ShutterSchedule {
        ShutterSchedule {
            dt_int_ns: self.dt_int_ns,
            sample_dt_ns: self.sample_dt_ns,
            ..ShutterSchedule::closed(0.0, self.lifetime_probe_ns, self.closed_detuning)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameConfig {
    pub t0_ns: f64,
    pub n_samples: usize,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            t0_ns: -200.0,
            n_samples: 1000,
        }
    }
}

/// Heralded single-photon weight at release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PurityModel {
    /// One value per storage time.
    Explicit { values: Vec<f64> },
    /// `p0·exp(-t_release/τ)` with τ from the simulated lifetime.
    Lifetime { p0: f64 },
}

impl Default for PurityModel {
    fn default() -> Self {
        Self::Explicit {
            values: vec![0.582, 0.546, 0.531, 0.497],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdcConfig {
    pub enabled: bool,
    pub bits: u32,
    pub full_scale: f64,
}

impl Default for AdcConfig {
    fn default() -> Self {
        let a = AdcSpec::default_8bit();
        Self {
            enabled: true,
            bits: a.bits,
            full_scale: a.full_scale,
        }
    }
}

impl AdcConfig {
    pub fn spec(&self) -> Result<Option<AdcSpec>> {
        if self.enabled {
            AdcSpec::new(self.bits, self.full_scale).map(Some)
        } else {
            Ok(None)
        }
    }
}

/// Clip window applied to the first condition's mode before it is
/// delayed to each later condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftedConfig {
    pub clip_start_ns: f64,
    pub clip_end_ns: f64,
}

impl Default for ShiftedConfig {
    fn default() -> Self {
        Self {
            clip_start_ns: -150.0,
            clip_end_ns: 450.0,
        }
    }
}

/// Where the mode is searched for: from `start_ns` (frame time) to
/// `end_after_release_ns` past each release, limited to `bandwidth_mhz`
/// (0 disables the band limit).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub start_ns: f64,
    pub end_after_release_ns: f64,
    pub bandwidth_mhz: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            start_ns: -50.0,
            end_after_release_ns: 250.0,
            bandwidth_mhz: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FigureConfig {
    pub histogram_bins: usize,
    pub wigner_extent: f64,
    pub wigner_points: usize,
}

impl Default for FigureConfig {
    fn default() -> Self {
        Self {
            histogram_bins: 60,
            wigner_extent: 4.0,
            wigner_points: 161,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: String,
    pub storage_times_ns: Vec<f64>,
    pub intrinsic_delay_ns: f64,
    pub frames_per_condition: usize,
    pub n_max: usize,
    pub bootstrap_resamples: usize,
    pub cavity: CavityParams,
    pub release: ReleaseConfig,
    pub frame: FrameConfig,
    pub purity: PurityModel,
    pub imperfections: ImperfectionConfig,
    pub adc: AdcConfig,
    pub analysis: AnalysisConfig,
    pub shifted: ShiftedConfig,
    pub figures: FigureConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: "out".into(),
            storage_times_ns: vec![0.0, 100.0, 200.0, 300.0],
            intrinsic_delay_ns: 150.0,
            frames_per_condition: 43_000,
            n_max: DEFAULT_N_MAX,
            bootstrap_resamples: DEFAULT_RESAMPLES,
            cavity: CavityParams::published(),
            release: ReleaseConfig::default(),
            frame: FrameConfig::default(),
            purity: PurityModel::default(),
            imperfections: ImperfectionConfig::default(),
            adc: AdcConfig::default(),
            analysis: AnalysisConfig::default(),
            shifted: ShiftedConfig::default(),
            figures: FigureConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Fully resolved config, defaults included.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| bad(e.to_string()))
    }

    /// SHA-256 of the resolved config, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn release_times(&self) -> Vec<f64> {
        self.storage_times_ns
            .iter()
            .map(|t| t + self.intrinsic_delay_ns)
            .collect()
    }

    pub fn frame_window(&self) -> FrameWindow {
        FrameWindow {
            t0_ns: self.frame.t0_ns,
            n_samples: self.frame.n_samples,
            dt_ns: self.release.sample_dt_ns,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ts = &self.storage_times_ns;
        if ts.is_empty() {
            return Err(bad("storage_times_ns must not be empty"));
        }
        if ts.iter().any(|t| !t.is_finite() || *t < 0.0) || ts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad(
                "storage_times_ns must be non-negative and strictly increasing",
            ));
        }
        if self.frames_per_condition < 100 {
            return Err(bad(format!(
                "frames_per_condition must be at least 100, got {}",
                self.frames_per_condition
            )));
        }
        if !(1..=MAX_N_MAX).contains(&self.n_max) {
            return Err(bad(format!("n_max must lie in [1, {MAX_N_MAX}]")));
        }
        if self.bootstrap_resamples < 20 {
            return Err(bad("bootstrap_resamples must be at least 20"));
        }
        if !(self.intrinsic_delay_ns >= 0.0) {
            return Err(bad("intrinsic_delay_ns must be non-negative"));
        }
        match &self.purity {
            PurityModel::Explicit { values } => {
                if values.len() != ts.len() {
                    return Err(bad(format!(
                        "{} purities given for {} storage times",
                        values.len(),
                        ts.len()
                    )));
                }
                if values.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(bad("purities must lie in [0, 1]"));
                }
            }
            PurityModel::Lifetime { p0 } => {
                if !(0.0..=1.0).contains(p0) {
                    return Err(bad("p0 must lie in [0, 1]"));
                }
            }
        }
        if self.frame.n_samples < 2 {
            return Err(bad("frames need at least 2 samples"));
        }
        if self.figures.histogram_bins < 10
            || self.figures.wigner_points < 2
            || !(self.figures.wigner_extent > 0.0)
        {
            return Err(bad("figure settings out of range"));
        }
        let a = &self.analysis;
        if !(a.bandwidth_mhz >= 0.0) {
            return Err(bad("analysis bandwidth must be non-negative"));
        }
        for t in self.release_times() {
            let (lo, hi) = (a.start_ns, t + a.end_after_release_ns);
            if !(lo < hi) {
                return Err(bad(format!("analysis window [{lo}, {hi}) is empty")));
            }
            let w = self.frame_window();
            if lo < w.t0_ns || hi > w.t0_ns + w.n_samples as f64 * w.dt_ns {
                return Err(bad(format!(
                    "analysis window [{lo}, {hi}) falls outside the frames"
                )));
            }
        }
        if !(self.shifted.clip_start_ns < self.shifted.clip_end_ns) {
            return Err(bad("shifted clip window is empty"));
        }
        self.cavity.validate().map_err(|e| bad(e.to_string()))?;
        self.imperfections
            .validate()
            .map_err(|e| bad(e.to_string()))?;
        self.adc.spec().map_err(|e| bad(e.to_string()))?;
        Ok(())
    }
}
