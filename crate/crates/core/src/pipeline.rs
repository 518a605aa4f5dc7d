//! End-to-end sweep: release simulation, frame synthesis, estimation and
//! decay fits, plus the figure-data files derived from a report.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cavity::{simulate_release, storage_lifetime, ReleaseMetrics};
use crate::config::{ExperimentConfig, PurityModel};
use crate::error::{Error, Result};
use crate::estimation::simplex::NelderMead;
use crate::estimation::{
    autocovariance, bootstrap_fit, fit_exponential_decay, histogram_with_overlay, pca_in_basis,
    AnalysisBasis, BootstrapSummary, DecayFit, Histogram, LikelihoodTable,
};
use crate::fock::{wigner_origin, wigner_section, FockDiagonalState};
use crate::homodyne::{synth_condition, FrameSet};
use crate::modes::{clip_and_renormalize, detuned_mode, overlap_sq, time_shift, ModeFunction};

const BOOTSTRAP_SALT: u64 = 0xB007_5742_u64;

/// SplitMix64 of `(master, index)`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Absolute analysis window; no band limit when `bandwidth_mhz` is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    pub start_ns: f64,
    pub end_ns: f64,
    pub bandwidth_mhz: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub n_max: usize,
    pub bootstrap_resamples: usize,
    pub histogram_bins: usize,
    /// `None` runs PCA over the whole frame.
    pub analysis: Option<AnalysisWindow>,
}

impl EstimateOptions {
    /// Options for the condition released at `t_release_ns`.
    pub fn from_config(cfg: &ExperimentConfig, t_release_ns: f64) -> Self {
        let a = &cfg.analysis;
        Self {
            n_max: cfg.n_max,
            bootstrap_resamples: cfg.bootstrap_resamples,
            histogram_bins: cfg.figures.histogram_bins,
            analysis: Some(AnalysisWindow {
                start_ns: a.start_ns,
                end_ns: t_release_ns + a.end_after_release_ns,
                bandwidth_mhz: (a.bandwidth_mhz > 0.0).then_some(a.bandwidth_mhz),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyReport {
    pub n_frames: usize,
    pub frame_seed: u64,
    /// Photon-number distribution `c₀..c_nmax`.
    pub c: Vec<f64>,
    pub loglik: f64,
    pub purity: f64,
    pub purity_err: f64,
    pub wigner_origin: f64,
    pub pca_eigenvalue: f64,
    pub pca_mean_photon: f64,
    pub pca_degenerate: bool,
    /// Dimension of the space the mode was searched in.
    pub pca_dim: usize,
    pub mle_evaluations: usize,
    pub mle_converged: bool,
    pub bootstrap: BootstrapSummary,
    pub mode: ModeFunction<f64>,
    pub histogram: Histogram,
}

impl TomographyReport {
    pub fn state(&self) -> Result<FockDiagonalState<f64>> {
        FockDiagonalState::new(self.c.clone())
    }
}

/// PCA mode, quadratures, maximum likelihood, bootstrap and histogram for
/// one frame set. The bootstrap seed is derived from the set's own seed.
pub fn estimate_frames(fs: &FrameSet, opts: &EstimateOptions) -> Result<TomographyReport> {
    let pca = match &opts.analysis {
        Some(a) => pca_in_basis(
            fs,
            &AnalysisBasis::band_limited(a.start_ns, a.end_ns, fs.dt(), a.bandwidth_mhz)?,
        )?,
        None => autocovariance::<f64>(fs)?.leading_mode()?,
    };
    let x = fs.extract_all(&pca.mode)?;
    let table = LikelihoodTable::new(&x, opts.n_max)?;
    let fit = table.fit(&table.default_starts(), &NelderMead::default())?;
    let boot = bootstrap_fit(
        &table,
        &fit.y,
        opts.bootstrap_resamples,
        derive_seed(fs.seed(), BOOTSTRAP_SALT),
    )?;
    let histogram = histogram_with_overlay(&x, opts.histogram_bins, &fit.state)?;
    Ok(TomographyReport {
        n_frames: fs.n_frames(),
        frame_seed: fs.seed(),
        c: fit.state.probabilities().to_vec(),
        loglik: fit.loglik,
        purity: fit.state.prob(1),
        purity_err: boot.std,
        wigner_origin: wigner_origin(&fit.state),
        pca_eigenvalue: pca.eigenvalue,
        pca_mean_photon: pca.mean_photon(),
        pca_degenerate: pca.degenerate,
        pca_dim: pca.spectrum.len(),
        mle_evaluations: fit.evaluations,
        mle_converged: fit.converged,
        bootstrap: boot,
        mode: pca.mode,
        histogram,
    })
}

/// Photon-number fit in a fixed, externally supplied mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedModeEstimate {
    pub c: Vec<f64>,
    pub purity: f64,
    pub loglik: f64,
    /// Overlap of the fixed mode with this condition's PCA mode.
    pub overlap_with_pca: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub index: usize,
    pub storage_time_ns: f64,
    pub release_time_ns: f64,
    pub configured_purity: f64,
    pub frame_seed: u64,
    pub release: Option<ReleaseMetrics>,
    pub envelope: Option<ModeFunction<f64>>,
    pub tomography: Option<TomographyReport>,
    /// `|(ψ_pca, ψ_measured)|²`, where the measured mode includes any
    /// signal-LO detuning.
    pub mode_overlap: Option<f64>,
    pub shifted: Option<FixedModeEstimate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub condition_seeds: Vec<u64>,
    pub simulated_lifetime_ns: f64,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub provenance: Provenance,
    pub conditions: Vec<ConditionReport>,
    pub raw_fit: Option<DecayFit>,
    pub shifted_fit: Option<DecayFit>,
    pub errors: Vec<String>,
}

impl SweepReport {
    /// Some condition or sweep-level fit failed.
    pub fn has_failures(&self) -> bool {
        !self.errors.is_empty() || self.conditions.iter().any(|c| c.error.is_some())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn configured_purities(cfg: &ExperimentConfig, lifetime_ns: f64) -> Vec<f64> {
    match &cfg.purity {
        PurityModel::Explicit { values } => values.clone(),
        PurityModel::Lifetime { p0 } => cfg
            .release_times()
            .iter()
            .map(|t| p0 * (-t / lifetime_ns).exp())
            .collect(),
    }
}

struct ConditionRun {
    report: ConditionReport,
    frames: Option<FrameSet>,
}

fn run_condition(cfg: &ExperimentConfig, index: usize, purity: f64) -> ConditionRun {
    let storage = cfg.storage_times_ns[index];
    let t_release = storage + cfg.intrinsic_delay_ns;
    let seed = derive_seed(cfg.seed, index as u64);
    let mut report = ConditionReport {
        index,
        storage_time_ns: storage,
        release_time_ns: t_release,
        configured_purity: purity,
        frame_seed: seed,
        release: None,
        envelope: None,
        tomography: None,
        mode_overlap: None,
        shifted: None,
        error: None,
    };
    let mut frames = None;
    let result = (|| -> Result<()> {
        let rel = simulate_release::<f64>(&cfg.cavity, &cfg.release.schedule(t_release))?;
        report.release = Some(rel.metrics);
        report.envelope = Some(rel.envelope.clone());
        let fs = frames_for(cfg, index, purity, &rel.envelope)?;
        let tomo = estimate_frames(&fs, &EstimateOptions::from_config(cfg, t_release))?;
        let measured = match cfg.imperfections.detuning {
            Some(d) => detuned_mode(&rel.envelope, d.delta, d.phi)?,
            None => rel.envelope.clone(),
        };
        report.mode_overlap = Some(overlap_sq(&tomo.mode, &measured)?);
        report.tomography = Some(tomo);
        frames = Some(fs);
        Ok(())
    })();
    if let Err(e) = result {
        report.error = Some(e.to_string());
    }
    ConditionRun { report, frames }
}

fn frames_for(
    cfg: &ExperimentConfig,
    index: usize,
    purity: f64,
    envelope: &ModeFunction<f64>,
) -> Result<FrameSet> {
    let state = FockDiagonalState::single_photon_mixture(purity)?;
    let adc = cfg.adc.spec()?;
    synth_condition(
        &state,
        envelope,
        cfg.frames_per_condition,
        &cfg.imperfections,
        adc.as_ref(),
        &cfg.frame_window(),
        derive_seed(cfg.seed, index as u64),
    )
}

/// Purity of each condition at release, from the config or the simulated
/// memory lifetime.
pub fn condition_purities(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let lifetime = storage_lifetime(&cfg.cavity, &cfg.release.lifetime_probe())?;
    Ok(configured_purities(cfg, lifetime.tau_ns))
}

/// The frames `run_sweep` synthesizes for condition `index`.
pub fn condition_frames(cfg: &ExperimentConfig, index: usize) -> Result<FrameSet> {
    cfg.validate()?;
    let storage = cfg.storage_times_ns.get(index).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "condition {index} out of range (config has {})",
            cfg.storage_times_ns.len()
        ))
    })?;
    let t_release = storage + cfg.intrinsic_delay_ns;
    let purity = condition_purities(cfg)?[index];
    let rel = simulate_release::<f64>(&cfg.cavity, &cfg.release.schedule(t_release))?;
    frames_for(cfg, index, purity, &rel.envelope)
}

fn shifted_estimate(
    cfg: &ExperimentConfig,
    reference: &ModeFunction<f64>,
    t_ref: f64,
    run: &ConditionRun,
) -> Result<FixedModeEstimate> {
    let fs = run
        .frames
        .as_ref()
        .ok_or_else(|| Error::DegenerateInput("no frames".into()))?;
    let tomo = run
        .report
        .tomography
        .as_ref()
        .ok_or_else(|| Error::DegenerateInput("no estimate".into()))?;
    let mode = time_shift(reference, run.report.release_time_ns - t_ref)?;
    let x = fs.extract_all(&mode)?;
    let table = LikelihoodTable::new(&x, cfg.n_max)?;
    let fit = table.fit(&table.default_starts(), &NelderMead::default())?;
    Ok(FixedModeEstimate {
        c: fit.state.probabilities().to_vec(),
        purity: fit.state.prob(1),
        loglik: fit.loglik,
        overlap_with_pca: overlap_sq(&mode, &tomo.mode)?,
    })
}

/// Runs every condition (in parallel), then both decay fits. Per-condition
/// failures are recorded and do not stop the sweep.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let lifetime = storage_lifetime(&cfg.cavity, &cfg.release.lifetime_probe())?;
    let purities = configured_purities(cfg, lifetime.tau_ns);
    let mut runs: Vec<ConditionRun> = (0..cfg.storage_times_ns.len())
        .into_par_iter()
        .map(|k| run_condition(cfg, k, purities[k]))
        .collect();

    let mut errors = Vec::new();
    let reference =
        runs[0].report.tomography.as_ref().map(|t| {
            clip_and_renormalize(&t.mode, cfg.shifted.clip_start_ns, cfg.shifted.clip_end_ns)
        });
    match reference {
        Some(Ok(reference)) => {
            let t_ref = runs[0].report.release_time_ns;
            let shifted: Vec<Option<Result<FixedModeEstimate>>> = runs
                .par_iter()
                .map(|r| {
                    r.report
                        .tomography
                        .as_ref()
                        .map(|_| shifted_estimate(cfg, &reference, t_ref, r))
                })
                .collect();
            for (run, s) in runs.iter_mut().zip(shifted) {
                match s {
                    Some(Ok(est)) => run.report.shifted = Some(est),
                    Some(Err(e)) => errors.push(format!(
                        "condition {}: shifted analysis: {e}",
                        run.report.index
                    )),
                    None => {}
                }
            }
        }
        Some(Err(e)) => errors.push(format!("shifted reference mode: {e}")),
        None => errors.push("shifted analysis skipped: first condition failed".into()),
    }
    let conditions: Vec<ConditionReport> = runs.into_iter().map(|r| r.report).collect();

    let raw: Vec<(f64, f64)> = conditions
        .iter()
        .filter_map(|c| c.tomography.as_ref().map(|t| (c.release_time_ns, t.purity)))
        .collect();
    let shifted: Vec<(f64, f64)> = conditions
        .iter()
        .filter_map(|c| c.shifted.as_ref().map(|s| (c.release_time_ns, s.purity)))
        .collect();
    let mut fit = |name: &str, pts: &[(f64, f64)]| match fit_exponential_decay(pts) {
        Ok(f) => Some(f),
        Err(e) => {
            errors.push(format!("{name} decay fit: {e}"));
            None
        }
    };
    let raw_fit = fit("raw", &raw);
    let shifted_fit = fit("shifted", &shifted);

    Ok(SweepReport {
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: cfg.hash()?,
            seed: cfg.seed,
            condition_seeds: conditions.iter().map(|c| c.frame_seed).collect(),
            simulated_lifetime_ns: lifetime.tau_ns,
            config: cfg.clone(),
        },
        conditions,
        raw_fit,
        shifted_fit,
        errors,
    })
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv<F: FnOnce(&mut Vec<u8>) -> Result<()>>(f: F) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn on_grid(m: &ModeFunction<f64>, t0: f64, n: usize, dt: f64) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let i = ((t0 + j as f64 * dt - m.t0()) / dt).round();
            if i >= 0.0 && (i as usize) < m.len() {
                m.samples()[i as usize]
            } else {
                0.0
            }
        })
        .collect()
}

/// Per successful condition `k`: `condition_k_{envelope,histogram,wigner,photon_number}.csv`;
/// sweep level: `sweep_envelopes.csv` and `sweep_decay.csv`.
pub fn emit_figure_data(report: &SweepReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let cfg = &report.provenance.config;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
        Ok(())
    };

    for c in &report.conditions {
        let (Some(tomo), Some(env)) = (&c.tomography, &c.envelope) else {
            continue;
        };
        let k = c.index;
        let mode = &tomo.mode;
        let sim = on_grid(env, mode.t0(), mode.len(), mode.dt());
        put(
            format!("condition_{k}_envelope.csv"),
            csv(|w| {
                writeln!(w, "t_ns,psi_sim,psi_pca")?;
                for (i, (s, p)) in sim.iter().zip(mode.samples()).enumerate() {
                    writeln!(w, "{},{s},{p}", mode.time(i))?;
                }
                Ok(())
            })?,
        )?;
        put(
            format!("condition_{k}_histogram.csv"),
            csv(|w| tomo.histogram.write_csv(w))?,
        )?;
        let state = tomo.state()?;
        let section = wigner_section(&state, cfg.figures.wigner_extent, cfg.figures.wigner_points);
        put(
            format!("condition_{k}_wigner.csv"),
            csv(|w| section.write_csv(w))?,
        )?;
        put(
            format!("condition_{k}_photon_number.csv"),
            csv(|w| state.write_csv(w))?,
        )?;
    }

    let ok: Vec<&ConditionReport> = report
        .conditions
        .iter()
        .filter(|c| c.envelope.is_some())
        .collect();
    if let Some(first) = ok.first().and_then(|c| c.envelope.as_ref()) {
        let (t0, dt) = (first.t0(), first.dt());
        let n = ok
            .iter()
            .filter_map(|c| c.envelope.as_ref())
            .map(|e| e.len())
            .max()
            .unwrap_or(0);
        let cols: Vec<Vec<f64>> = ok
            .iter()
            .map(|c| {
                on_grid(c.envelope.as_ref().unwrap(), t0, n, dt)
                    .iter()
                    .map(|x| x * x / dt)
                    .collect()
            })
            .collect();
        put(
            "sweep_envelopes.csv".into(),
            csv(|w| {
                let names: Vec<String> = ok
                    .iter()
                    .map(|c| format!("release_{}ns", c.release_time_ns))
                    .collect();
                writeln!(w, "t_ns,{}", names.join(","))?;
                for i in 0..n {
                    let row: Vec<String> = cols.iter().map(|col| col[i].to_string()).collect();
                    writeln!(w, "{},{}", t0 + i as f64 * dt, row.join(","))?;
                }
                Ok(())
            })?,
        )?;
    }

    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    put(
        "sweep_decay.csv".into(),
        csv(|w| {
            writeln!(w, "t_ns,purity,purity_err,fit,shifted_purity,shifted_fit")?;
            for c in &report.conditions {
                let t = c.release_time_ns;
                let tomo = c.tomography.as_ref();
                writeln!(
                    w,
                    "{t},{},{},{},{},{}",
                    fmt(tomo.map(|x| x.purity)),
                    fmt(tomo.map(|x| x.purity_err)),
                    fmt(report.raw_fit.as_ref().map(|f| f.predict(t))),
                    fmt(c.shifted.as_ref().map(|s| s.purity)),
                    fmt(report.shifted_fit.as_ref().map(|f| f.predict(t))),
                )?;
            }
            Ok(())
        })?,
    )?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_per_index() {
        let s: Vec<u64> = (0..4).map(|k| derive_seed(7, k)).collect();
        assert!(s.windows(2).all(|w| w[0] != w[1]));
        assert_eq!(derive_seed(7, 2), s[2]);
        assert_ne!(derive_seed(8, 0), s[0]);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert!(!dir.path().join("a.txt.tmp").exists());
    }
}
