//! `pmem`: command-line front end for the storage-and-release pipeline.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use photon_memory::acceptance;
use photon_memory::cavity::{simulate_release, storage_lifetime};
use photon_memory::config::ExperimentConfig;
use photon_memory::homodyne::FrameSet;
use photon_memory::pipeline::{
    condition_frames, emit_figure_data, estimate_frames, run_sweep, write_atomic, EstimateOptions,
};
use photon_memory::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_STAGE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "pmem",
    version,
    about = "Simulate photon storage and release in coupled cavities and verify it by homodyne tomography",
    after_help = "Exit status: 0 on success, 1 when a stage fails, 2 on a usage or config error."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cavity dynamics only: release envelopes and the memory lifetime
    Simulate(Common),
    /// Synthesize the homodyne frames of one condition
    Synth {
        #[command(flatten)]
        common: Common,
        /// Condition index into storage_times_ns
        #[arg(long, default_value_t = 0)]
        condition: usize,
    },
    /// Tomography of a frame file written by `synth`
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Frame file (binary format written by `synth`)
        #[arg(long)]
        input: PathBuf,
        /// Condition whose release time sets the analysis window
        #[arg(long, default_value_t = 0)]
        condition: usize,
    },
    /// Full storage-time sweep: report.json plus figure data
    Sweep(Common),
    /// Run the acceptance checks and print a pass/fail table
    Gate {
        /// Output directory for gate.json
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Run only these criteria (1 to 8)
        #[arg(long, value_delimiter = ',', value_name = "IDS")]
        only: Vec<u8>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config file; built-in defaults when omitted
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides the config)
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Output directory (overrides the config)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Frames per condition (overrides the config)
    #[arg(long, value_name = "M")]
    frames: Option<usize>,
    /// Digitizer resolution; enables the ADC
    #[arg(long, value_name = "BITS")]
    adc_bits: Option<u32>,
    /// Digitizer half-range in quadrature units; enables the ADC
    #[arg(long, value_name = "F")]
    full_scale: Option<f64>,
}

enum Failure {
    Usage(String),
    Stage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Stage(e.to_string()),
        }
    }
}

type Outcome = std::result::Result<i32, Failure>;

impl Common {
    fn load(&self) -> std::result::Result<(ExperimentConfig, PathBuf), Failure> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
                Error::Io(io) => Failure::Usage(format!("cannot read {}: {io}", p.display())),
                other => Failure::Usage(other.to_string()),
            })?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.frames {
            cfg.frames_per_condition = m;
        }
        if let Some(b) = self.adc_bits {
            cfg.adc.enabled = true;
            cfg.adc.bits = b;
        }
        if let Some(f) = self.full_scale {
            cfg.adc.enabled = true;
            cfg.adc.full_scale = f;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.to_string_lossy().into_owned();
        }
        cfg.validate()
            .and_then(|_| cfg.adc.spec().map(|_| ()))
            .map_err(|e| Failure::Usage(e.to_string()))?;
        let out = PathBuf::from(&cfg.output_dir);
        std::fs::create_dir_all(&out).map_err(|e| Failure::Stage(e.to_string()))?;
        Ok((cfg, out))
    }
}

fn check_condition(cfg: &ExperimentConfig, k: usize) -> std::result::Result<(), Failure> {
    if k >= cfg.storage_times_ns.len() {
        return Err(Failure::Usage(format!(
            "--condition {k} out of range: the config has {} storage times",
            cfg.storage_times_ns.len()
        )));
    }
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> std::result::Result<(), Failure> {
    write_atomic(path, bytes).map_err(|e| Failure::Stage(e.to_string()))
}

fn simulate(c: &Common) -> Outcome {
    let (cfg, out) = c.load()?;
    let lifetime = storage_lifetime(&cfg.cavity, &cfg.release.lifetime_probe())?;
    println!("memory lifetime {:.1} ns", lifetime.tau_ns);
    let mut releases = Vec::new();
    for (k, t) in cfg.release_times().into_iter().enumerate() {
        let r = simulate_release::<f64>(&cfg.cavity, &cfg.release.schedule(t))?;
        let mut csv = Vec::new();
        r.write_csv(&mut csv)?;
        write(&out.join(format!("release_{k}.csv")), &csv)?;
        println!(
            "release {t} ns: peak {:.1} ns, FWHM {:.1} ns, pre-leak {:.4}",
            r.metrics.peak_time_ns, r.metrics.fwhm_ns, r.metrics.preleak_fraction
        );
        releases.push(json!({ "release_time_ns": t, "metrics": r.metrics }));
    }
    let summary = json!({ "lifetime": lifetime, "releases": releases });
    write(
        &out.join("simulate.json"),
        serde_json::to_string_pretty(&summary)
            .map_err(|e| Failure::Stage(e.to_string()))?
            .as_bytes(),
    )?;
    Ok(EXIT_OK)
}

fn synth(c: &Common, k: usize) -> Outcome {
    let (cfg, out) = c.load()?;
    check_condition(&cfg, k)?;
    let fs = condition_frames(&cfg, k)?;
    let path = out.join(format!("frames_{k}.bin"));
    let mut bytes = Vec::new();
    fs.write_binary(&mut bytes)?;
    write(&path, &bytes)?;
    println!(
        "{} frames x {} samples -> {}",
        fs.n_frames(),
        fs.n_samples(),
        path.display()
    );
    Ok(EXIT_OK)
}

fn estimate(c: &Common, input: &Path, k: usize) -> Outcome {
    let (cfg, out) = c.load()?;
    check_condition(&cfg, k)?;
    let file = File::open(input)
        .map_err(|e| Failure::Usage(format!("cannot open {}: {e}", input.display())))?;
    let fs = FrameSet::read_binary(BufReader::new(file))?;
    let t_release = cfg.release_times()[k];
    let report = estimate_frames(&fs, &EstimateOptions::from_config(&cfg, t_release))?;
    println!(
        "c1 = {:.4} +- {:.4}, W(0) = {:.4}",
        report.purity, report.purity_err, report.wigner_origin
    );
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Stage(e.to_string()))?;
    write(&out.join("estimate.json"), text.as_bytes())?;
    Ok(EXIT_OK)
}

fn sweep(c: &Common) -> Outcome {
    let (cfg, out) = c.load()?;
    let report = run_sweep(&cfg)?;
    write(&out.join("report.json"), report.to_json()?.as_bytes())?;
    emit_figure_data(&report, &out)?;
    for cond in &report.conditions {
        match (&cond.tomography, &cond.error) {
            (Some(t), _) => println!(
                "release {} ns: c1 = {:.4} +- {:.4} (configured {:.3})",
                cond.release_time_ns, t.purity, t.purity_err, cond.configured_purity
            ),
            (None, e) => println!(
                "release {} ns: failed: {}",
                cond.release_time_ns,
                e.as_deref().unwrap_or("unknown")
            ),
        }
    }
    if let Some(f) = &report.raw_fit {
        println!("decay fit: P0 = {:.4}, tau = {:.3} us", f.p0, f.tau_us);
    }
    if let Some(f) = &report.shifted_fit {
        println!("shifted fit: P0 = {:.4}, tau = {:.3} us", f.p0, f.tau_us);
    }
    for e in &report.errors {
        eprintln!("sweep: {e}");
    }
    Ok(if report.has_failures() {
        EXIT_STAGE
    } else {
        EXIT_OK
    })
}

fn gate(out: Option<&Path>, only: &[u8]) -> Outcome {
    let ids: Vec<u8> = if only.is_empty() {
        acceptance::CRITERIA.iter().map(|c| c.0).collect()
    } else {
        only.to_vec()
    };
    let mut results = Vec::new();
    for id in ids {
        let o = acceptance::run(id).map_err(|e| Failure::Usage(e.to_string()))?;
        println!("{}", o.line());
        results.push(o);
    }
    let passed = results.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria passed", results.len());
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Stage(e.to_string()))?;
        let doc = json!({ "passed": passed == results.len(), "criteria": results });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::Stage(e.to_string()))?;
        write(&dir.join("gate.json"), text.as_bytes())?;
    }
    Ok(if passed == results.len() {
        EXIT_OK
    } else {
        EXIT_STAGE
    })
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Synth { common, condition } => synth(common, *condition),
        Command::Estimate {
            common,
            input,
            condition,
        } => estimate(common, input, *condition),
        Command::Sweep(c) => sweep(c),
        Command::Gate { out, only } => gate(out.as_deref(), only),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Stage(m)) => {
            eprintln!("error: {m}");
            EXIT_STAGE
        }
    }
}
