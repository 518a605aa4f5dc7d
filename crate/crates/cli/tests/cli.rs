use std::path::{Path, PathBuf};

use photon_memory::homodyne::FrameSet;
use photon_memory::pipeline::{SweepReport, TomographyReport};
use photon_memory_cli::{run, EXIT_OK, EXIT_STAGE, EXIT_USAGE};

fn smoke() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/smoke.toml")
        .to_string_lossy()
        .into_owned()
}

fn pmem(args: &[&str]) -> i32 {
    run(std::iter::once("pmem").chain(args.iter().copied()))
}

fn out(dir: &Path) -> &str {
    dir.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(pmem(&["sweep", "--frobnicate"]), EXIT_USAGE);
    assert_eq!(pmem(&["teleport"]), EXIT_USAGE);
    assert_eq!(pmem(&["sweep", "--seed", "seven"]), EXIT_USAGE);
    assert_eq!(
        pmem(&["sweep", "--config", "/no/such/file.toml"]),
        EXIT_USAGE
    );
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        pmem(&[
            "sweep",
            "--config",
            &smoke(),
            "--frames",
            "10",
            "--out",
            out(dir.path())
        ]),
        EXIT_USAGE
    );
    assert_eq!(
        pmem(&[
            "synth",
            "--config",
            &smoke(),
            "--condition",
            "4",
            "--out",
            out(dir.path())
        ]),
        EXIT_USAGE
    );
    assert_eq!(pmem(&["--help"]), EXIT_OK);
}

#[test]
fn sweep_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot = || {
        let mut files: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    let args = [
        "sweep",
        "--config",
        &smoke(),
        "--seed",
        "7",
        "--out",
        out(dir.path()),
    ];
    assert_eq!(pmem(&args), EXIT_OK);
    let first = snapshot();
    assert_eq!(first.len(), 4 * 4 + 2 + 1);
    assert_eq!(pmem(&args), EXIT_OK);
    assert!(first == snapshot());
    let report: SweepReport =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.provenance.seed, 7);
}

#[test]
fn staged_synth_and_estimate_match_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let d = out(dir.path());
    assert_eq!(pmem(&["sweep", "--config", &smoke(), "--out", d]), EXIT_OK);
    assert_eq!(
        pmem(&[
            "synth",
            "--config",
            &smoke(),
            "--condition",
            "1",
            "--out",
            d
        ]),
        EXIT_OK
    );
    let frames = dir.path().join("frames_1.bin");
    let fs = FrameSet::read_binary(std::fs::File::open(&frames).unwrap()).unwrap();
    assert_eq!(fs.n_frames(), 2000);
    assert_eq!(
        pmem(&[
            "estimate",
            "--config",
            &smoke(),
            "--condition",
            "1",
            "--input",
            frames.to_str().unwrap(),
            "--out",
            d
        ]),
        EXIT_OK
    );
    let staged: TomographyReport =
        serde_json::from_slice(&std::fs::read(dir.path().join("estimate.json")).unwrap()).unwrap();
    let sweep: SweepReport =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(Some(&staged), sweep.conditions[1].tomography.as_ref());
}

#[test]
fn failing_conditions_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        pmem(&[
            "sweep",
            "--config",
            &smoke(),
            "--frames",
            "100",
            "--out",
            out(dir.path())
        ]),
        EXIT_STAGE
    );
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn simulate_and_gate_write_their_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let d = out(dir.path());
    assert_eq!(
        pmem(&["simulate", "--config", &smoke(), "--out", d]),
        EXIT_OK
    );
    let sim: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("simulate.json")).unwrap()).unwrap();
    assert_eq!(sim["releases"].as_array().unwrap().len(), 4);
    assert!(dir.path().join("release_3.csv").exists());

    assert_eq!(pmem(&["gate", "--only", "1,4,7", "--out", d]), EXIT_OK);
    let gate: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("gate.json")).unwrap()).unwrap();
    assert_eq!(gate["passed"], true);
    assert_eq!(gate["criteria"].as_array().unwrap().len(), 3);
    assert_eq!(pmem(&["gate", "--only", "9"]), EXIT_USAGE);
}
