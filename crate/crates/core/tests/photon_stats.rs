use photon_memory::homodyne::frame_rng;
use photon_memory::photon_stats::{
    detection_density, detection_vs_homodyne, ensemble_mode, g2_from_counts, jitter_decohered,
    poisson_clicks, thin, ClickRecord, HeraldedSource, JitterKernel, TauBins,
};
use photon_memory::{Error, Mode};

fn wide_mode() -> Mode {
    Mode::gaussian(-600.0, 1.0, 1200, 0.0, 50.0).unwrap()
}

/// `∫ p(τ) |(φ_τ, φ)|² dτ` for a Gaussian amplitude of rms width `s` and a
/// Gaussian kernel of width `sigma`: `s / √(s² + σ²)`.
fn gaussian_jitter_purity(s: f64, sigma: f64) -> f64 {
    s / (s * s + sigma * sigma).sqrt()
}

#[test]
fn jitter_lowers_purity_monotonically_and_matches_the_closed_form() {
    let phi = wide_mode();
    let s = 50.0 / (2.0 * std::f64::consts::LN_2.sqrt());
    let mut last = f64::INFINITY;
    for sigma in [0.0, 10.0, 25.0, 50.0] {
        let kernel = if sigma == 0.0 {
            JitterKernel::delta(1.0)
        } else {
            JitterKernel::gaussian(sigma, 1.0).unwrap()
        };
        let out = jitter_decohered(&phi, &kernel, &phi).unwrap();
        let oracle = gaussian_jitter_purity(s, sigma);
        assert!(
            (out.purity - oracle).abs() < 2e-3,
            "sigma {sigma}: {} vs {oracle}",
            out.purity
        );
        assert!((out.density.integral() - 1.0).abs() < 1e-9);
        assert!(out.purity < last || sigma == 0.0);
        last = out.purity;
    }
}

#[test]
fn jittered_ensemble_mode_beats_the_unjittered_reference() {
    let phi = wide_mode();
    let kernel = JitterKernel::gaussian(25.0, 1.0).unwrap();
    let (mode, best) = ensemble_mode(&phi, &kernel).unwrap();
    let in_phi = jitter_decohered(&phi, &kernel, &phi).unwrap().purity;
    let in_best = jitter_decohered(&phi, &kernel, &mode).unwrap().purity;
    assert!((in_best - best).abs() < 1e-9);
    assert!(best >= in_phi && best < 1.0);
}

#[test]
fn photon_counting_cannot_see_what_homodyne_sees() {
    let c =
        detection_vs_homodyne(&wide_mode(), &JitterKernel::gaussian(25.0, 1.0).unwrap()).unwrap();
    let peak = c.pure_density.values.iter().cloned().fold(0.0, f64::max);
    assert!(c.max_density_difference <= 1e-12 * peak.max(1.0));
    assert!((c.pure_purity - 1.0).abs() < 1e-12);
    assert!(c.mixed_purity < 0.95 && c.mixed_best_purity < 1.0);
}

#[test]
fn detection_density_integrates_to_p_eta() {
    let psi = wide_mode();
    for (p, eta) in [(1.0, 1.0), (0.582, 0.3), (0.0, 0.7)] {
        let d = detection_density(p, eta, &psi).unwrap();
        assert!((d.integral() - p * eta).abs() < 1e-12);
    }
    assert!(detection_density(1.2, 1.0, &psi).is_err());
}

#[test]
fn kernel_pushing_the_mode_out_of_its_window_is_rejected() {
    let phi = Mode::gaussian(-100.0, 1.0, 200, 0.0, 50.0).unwrap();
    let kernel = JitterKernel::new(vec![150.0], vec![1.0], 1.0).unwrap();
    assert!(matches!(
        jitter_decohered(&phi, &kernel, &phi),
        Err(Error::InvalidArgument(_))
    ));
}

const BINS: TauBins = TauBins {
    width_ns: 20.0,
    max_ns: 200.0,
};

#[test]
fn independent_poisson_streams_are_uncorrelated_before_and_after_loss() {
    let t = 1e8;
    let (mut ra, mut rb) = (frame_rng(301, 0), frame_rng(301, 1));
    let a = poisson_clicks(5e-4, t, &mut ra).unwrap();
    let b = poisson_clicks(5e-4, t, &mut rb).unwrap();
    let full = g2_from_counts(
        &ClickRecord {
            a: a.clone(),
            b: b.clone(),
            duration_ns: t,
        },
        &BINS,
    )
    .unwrap();
    let lossy = g2_from_counts(
        &ClickRecord {
            a: thin(&a, 0.4, &mut ra),
            b: thin(&b, 0.4, &mut rb),
            duration_ns: t,
        },
        &BINS,
    )
    .unwrap();
    for g in [&full, &lossy] {
        for (v, e) in g.g2.iter().zip(&g.err) {
            assert!((v - 1.0).abs() <= 4.0 * e, "g2 {v} +- {e}");
        }
    }
    let (g0, e0) = full.at(0.0);
    let (l0, le0) = lossy.at(0.0);
    assert!((g0 - l0).abs() <= 4.0 * e0.hypot(le0));
}

#[test]
fn heralded_clicks_are_seed_deterministic_and_loss_invariant() {
    let mode = Mode::gaussian(-100.0, 1.0, 300, 0.0, 50.0).unwrap();
    let src = |efficiency| HeraldedSource {
        trial_rate_per_ns: 1e-3,
        purity: 0.582,
        efficiency,
        mode: &mode,
    };
    let r1 = src(1.0).simulate(5e7, 9).unwrap();
    assert_eq!(r1, src(1.0).simulate(5e7, 9).unwrap());
    let total = (r1.a.len() + r1.b.len()) as f64;
    let expected = 1e-3 * 5e7 * 0.582;
    assert!((total - expected).abs() < 5.0 * expected.sqrt());

    let r2 = src(0.5).simulate(5e7, 10).unwrap();
    let (g1, g2) = (
        g2_from_counts(&r1, &BINS).unwrap(),
        g2_from_counts(&r2, &BINS).unwrap(),
    );
    for i in 0..g1.g2.len() {
        assert!((g1.g2[i] - g2.g2[i]).abs() <= 4.0 * g1.err[i].hypot(g2.err[i]));
    }
}

#[test]
fn g2_refuses_sparse_records() {
    let r = ClickRecord {
        a: vec![1.0; 50],
        b: vec![2.0; 500],
        duration_ns: 1e6,
    };
    assert!(matches!(
        g2_from_counts(&r, &BINS),
        Err(Error::InsufficientData(_))
    ));
    let empty = ClickRecord {
        a: vec![],
        b: vec![2.0; 500],
        duration_ns: 1e6,
    };
    assert!(matches!(
        g2_from_counts(&empty, &BINS),
        Err(Error::InsufficientData(_))
    ));
}
