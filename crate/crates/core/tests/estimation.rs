use photon_memory::estimation::{
    bootstrap_purity, bootstrap_quadratures, fit_exponential_decay, histogram_with_overlay,
    mle_photon_distribution, pca_in_basis, AnalysisBasis, DecayFit,
};
use photon_memory::fock::FockSampler;
use photon_memory::homodyne::{
    frame_rng, synth_condition, FrameSet, FrameWindow, ImperfectionConfig,
};
use photon_memory::modes::overlap_sq;
use photon_memory::{Error, FockState, Mode};

fn psi() -> Mode {
    Mode::gaussian(-100.0, 1.0, 200, 0.0, 50.0).unwrap()
}

fn frames(p: f64, m: usize, seed: u64) -> FrameSet {
    let window = FrameWindow {
        t0_ns: -100.0,
        n_samples: 200,
        dt_ns: 1.0,
    };
    let state = FockState::single_photon_mixture(p).unwrap();
    synth_condition(
        &state,
        &psi(),
        m,
        &ImperfectionConfig::default(),
        None,
        &window,
        seed,
    )
    .unwrap()
}

fn quadratures(state: &FockState, m: usize, seed: u64) -> Vec<f64> {
    let sampler = FockSampler::new(state);
    let mut rng = frame_rng(seed, 0);
    (0..m).map(|_| sampler.sample(&mut rng)).collect()
}

#[test]
fn split_half_pca_modes_agree() {
    let fs = frames(0.582, 43_000, 201);
    let basis = AnalysisBasis::<f64>::band_limited(-100.0, 100.0, 1.0, Some(60.0)).unwrap();
    let half = fs.n_frames() / 2;
    let a = pca_in_basis(&fs.select(&(0..half).collect::<Vec<_>>()), &basis).unwrap();
    let b = pca_in_basis(
        &fs.select(&(half..fs.n_frames()).collect::<Vec<_>>()),
        &basis,
    )
    .unwrap();
    assert!(overlap_sq(&a.mode, &b.mode).unwrap() >= 0.99);
    for r in [&a, &b] {
        assert!(overlap_sq(&r.mode, &psi()).unwrap() >= 0.99);
        assert!(!r.degenerate);
        assert!(!r.below_vacuum(1e-3));
    }
}

#[test]
fn mle_is_stable_across_truncations_and_scalars() {
    let x = quadratures(
        &FockState::single_photon_mixture(0.582).unwrap(),
        43_000,
        202,
    );
    let fits: Vec<f64> = [2, 3, 5, 8]
        .iter()
        .map(|&n| mle_photon_distribution(&x, n).unwrap().state.prob(1))
        .collect();
    for c1 in &fits {
        // Sampling sd of c1 at this size is about 0.0045.
        assert!((c1 - 0.582).abs() <= 0.0135, "c1 {c1}");
        assert!((c1 - fits[2]).abs() <= 0.005);
    }
    let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
    let c32 = mle_photon_distribution(&x32, 5).unwrap().state.prob(1) as f64;
    assert!(
        (c32 - fits[2]).abs() <= 1e-3,
        "f32 {c32} vs f64 {}",
        fits[2]
    );
}

#[test]
fn mle_likelihood_is_maximal_along_the_simplex() {
    let x = quadratures(&FockState::single_photon_mixture(0.3).unwrap(), 5_000, 203);
    let fit = mle_photon_distribution(&x, 3).unwrap();
    assert!(fit.converged);
    let table = photon_memory::estimation::LikelihoodTable::new(&x, 3).unwrap();
    let best = table.loglik(fit.state.probabilities());
    assert!((best - fit.loglik).abs() <= 1e-9 * best.abs());
    let c = fit.state.probabilities().to_vec();
    for (i, j) in [(0, 1), (1, 0), (1, 2), (0, 3)] {
        let mut d = c.clone();
        let h = 1e-3f64.min(d[i]);
        d[i] -= h;
        d[j] += h;
        assert!(table.loglik(&d) <= best + 1e-9);
    }
}

#[test]
fn bootstrap_size_does_not_change_the_error_much() {
    let fs = frames(0.582, 20_000, 204);
    let b20 = bootstrap_purity(&fs, &psi(), 20, 5, 11).unwrap();
    let b100 = bootstrap_purity(&fs, &psi(), 100, 5, 11).unwrap();
    assert_eq!(b100.resamples, 100);
    assert_eq!(b100.failures, 0);
    let rel = (b20.std - b100.std).abs() / b100.std;
    assert!(rel <= 0.5, "B=20 {} vs B=100 {}", b20.std, b100.std);
}

#[test]
fn bootstrap_on_identical_frames_is_unstable() {
    let x = vec![0.25f64; 2_000];
    assert!(matches!(
        bootstrap_quadratures(&x, 20, 5, 1),
        Err(Error::UnstableEstimate(_))
    ));
}

#[test]
fn decay_fit_recovers_exact_exponentials() {
    let pts: Vec<(f64, f64)> = [150.0, 250.0, 350.0, 450.0]
        .iter()
        .map(|&t| (t, 0.6 * (-t / 1500.0f64).exp()))
        .collect();
    let fit = fit_exponential_decay(&pts).unwrap();
    assert!((fit.p0 - 0.6).abs() < 1e-6);
    assert!((fit.tau_us - 1.5).abs() < 1e-5);
    assert!(fit.residuals.iter().all(|r| r.abs() < 1e-8));
    assert!(!fit.non_decreasing && !fit.tau_capped);
    assert!((fit.predict(1000.0) - 0.6 * (-1000.0f64 / 1500.0).exp()).abs() < 1e-6);
}

#[test]
fn decay_fit_reproduces_published_curves() {
    let t = [150.0, 250.0, 350.0, 450.0];
    let check = |p: [f64; 4], p0: f64, tau: f64| {
        let pts: Vec<(f64, f64)> = t.iter().copied().zip(p).collect();
        let f: DecayFit = fit_exponential_decay(&pts).unwrap();
        assert!((f.p0 - p0).abs() <= 0.02, "P0 {}", f.p0);
        assert!((f.tau_us / tau - 1.0).abs() <= 0.1, "tau {}", f.tau_us);
        let json = serde_json::to_value(&f).unwrap();
        assert!(json.get("P0").is_some() && json.get("tau_us").is_some());
    };
    check([0.582, 0.546, 0.531, 0.497], 0.626, 1.98);
    check([0.582, 0.529, 0.499, 0.448], 0.659, 1.19);
}

#[test]
fn histogram_overlay_fits_and_shows_the_central_dip() {
    let m = 43_000;
    let x = quadratures(&FockState::single_photon_mixture(0.582).unwrap(), m, 205);
    let fit = mle_photon_distribution(&x, 5).unwrap();
    let h = histogram_with_overlay(&x, 60, &fit.state).unwrap();
    let (mut chi2, mut dof) = (0.0, 0usize);
    for (d, model) in h.density.iter().zip(&h.model) {
        let expected = model * h.width * m as f64;
        if expected >= 5.0 {
            let observed = d * h.width * m as f64;
            chi2 += (observed - expected).powi(2) / expected;
            dof += 1;
        }
    }
    let dof = (dof - 2) as f64;
    assert!(
        chi2 < dof + 5.0 * (2.0 * dof).sqrt(),
        "chi2 {chi2} over {dof} dof"
    );
    assert!(h.density_at(0.0) < h.density_at(1.0));
    assert!(h.density_at(0.0) < h.density_at(-1.0));
}
