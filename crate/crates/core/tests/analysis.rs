use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use shuttlesim_core::analysis::{lm, single_tone_model, two_tone_model};
use shuttlesim_core::spinsim::PhysicalConstants;
use shuttlesim_core::{
    fit_gaussian_decay, fit_narrowing, fit_single_tone, fit_two_tone, frequency_ratio_report, t2_epr_model,
    DephasingModelParams, Error, FieldScan, NarrowingPoint, OscillationData, ScanPoint, ToneFit,
};

fn grid(n: usize, step_ns: f64) -> Vec<f64> {
    (0..n).map(|k| k as f64 * step_ns).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

#[test]
fn two_tone_round_trip() {
    let t = grid(151, 10.0);
    let y: Vec<f64> = t
        .iter()
        .map(|&t| two_tone_model(t, 565.0, [(0.25, 5.0, 0.3), (0.25, 7.29, -1.1)], 0.5))
        .collect();
    let fit = fit_two_tone(&OscillationData::new(t, y, None).unwrap()).unwrap();
    let ToneFit::Two(f) = fit else { panic!("fell back: {fit:?}") };
    assert!(rel(f.t2_star_ns, 565.0) < 1e-3);
    assert!(rel(f.nu_lt_mhz, 5.0) < 1e-3);
    assert!(rel(f.nu_gt_mhz, 7.29) < 1e-3);
    assert!(rel(f.a_lt, 0.25) < 1e-3);
    assert!(rel(f.a_gt, 0.25) < 1e-3);
    assert!(rel(f.c, 0.5) < 1e-3);
    assert!((f.phi_lt_rad - 0.3).abs() < 1e-3);
    assert!((f.phi_gt_rad + 1.1).abs() < 1e-3);
    assert_eq!(f.covariance.len(), 8);
    assert!(f.cost_trace.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn tone_order_in_the_generator_does_not_matter() {
    let t = grid(151, 10.0);
    let a: Vec<f64> = t
        .iter()
        .map(|&t| two_tone_model(t, 700.0, [(0.2, 4.0, 0.1), (0.3, 6.5, 2.0)], 0.45))
        .collect();
    let b: Vec<f64> = t
        .iter()
        .map(|&t| two_tone_model(t, 700.0, [(0.3, 6.5, 2.0), (0.2, 4.0, 0.1)], 0.45))
        .collect();
    let fa = fit_two_tone(&OscillationData::new(t.clone(), a, None).unwrap()).unwrap();
    let fb = fit_two_tone(&OscillationData::new(t, b, None).unwrap()).unwrap();
    assert_eq!(fa, fb);
    let f = fa.frequencies();
    assert!(f[0].0 <= f[1].0);
}

#[test]
fn missing_second_tone_falls_back() {
    let t = grid(151, 10.0);
    let y: Vec<f64> = t
        .iter()
        .map(|&t| two_tone_model(t, 565.0, [(0.5, 7.29, 0.0), (0.0, 5.0, 0.0)], 0.5))
        .collect();
    let fit = fit_two_tone(&OscillationData::new(t, y, None).unwrap()).unwrap();
    assert!(fit.is_fallback());
    let nu = fit.frequencies();
    assert_eq!(nu.len(), 1);
    assert!(rel(nu[0].0, 7.29) < 5e-3);
}

#[test]
fn single_tone_round_trip_at_paper_values() {
    let t = grid(120, 12.5);
    let y: Vec<f64> = t.iter().map(|&t| single_tone_model(t, 0.4, 7.29, 0.2, 0.5, 565.0)).collect();
    let f = fit_single_tone(&OscillationData::new(t, y, None).unwrap()).unwrap();
    assert!(rel(f.nu_mhz, 7.29) < 1e-3);
    assert!(rel(f.t2_star_ns, 565.0) < 1e-3);
    assert!(rel(f.a, 0.4) < 1e-3);
    assert!((f.phi_rad - 0.2).abs() < 1e-3);
    assert!(f.phi_rad > -std::f64::consts::PI && f.phi_rad <= std::f64::consts::PI);
    assert!(f.cost_trace.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn constant_data_fits_zero_visibility() {
    let t = grid(100, 10.0);
    let y = vec![0.62; t.len()];
    let f = fit_single_tone(&OscillationData::new(t, y, None).unwrap()).unwrap();
    assert!(f.a.abs() < 1e-6, "{}", f.a);
    assert!((f.c - 0.62).abs() < 1e-6);
}

#[test]
fn noisy_fits_cover_the_truth() {
    let t = grid(120, 12.5);
    let truth: Vec<f64> = t.iter().map(|&t| single_tone_model(t, 0.4, 7.29, 0.0, 0.5, 565.0)).collect();
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let trials = 200;
    let (mut covered, mut within3) = (0, 0);
    for _ in 0..trials {
        let y: Vec<f64> = truth.iter().map(|v| v + noise.sample(&mut rng)).collect();
        let data = OscillationData::new(t.clone(), y, Some(vec![0.01; t.len()])).unwrap();
        let f = fit_single_tone(&data).unwrap();
        let z = (f.nu_mhz - 7.29).abs() / f.nu_err_mhz;
        covered += usize::from(z < 1.0);
        within3 += usize::from(z < 3.0);
    }
    let coverage = covered as f64 / trials as f64;
    assert!((coverage - 0.68).abs() < 0.1, "{coverage}");
    assert!(within3 as f64 / trials as f64 > 0.97);
}

#[test]
fn levenberg_marquardt_cost_never_increases() {
    let x: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
    let y: Vec<f64> = x.iter().map(|x| 3.0 * (-0.7 * x).exp() + 0.2).collect();
    let model = |p: &[f64], out: &mut [f64]| {
        for (o, x) in out.iter_mut().zip(&x) {
            *o = p[0] * (-p[1] * x).exp() + p[2];
        }
    };
    let fit = lm::levenberg_marquardt(model, &y, &vec![1.0; y.len()], &[1.0, 3.0, 0.0], &lm::LmOptions::default())
        .unwrap();
    assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));
    assert!(rel(fit.params[0], 3.0) < 1e-8 && rel(fit.params[1], 0.7) < 1e-8);
}

#[test]
fn gaussian_decay_round_trip() {
    let t = grid(80, 20.0);
    let y: Vec<f64> = t.iter().map(|t| 0.5 * (-(t / 900.0f64).powi(2)).exp() + 0.5).collect();
    let f = fit_gaussian_decay(&OscillationData::new(t, y, None).unwrap()).unwrap();
    assert!(rel(f.t2_star_ns, 900.0) < 1e-6);
}

fn paper_points(stderr: Option<f64>) -> Vec<NarrowingPoint> {
    let p = DephasingModelParams::new(1110.0, 520.0, 13.0).unwrap();
    [0.0, 5.0, 10.0, 20.0, 40.0, 70.0, 110.0, 160.0, 220.0, 280.0, 336.0]
        .iter()
        .map(|&d| NarrowingPoint {
            d_nm: d,
            t2_ns: t2_epr_model(&p, d),
            stderr_ns: stderr,
        })
        .collect()
}

#[test]
fn narrowing_round_trip() {
    for err in [None, Some(10.0)] {
        let f = fit_narrowing(&paper_points(err)).unwrap();
        assert!(rel(f.t2l_ns, 1110.0) < 0.01, "{f:?}");
        assert!(rel(f.t2r_ns, 520.0) < 0.01);
        assert!(rel(f.lc_nm, 13.0) < 0.01);
        assert!(f.lc_identifiable);
        assert_eq!(f.covariance.len(), 3);
    }
}

#[test]
fn flat_curve_leaves_correlation_length_unidentified() {
    let pts: Vec<_> = [0.0, 10.0, 50.0, 100.0, 200.0, 336.0]
        .iter()
        .map(|&d| NarrowingPoint {
            d_nm: d,
            t2_ns: 1110.0,
            stderr_ns: Some(20.0),
        })
        .collect();
    let f = fit_narrowing(&pts).unwrap();
    assert!(!f.lc_identifiable);
    assert!(rel(f.t2l_ns, 1110.0) < 1e-3);
}

#[test]
fn narrowing_needs_distinct_distances() {
    let pts: Vec<_> = (0..6)
        .map(|_| NarrowingPoint {
            d_nm: 50.0,
            t2_ns: 700.0,
            stderr_ns: None,
        })
        .collect();
    assert!(matches!(fit_narrowing(&pts), Err(Error::DegenerateDesign(_))));
}

#[test]
fn fitted_paper_parameters_give_the_shuttled_time() {
    let f = fit_narrowing(&paper_points(None)).unwrap();
    let t2s = f.params().t2_shuttled(280.0);
    assert!((t2s - 2469.0).abs() < 25.0);
    assert!((t2s - 2460.0).abs() < 310.0);
}

/// Frequency (MHz) of constant Δg and ΔE_hf at field `b`.
fn nu(dg: f64, hf_nev: f64, b: f64) -> f64 {
    (dg * PhysicalConstants::MU_B * b + hf_nev * 1e-9) / PhysicalConstants::H / 1e6
}

fn scan(dg: f64, hf: f64, b: f64) -> FieldScan {
    let t = grid(160, 10.0);
    let points = [0.0, 100.0, 280.0]
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            let f = nu(dg * (1.0 + 0.01 * k as f64), hf, b);
            let y: Vec<f64> = t.iter().map(|&t| single_tone_model(t, 0.4, f, 0.0, 0.5, 800.0)).collect();
            let fit = fit_two_tone(&OscillationData::new(t.clone(), y, None).unwrap()).unwrap();
            ScanPoint::from_fit(d, &fit)
        })
        .collect();
    FieldScan { b_t: b, points }
}

#[test]
fn ratios_without_hyperfine_are_three_quarters() {
    let rows = frequency_ratio_report(&scan(6.51e-4, 0.0, 0.6), &scan(6.51e-4, 0.0, 0.8)).unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert!((r.ratio - 0.75).abs() < 1e-6, "{r:?}");
    }
}

#[test]
fn hyperfine_offset_shifts_ratios_analytically() {
    let (dg, hf) = (6.51e-4, 3.0);
    let rows = frequency_ratio_report(&scan(dg, hf, 0.6), &scan(dg, hf, 0.8)).unwrap();
    for (k, r) in rows.iter().enumerate() {
        let g = dg * (1.0 + 0.01 * k as f64);
        let want = nu(g, hf, 0.6) / nu(g, hf, 0.8);
        assert!((r.ratio - want).abs() < 1e-6, "{} vs {want}", r.ratio);
        assert!((r.ratio - 0.75).abs() > 0.01);
    }
}
