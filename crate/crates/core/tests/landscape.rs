use shuttlesim_core::landscape::{DisorderSpec, Kernel, LandscapeGenerator, ZeemanLandscape};
use shuttlesim_core::{generate_landscape, Error};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn unit_spec(channel_nm: f64, lc_nm: f64, kernel: Kernel) -> DisorderSpec {
    DisorderSpec {
        grid_step_nm: 1.0,
        channel_length_nm: channel_nm,
        sigma_dg: 1.0,
        mean_dg: 0.0,
        sigma_hf_nev: 1.0,
        mean_hf_nev: 0.0,
        correlation_length_nm: lc_nm,
        kernel,
        seed: 0,
    }
}

/// Variance of the trapezoid mean over nodes 0..=n for unit-variance
/// covariance `k`, summed directly as wᵀCw.
fn windowed_variance_oracle(n: usize, lc: f64, kernel: Kernel) -> f64 {
    let mut w = vec![1.0 / n as f64; n + 1];
    w[0] *= 0.5;
    w[n] *= 0.5;
    let mut total = 0.0;
    for (i, wi) in w.iter().enumerate() {
        for (j, wj) in w.iter().enumerate() {
            total += wi * wj * kernel.correlation(i.abs_diff(j) as f64, lc);
        }
    }
    total
}

#[test]
fn zero_variance_field_is_exactly_constant() {
    let spec = DisorderSpec {
        sigma_dg: 0.0,
        mean_dg: 6.51e-4,
        ..DisorderSpec::default()
    };
    let land = generate_landscape(&spec).unwrap();
    assert!(land.dg_values().iter().all(|&v| v == 6.51e-4));
}

#[test]
fn same_seed_is_bit_identical() {
    let spec = DisorderSpec {
        seed: 99,
        ..unit_spec(500.0, 13.0, Kernel::Exponential)
    };
    let a = generate_landscape(&spec).unwrap();
    let b = generate_landscape(&spec).unwrap();
    assert_eq!(a.dg_values(), b.dg_values());
    assert_eq!(a.hf_values(), b.hf_values());
    assert_ne!(a.dg_values(), a.hf_values());
}

#[test]
fn invalid_specs_are_rejected() {
    for spec in [
        DisorderSpec {
            grid_step_nm: 0.0,
            ..DisorderSpec::default()
        },
        DisorderSpec {
            correlation_length_nm: -1.0,
            ..DisorderSpec::default()
        },
        DisorderSpec {
            sigma_dg: -1e-5,
            ..DisorderSpec::default()
        },
        DisorderSpec {
            channel_length_nm: 0.5,
            ..DisorderSpec::default()
        },
    ] {
        assert!(matches!(generate_landscape(&spec), Err(Error::InvalidParameter { .. })), "{spec:?}");
    }
}

#[test]
fn positions_are_uniform_and_arrays_match() {
    let spec = DisorderSpec {
        grid_step_nm: 0.5,
        channel_length_nm: 100.0,
        ..unit_spec(100.0, 13.0, Kernel::Gaussian)
    };
    let land = generate_landscape(&spec).unwrap();
    let x = land.positions();
    assert_eq!(x.len(), land.dg_values().len());
    assert_eq!(x.len(), land.hf_values().len());
    assert!(x.windows(2).all(|w| (w[1] - w[0] - 0.5).abs() < 1e-12));
}

#[test]
fn interpolation_is_exact_at_nodes_and_midpoints() {
    let land = generate_landscape(&DisorderSpec {
        seed: 5,
        ..unit_spec(50.0, 13.0, Kernel::Exponential)
    })
    .unwrap();
    let (g, h) = (land.dg_values(), land.hf_values());
    for i in 0..50 {
        assert_eq!(land.field_at(i as f64).unwrap(), (g[i], h[i]));
        let (gm, hm) = land.field_at(i as f64 + 0.5).unwrap();
        assert!((gm - 0.5 * (g[i] + g[i + 1])).abs() < 1e-15);
        assert!((hm - 0.5 * (h[i] + h[i + 1])).abs() < 1e-15);
    }
    assert!(matches!(land.field_at(50.5), Err(Error::OutOfRange { .. })));
    assert!(land.field_at(-0.1).is_err());
    assert!(land.window_average(10.0, 41.0).is_err());
}

#[test]
fn ramp_window_average_is_analytic() {
    let spec = unit_spec(1000.0, 13.0, Kernel::Exponential);
    let n = spec.node_count();
    let (a, b) = (3.0e-4, 2.0e-7);
    let dg: Vec<f64> = (0..n).map(|i| a + b * i as f64).collect();
    let land = ZeemanLandscape::from_values(spec, dg, vec![0.0; n]).unwrap();
    for d in [0.3, 1.0, 17.5, 250.0, 999.9] {
        let (avg, _) = land.window_average(0.0, d).unwrap();
        let want = a + b * d / 2.0;
        assert!((avg / want - 1.0).abs() < 1e-12, "d = {d}: {avg} vs {want}");
    }
    assert_eq!(land.window_average(40.0, 0.0).unwrap(), land.field_at(40.0).unwrap());
}

#[test]
fn autocorrelation_at_one_correlation_length() {
    let spec = unit_spec(260.0, 13.0, Kernel::Exponential);
    let gen = LandscapeGenerator::new(&spec).unwrap();
    let lag = 13;
    let (mut acc, mut count) = (0.0, 0usize);
    for r in 0..10_000u64 {
        let f = gen.sample_dg(r);
        for i in 0..f.len() - lag {
            acc += f[i] * f[i + lag];
            count += 1;
        }
    }
    let rho = acc / count as f64;
    let want = (-1.0f64).exp();
    assert!((rho / want - 1.0).abs() < 0.03, "{rho} vs {want}");
}

#[test]
fn windowed_mean_variance_matches_covariance_oracle() {
    let lc = 13.0;
    let d = 200.0 * lc;
    let spec = unit_spec(d, lc, Kernel::Exponential);
    let gen = LandscapeGenerator::new(&spec).unwrap();
    let seeds = 10_000u64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for r in 0..seeds {
        let land = gen.with_fields(gen.sample_dg(r), vec![0.0; spec.node_count()]);
        let (avg, _) = land.window_average(0.0, d).unwrap();
        s1 += avg;
        s2 += avg * avg;
    }
    let mean = s1 / seeds as f64;
    let var = s2 / seeds as f64 - mean * mean;
    let oracle = windowed_variance_oracle(d as usize, lc, Kernel::Exponential);
    assert!((var / oracle - 1.0).abs() < 0.05, "{var} vs {oracle}");
}

#[test]
fn windowed_variance_falls_as_inverse_distance() {
    let lc = 13.0;
    let ds = [130.0, 260.0, 650.0, 1300.0, 2600.0, 6500.0, 13_000.0];
    let spec = unit_spec(13_000.0, lc, Kernel::Exponential);
    let gen = LandscapeGenerator::new(&spec).unwrap();
    let seeds = 2000u64;
    let mut sums = vec![0.0; ds.len()];
    for r in 0..seeds {
        let land = gen.with_fields(gen.sample_dg(r), vec![0.0; spec.node_count()]);
        for (s, d) in sums.iter_mut().zip(ds) {
            let (avg, _) = land.window_average(0.0, d).unwrap();
            *s += avg * avg;
        }
    }
    let var: Vec<f64> = sums.iter().map(|s| s / seeds as f64).collect();
    assert!(var.windows(2).all(|w| w[1] < w[0]), "{var:?}");
    let xs: Vec<f64> = ds.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = var.iter().map(|v| v.ln()).collect();
    let slope = least_squares_slope(&xs, &ys);
    assert!((slope + 1.0).abs() < 0.1, "slope {slope}");
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn field_statistics_are_stationary() {
    let spec = unit_spec(600.0, 13.0, Kernel::Exponential);
    let gen = LandscapeGenerator::new(&spec).unwrap();
    let seeds = 1000usize;
    // 60 nm apart, so the probes are nearly independent
    let probes: Vec<usize> = (0..=10).map(|k| k * 60).collect();
    let mut s1 = vec![0.0; probes.len()];
    let mut s2 = vec![0.0; probes.len()];
    for r in 0..seeds {
        let f = gen.sample_hf(r as u64);
        for (k, &i) in probes.iter().enumerate() {
            s1[k] += f[i];
            s2[k] += f[i] * f[i];
        }
    }
    let n = seeds as f64;
    let mut chi_mean = 0.0;
    let mut chi_var = 0.0;
    for k in 0..probes.len() {
        let m = s1[k] / n;
        let v = (s2[k] - n * m * m) / (n - 1.0);
        chi_mean += m * m * n;
        chi_var += (v - 1.0).powi(2) / (2.0 / (n - 1.0));
    }
    let limit = ChiSquared::new(probes.len() as f64).unwrap().inverse_cdf(0.999);
    assert!(chi_mean < limit, "mean χ² {chi_mean} > {limit}");
    assert!(chi_var < limit, "variance χ² {chi_var} > {limit}");
}

#[test]
fn spatial_mean_converges_to_configured_mean() {
    let spec = DisorderSpec {
        sigma_dg: 2e-5,
        mean_dg: 6.51e-4,
        ..unit_spec(1000.0, 13.0, Kernel::Exponential)
    };
    let gen = LandscapeGenerator::new(&spec).unwrap();
    let means: Vec<f64> = (0..400u64)
        .map(|r| {
            let f = gen.sample_dg(r);
            f.iter().sum::<f64>() / f.len() as f64
        })
        .collect();
    let m = means.iter().sum::<f64>() / means.len() as f64;
    let sd = (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64).sqrt();
    assert!((m - 6.51e-4).abs() < 5.0 * sd / (means.len() as f64).sqrt());
}

#[test]
fn gaussian_kernel_covariance_at_one_correlation_length() {
    let spec = unit_spec(200.0, 13.0, Kernel::Gaussian);
    let gen = LandscapeGenerator::new(&spec).unwrap();
    let (mut acc, mut count) = (0.0, 0usize);
    for r in 0..4000u64 {
        let f = gen.sample_dg(r);
        for i in 0..f.len() - 13 {
            acc += f[i] * f[i + 13];
            count += 1;
        }
    }
    let rho = acc / count as f64;
    assert!((rho / (-1.0f64).exp() - 1.0).abs() < 0.05, "{rho}");
}

#[test]
fn csv_round_trip_preserves_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("land.csv");
    let land = generate_landscape(&DisorderSpec {
        seed: 17,
        sigma_dg: 3e-5,
        sigma_hf_nev: 2.0,
        ..DisorderSpec::default()
    })
    .unwrap();
    let sidecar = land.write_csv(&path).unwrap();
    assert!(sidecar.exists());
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("x_nm,dg,hf_neV\n"));
    let back = ZeemanLandscape::read_csv(&path).unwrap();
    assert_eq!(back.dg_values(), land.dg_values());
    assert_eq!(back.hf_values(), land.hf_values());
    assert_eq!(back.spec(), land.spec());
}
