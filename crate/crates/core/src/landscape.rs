//! Quasistatic Zeeman disorder along the one-dimensional electron channel.
//!
//! A landscape holds two independent stationary Gaussian fields sampled on a
//! uniform grid: the g-factor difference Δg(x) (dimensionless) and the
//! Overhauser-energy difference ΔE_hf(x) (neV). Between grid nodes the fields
//! are linearly interpolated, and all window integrals are exact for that
//! interpolant.
//!
//! Fields are synthesised by circulant embedding: the covariance row is
//! wrapped onto a periodic grid of at least twice the channel length, its
//! eigenvalues come from one FFT, and each sample costs one more FFT.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Spatial correlation function k(r / l_c), normalised to k(0) = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// exp(-r / l_c): an Ornstein–Uhlenbeck process in space.
    #[default]
    Exponential,
    /// exp(-(r / l_c)²).
    Gaussian,
    /// (1 + r / l_c)^-3. A gamma mixture of exponentials whose windowed-mean
    /// variance over a window d is exactly σ²·l_c / (d + l_c).
    PowerLaw,
}

impl Kernel {
    pub fn correlation(self, r: f64, lc: f64) -> f64 {
        let u = r.abs() / lc;
        match self {
            Kernel::Exponential => (-u).exp(),
            Kernel::Gaussian => (-u * u).exp(),
            Kernel::PowerLaw => (1.0 + u).powi(-3),
        }
    }
}

/// Parameters of the two disorder fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisorderSpec {
    pub grid_step_nm: f64,
    pub channel_length_nm: f64,
    pub sigma_dg: f64,
    pub mean_dg: f64,
    pub sigma_hf_nev: f64,
    #[serde(default)]
    pub mean_hf_nev: f64,
    pub correlation_length_nm: f64,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DisorderSpec {
    fn default() -> Self {
        Self {
            grid_step_nm: 1.0,
            channel_length_nm: 1200.0,
            sigma_dg: 0.0,
            mean_dg: 6.51e-4,
            sigma_hf_nev: 0.0,
            mean_hf_nev: 0.0,
            correlation_length_nm: 13.0,
            kernel: Kernel::Exponential,
            seed: 0,
        }
    }
}

impl DisorderSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("grid_step_nm", self.grid_step_nm),
            ("channel_length_nm", self.channel_length_nm),
            ("sigma_dg", self.sigma_dg),
            ("mean_dg", self.mean_dg),
            ("sigma_hf_nev", self.sigma_hf_nev),
            ("mean_hf_nev", self.mean_hf_nev),
            ("correlation_length_nm", self.correlation_length_nm),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
        }
        if self.grid_step_nm <= 0.0 {
            return Err(Error::param("grid_step_nm", "must be > 0"));
        }
        if self.correlation_length_nm <= 0.0 {
            return Err(Error::param("correlation_length_nm", "must be > 0"));
        }
        if self.channel_length_nm < self.grid_step_nm {
            return Err(Error::param(
                "channel_length_nm",
                "must be at least one grid step",
            ));
        }
        if self.sigma_dg < 0.0 {
            return Err(Error::param("sigma_dg", "must be >= 0"));
        }
        if self.sigma_hf_nev < 0.0 {
            return Err(Error::param("sigma_hf_nev", "must be >= 0"));
        }
        Ok(())
    }

    /// Number of grid nodes; the last node sits at or just beyond the channel end.
    pub fn node_count(&self) -> usize {
        (self.channel_length_nm / self.grid_step_nm - 1e-9).ceil() as usize + 1
    }
}

/// Circulant embedding of a stationary covariance on a uniform grid.
#[derive(Clone)]
struct CirculantEmbedding {
    n: usize,
    /// sqrt(eigenvalue / m) per Fourier mode.
    scale: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CirculantEmbedding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantEmbedding")
            .field("n", &self.n)
            .field("m", &self.scale.len())
            .finish()
    }
}

impl CirculantEmbedding {
    const MAX_LEN: usize = 1 << 24;

    fn new(kernel: Kernel, lc: f64, step: f64, n: usize) -> Result<Self> {
        let mut m = (2 * n.saturating_sub(1)).max(2).next_power_of_two();
        let mut planner = FftPlanner::new();
        loop {
            let fft = planner.plan_fft_forward(m);
            let mut row: Vec<Complex64> = (0..m)
                .map(|j| {
                    let lag = j.min(m - j) as f64 * step;
                    Complex64::new(kernel.correlation(lag, lc), 0.0)
                })
                .collect();
            fft.process(&mut row);
            let max = row.iter().map(|c| c.re).fold(f64::MIN, f64::max);
            let min = row.iter().map(|c| c.re).fold(f64::MAX, f64::min);
            // Round-off negatives are clipped; real ones need a longer period.
            if min >= -1e-10 * max {
                let scale = row
                    .iter()
                    .map(|c| (c.re.max(0.0) / m as f64).sqrt())
                    .collect();
                return Ok(Self { n, scale, fft });
            }
            m *= 2;
            if m > Self::MAX_LEN {
                return Err(Error::param(
                    "kernel",
                    "circulant embedding is not non-negative definite",
                ));
            }
        }
    }

    /// One zero-mean, unit-variance realisation on the first `n` nodes.
    fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut buf: Vec<Complex64> = self
            .scale
            .iter()
            .map(|&s| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                Complex64::new(a * s, b * s)
            })
            .collect();
        self.fft.process(&mut buf);
        buf.truncate(self.n);
        buf.into_iter().map(|c| c.re).collect()
    }
}

/// Reusable sampler for one [`DisorderSpec`]; the FFT plan and embedding
/// spectrum are computed once.
#[derive(Debug, Clone)]
pub struct LandscapeGenerator {
    spec: DisorderSpec,
    positions: Arc<Vec<f64>>,
    embedding: Option<CirculantEmbedding>,
}

impl LandscapeGenerator {
    pub fn new(spec: &DisorderSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.node_count();
        let positions: Vec<f64> = (0..n).map(|i| i as f64 * spec.grid_step_nm).collect();
        let embedding = if spec.sigma_dg > 0.0 || spec.sigma_hf_nev > 0.0 {
            Some(CirculantEmbedding::new(
                spec.kernel,
                spec.correlation_length_nm,
                spec.grid_step_nm,
                n,
            )?)
        } else {
            None
        };
        Ok(Self {
            spec: spec.clone(),
            positions: Arc::new(positions),
            embedding,
        })
    }

    pub fn spec(&self) -> &DisorderSpec {
        &self.spec
    }

    fn field(&self, mean: f64, sigma: f64, seed: u64) -> Vec<f64> {
        match (&self.embedding, sigma > 0.0) {
            (Some(emb), true) => {
                let mut rng = seed::rng(seed);
                emb.sample(&mut rng)
                    .into_iter()
                    .map(|z| mean + sigma * z)
                    .collect()
            }
            _ => vec![mean; self.positions.len()],
        }
    }

    pub fn sample_dg(&self, seed: u64) -> Vec<f64> {
        self.field(self.spec.mean_dg, self.spec.sigma_dg, seed)
    }

    pub fn sample_hf(&self, seed: u64) -> Vec<f64> {
        self.field(self.spec.mean_hf_nev, self.spec.sigma_hf_nev, seed)
    }

    /// Landscape for an explicit pair of sub-seeds.
    pub fn generate_with_seeds(&self, dg_seed: u64, hf_seed: u64) -> ZeemanLandscape {
        let dg = self.sample_dg(dg_seed);
        let hf = self.sample_hf(hf_seed);
        ZeemanLandscape::assemble(self.spec.clone(), self.positions.clone(), dg, hf)
    }

    /// Landscape keyed by a single seed; Δg and ΔE_hf use distinct sub-seeds.
    pub fn generate(&self, seed: u64) -> ZeemanLandscape {
        self.generate_with_seeds(
            seed::derive(seed, seed::DOMAIN_DG, 0),
            seed::derive(seed, seed::DOMAIN_HF, 0),
        )
    }

    pub fn with_fields(&self, dg: Vec<f64>, hf: Vec<f64>) -> ZeemanLandscape {
        ZeemanLandscape::assemble(self.spec.clone(), self.positions.clone(), dg, hf)
    }
}

/// Draws the landscape for `spec.seed`.
pub fn generate_landscape(spec: &DisorderSpec) -> Result<ZeemanLandscape> {
    Ok(LandscapeGenerator::new(spec)?.generate(spec.seed))
}

/// Sampled Δg(x) and ΔE_hf(x) on a uniform grid.
#[derive(Debug, Clone)]
pub struct ZeemanLandscape {
    spec: DisorderSpec,
    positions: Arc<Vec<f64>>,
    dg: Vec<f64>,
    hf: Vec<f64>,
    // running trapezoid integrals from x = 0 to each node
    dg_cum: Vec<f64>,
    hf_cum: Vec<f64>,
}

fn cumulative(values: &[f64], step: f64) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(values.len());
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * (w[0] + w[1]) * step;
        out.push(acc);
    }
    out
}

impl ZeemanLandscape {
    fn assemble(spec: DisorderSpec, positions: Arc<Vec<f64>>, dg: Vec<f64>, hf: Vec<f64>) -> Self {
        let step = spec.grid_step_nm;
        let dg_cum = cumulative(&dg, step);
        let hf_cum = cumulative(&hf, step);
        Self {
            spec,
            positions,
            dg,
            hf,
            dg_cum,
            hf_cum,
        }
    }

    /// Builds a landscape from explicit node values on the grid implied by `spec`.
    pub fn from_values(spec: DisorderSpec, dg: Vec<f64>, hf: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let n = spec.node_count();
        if dg.len() != n || hf.len() != n {
            return Err(Error::param(
                "values",
                format!(
                    "expected {n} nodes, got dg={} hf={}",
                    dg.len(),
                    hf.len()
                ),
            ));
        }
        let positions = (0..n).map(|i| i as f64 * spec.grid_step_nm).collect();
        Ok(Self::assemble(spec, Arc::new(positions), dg, hf))
    }

    /// Constant fields, handy for analytic checks.
    pub fn uniform(spec: DisorderSpec, dg: f64, hf_nev: f64) -> Result<Self> {
        let n = spec.node_count();
        Self::from_values(spec, vec![dg; n], vec![hf_nev; n])
    }

    pub fn spec(&self) -> &DisorderSpec {
        &self.spec
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn dg_values(&self) -> &[f64] {
        &self.dg
    }

    pub fn hf_values(&self) -> &[f64] {
        &self.hf
    }

    pub fn channel_length_nm(&self) -> f64 {
        self.spec.channel_length_nm
    }

    fn check(&self, x: f64) -> Result<()> {
        let tol = 1e-9 * self.spec.grid_step_nm;
        if !x.is_finite() || x < -tol || x > self.spec.channel_length_nm + tol {
            return Err(Error::OutOfRange {
                x_nm: x,
                length_nm: self.spec.channel_length_nm,
            });
        }
        Ok(())
    }

    /// Cell index and fractional offset for a checked position.
    fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.positions.len();
        if n == 1 {
            return (0, 0.0);
        }
        let s = (x / self.spec.grid_step_nm).max(0.0);
        let i = (s.floor() as usize).min(n - 2);
        (i, (s - i as f64).min(1.0))
    }

    fn interp(values: &[f64], i: usize, frac: f64) -> f64 {
        if frac == 0.0 {
            values[i]
        } else {
            values[i] + frac * (values[i + 1] - values[i])
        }
    }

    /// (Δg, ΔE_hf in neV) at `x_nm`, linearly interpolated.
    pub fn field_at(&self, x_nm: f64) -> Result<(f64, f64)> {
        self.check(x_nm)?;
        let (i, frac) = self.locate(x_nm);
        Ok((Self::interp(&self.dg, i, frac), Self::interp(&self.hf, i, frac)))
    }

    fn antiderivative(&self, x: f64) -> (f64, f64) {
        let (i, frac) = self.locate(x);
        if self.positions.len() == 1 {
            return (self.dg[0] * x, self.hf[0] * x);
        }
        let h = frac * self.spec.grid_step_nm;
        let dg_x = Self::interp(&self.dg, i, frac);
        let hf_x = Self::interp(&self.hf, i, frac);
        (
            self.dg_cum[i] + 0.5 * (self.dg[i] + dg_x) * h,
            self.hf_cum[i] + 0.5 * (self.hf[i] + hf_x) * h,
        )
    }

    /// Exact integrals ∫_a^b of (Δg, ΔE_hf) dx in nm and nm·neV. `b < a` flips sign.
    pub fn integrate(&self, a_nm: f64, b_nm: f64) -> Result<(f64, f64)> {
        self.check(a_nm)?;
        self.check(b_nm)?;
        let (ga, ha) = self.antiderivative(a_nm);
        let (gb, hb) = self.antiderivative(b_nm);
        Ok((gb - ga, hb - ha))
    }

    /// Mean of each field over [x0, x0 + d]; `d = 0` gives the point value.
    pub fn window_average(&self, x0_nm: f64, d_nm: f64) -> Result<(f64, f64)> {
        if !(d_nm >= 0.0) {
            return Err(Error::param("d", "window length must be >= 0"));
        }
        if d_nm == 0.0 {
            return self.field_at(x0_nm);
        }
        let (g, h) = self.integrate(x0_nm, x0_nm + d_nm)?;
        Ok((g / d_nm, h / d_nm))
    }

    /// Writes `x_nm,dg,hf_neV` rows plus a JSON sidecar echoing the spec.
    /// Returns the sidecar path.
    pub fn write_csv(&self, path: &Path) -> Result<PathBuf> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(["x_nm", "dg", "hf_neV"])?;
        for ((x, g), h) in self.positions.iter().zip(&self.dg).zip(&self.hf) {
            w.write_record([x.to_string(), g.to_string(), h.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let sidecar = sidecar_path(path);
        let mut f = BufWriter::new(File::create(&sidecar).map_err(|e| Error::io(&sidecar, e))?);
        serde_json::to_writer_pretty(&mut f, &self.spec)?;
        f.flush().map_err(|e| Error::io(&sidecar, e))?;
        Ok(sidecar)
    }

    /// Reads a landscape written by [`write_csv`](Self::write_csv).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let sidecar = sidecar_path(path);
        let f = File::open(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let spec: DisorderSpec = serde_json::from_reader(BufReader::new(f))?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::Reader::from_reader(BufReader::new(file));
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x_nm", "dg", "hf_neV"] {
            return Err(Error::param("header", "expected x_nm,dg,hf_neV"));
        }
        let (mut dg, mut hf) = (Vec::new(), Vec::new());
        for (i, rec) in r.deserialize::<(f64, f64, f64)>().enumerate() {
            let (x, g, h) = rec?;
            let expect = i as f64 * spec.grid_step_nm;
            if (x - expect).abs() > 1e-9 * spec.grid_step_nm.max(1.0) * (i as f64 + 1.0) {
                return Err(Error::param(
                    "x_nm",
                    format!("row {i}: {x} is off the uniform grid (expected {expect})"),
                ));
            }
            dg.push(g);
            hf.push(h);
        }
        Self::from_values(spec, dg, hf)
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DisorderSpec {
        DisorderSpec {
            channel_length_nm: 100.0,
            sigma_dg: 1e-5,
            sigma_hf_nev: 1.0,
            seed: 42,
            ..DisorderSpec::default()
        }
    }

    #[test]
    fn zero_variance_is_constant() {
        let s = DisorderSpec {
            sigma_dg: 0.0,
            ..spec()
        };
        let l = generate_landscape(&s).unwrap();
        assert!(l.dg_values().iter().all(|&v| v == 6.51e-4));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_landscape(&spec()).unwrap();
        let b = generate_landscape(&spec()).unwrap();
        assert_eq!(a.dg_values(), b.dg_values());
        assert_eq!(a.hf_values(), b.hf_values());
        let c = generate_landscape(&DisorderSpec { seed: 43, ..spec() }).unwrap();
        assert_ne!(a.dg_values(), c.dg_values());
    }

    #[test]
    fn rejects_bad_specs() {
        for bad in [
            DisorderSpec { grid_step_nm: 0.0, ..spec() },
            DisorderSpec { grid_step_nm: -1.0, ..spec() },
            DisorderSpec { correlation_length_nm: 0.0, ..spec() },
            DisorderSpec { sigma_dg: -1.0, ..spec() },
            DisorderSpec { channel_length_nm: 0.5, ..spec() },
        ] {
            assert!(generate_landscape(&bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn uniform_grid_and_lengths() {
        let l = generate_landscape(&spec()).unwrap();
        assert_eq!(l.positions().len(), 101);
        assert_eq!(l.dg_values().len(), l.hf_values().len());
        for w in l.positions().windows(2) {
            assert!((w[1] - w[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn field_at_nodes_and_midpoints() {
        let l = generate_landscape(&spec()).unwrap();
        for i in [0usize, 7, 99, 100] {
            let (g, h) = l.field_at(i as f64).unwrap();
            assert_eq!(g, l.dg_values()[i]);
            assert_eq!(h, l.hf_values()[i]);
        }
        let (g, _) = l.field_at(7.5).unwrap();
        let mid = 0.5 * (l.dg_values()[7] + l.dg_values()[8]);
        assert!((g - mid).abs() <= 1e-15 * mid.abs().max(1e-3));
        assert!(l.field_at(-0.1).is_err());
        assert!(l.field_at(100.1).is_err());
        assert!(l.field_at(f64::NAN).is_err());
    }

    #[test]
    fn window_average_of_ramp_is_exact() {
        let s = DisorderSpec {
            channel_length_nm: 50.0,
            ..DisorderSpec::default()
        };
        let (a, b) = (2.0, 0.3);
        let dg: Vec<f64> = (0..51).map(|i| a + b * i as f64).collect();
        let l = ZeemanLandscape::from_values(s, dg, vec![0.0; 51]).unwrap();
        for d in [0.7, 10.0, 33.3, 50.0] {
            let (avg, _) = l.window_average(0.0, d).unwrap();
            let expect = a + b * d / 2.0;
            assert!(((avg - expect) / expect).abs() < 1e-12, "d={d}");
        }
        assert!(l.window_average(10.0, 41.0).is_err());
        assert_eq!(l.window_average(3.0, 0.0).unwrap(), l.field_at(3.0).unwrap());
    }

    #[test]
    fn constant_field_averages_to_constant() {
        let s = DisorderSpec::default();
        let l = ZeemanLandscape::uniform(s, 6.51e-4, 0.0).unwrap();
        for d in [1.0, 13.0, 280.0, 1200.0] {
            let (g, h) = l.window_average(0.0, d).unwrap();
            assert!((g / 6.51e-4 - 1.0).abs() < 1e-12);
            assert_eq!(h, 0.0);
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("landscape.csv");
        let l = generate_landscape(&spec()).unwrap();
        l.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x_nm,dg,hf_neV\n"));
        let back = ZeemanLandscape::read_csv(&path).unwrap();
        assert_eq!(back.dg_values(), l.dg_values());
        assert_eq!(back.hf_values(), l.hf_values());
        assert_eq!(back.spec(), l.spec());
    }

    #[test]
    fn embedding_is_non_negative_for_all_kernels() {
        for k in [Kernel::Exponential, Kernel::Gaussian, Kernel::PowerLaw] {
            let emb = CirculantEmbedding::new(k, 13.0, 1.0, 500).unwrap();
            assert!(emb.scale.iter().all(|s| s.is_finite()));
        }
    }
}
