//! Hann-windowed, ×4 zero-padded amplitude spectrum used to seed the
//! oscillation fits.

use num_complex::Complex64;
use rustfft::FftPlanner;

const PAD: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralPeak {
    pub frequency_mhz: f64,
    pub magnitude: f64,
}

fn hann(n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![1.0; n];
    }
    (0..n)
        .map(|k| 0.5 * (1.0 - (std::f64::consts::TAU * k as f64 / (n - 1) as f64).cos()))
        .collect()
}

/// Magnitudes on the padded frequency grid `j / (PAD·n·dt)`, j = 0..=PAD·n/2.
fn magnitudes(t_us: &[f64], y: &[f64]) -> (Vec<f64>, f64) {
    let n = t_us.len();
    let span = t_us[n - 1] - t_us[0];
    let dt = span / (n - 1) as f64;
    let mean = y.iter().sum::<f64>() / n as f64;
    let win = hann(n);
    let m = PAD * n;
    let df = 1.0 / (m as f64 * dt);
    let uniform = t_us
        .iter()
        .enumerate()
        .all(|(k, t)| (t - (t_us[0] + k as f64 * dt)).abs() <= 1e-6 * dt);
    let half = m / 2;
    let mags = if uniform {
        let mut buf: Vec<Complex64> = (0..m)
            .map(|k| {
                if k < n {
                    Complex64::new(win[k] * (y[k] - mean), 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        FftPlanner::new().plan_fft_forward(m).process(&mut buf);
        buf[..=half].iter().map(|c| c.norm()).collect()
    } else {
        (0..=half)
            .map(|j| {
                let f = j as f64 * df;
                t_us.iter()
                    .zip(y)
                    .zip(&win)
                    .map(|((t, v), w)| Complex64::from_polar(w * (v - mean), -std::f64::consts::TAU * f * (t - t_us[0])))
                    .sum::<Complex64>()
                    .norm()
            })
            .collect()
    };
    (mags, df)
}

/// Local maxima of the windowed spectrum, strongest first, with parabolic
/// refinement of frequency and height.
pub fn spectral_peaks(t_ns: &[f64], y: &[f64]) -> Vec<SpectralPeak> {
    if t_ns.len() < 4 || t_ns.len() != y.len() {
        return Vec::new();
    }
    let t_us: Vec<f64> = t_ns.iter().map(|t| t * 1e-3).collect();
    let (mags, df) = magnitudes(&t_us, y);
    let mut peaks = Vec::new();
    for j in 1..mags.len() - 1 {
        let (a, b, c) = (mags[j - 1], mags[j], mags[j + 1]);
        if b > a && b >= c {
            let denom = a - 2.0 * b + c;
            let delta = if denom < 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
            peaks.push(SpectralPeak {
                frequency_mhz: (j as f64 + delta) * df,
                magnitude: b - 0.25 * (a - c) * delta,
            });
        }
    }
    peaks.sort_by(|p, q| q.magnitude.total_cmp(&p.magnitude).then(p.frequency_mhz.total_cmp(&q.frequency_mhz)));
    peaks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_two_tones() {
        let t: Vec<f64> = (0..300).map(|i| i as f64 * 10.0).collect();
        let y: Vec<f64> = t
            .iter()
            .map(|t| {
                let t = t * 1e-3;
                (std::f64::consts::TAU * 5.0 * t).cos() + 0.8 * (std::f64::consts::TAU * 7.29 * t).cos()
            })
            .collect();
        let p = spectral_peaks(&t, &y);
        assert!((p[0].frequency_mhz - 5.0).abs() < 0.05);
        assert!((p[1].frequency_mhz - 7.29).abs() < 0.05);
    }

    #[test]
    fn non_uniform_grid_uses_direct_transform() {
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 10.0 + if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let y: Vec<f64> = t.iter().map(|t| (std::f64::consts::TAU * 6.0 * t * 1e-3).sin()).collect();
        let p = spectral_peaks(&t, &y);
        assert!((p[0].frequency_mhz - 6.0).abs() < 0.1);
    }
}
