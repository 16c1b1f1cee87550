//! Constant-Q power spectrum by direct per-bin windowed inner products.
//!
//! Bin `k` is analysed with a Hann-windowed complex exponential of length
//! `N_k = round(Q · rate / f_k)` centred on each frame position. The periodic
//! Hann window is a sum of three complex exponentials, so every inner product
//! reduces to differences of three running prefix sums. This evaluates the
//! exact direct inner product in O(bins × len) without forming kernels.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::audio::{ms_to_samples, Waveform};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MIN_FMIN_HZ: f64 = 10.0;
/// Rotation recurrences are re-anchored with an exact `cis` this often.
const RESYNC: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CqtConfig {
    pub bins_per_octave: usize,
    pub octaves: u32,
    pub hop_ms: f64,
}

impl Default for CqtConfig {
    fn default() -> Self {
        Self {
            bins_per_octave: 96,
            octaves: 9,
            hop_ms: 10.0,
        }
    }
}

impl CqtConfig {
    pub fn num_bins(&self) -> usize {
        self.bins_per_octave * self.octaves as usize
    }

    pub fn q_factor(&self) -> f64 {
        1.0 / (2f64.powf(1.0 / self.bins_per_octave as f64) - 1.0)
    }

    pub fn f_max(&self, rate: u32) -> f64 {
        rate as f64 / 2.0
    }

    pub fn f_min(&self, rate: u32) -> f64 {
        self.f_max(rate) / 2f64.powi(self.octaves as i32)
    }

    pub fn bin_freqs(&self, rate: u32) -> Vec<f64> {
        let f_min = self.f_min(rate);
        let b = self.bins_per_octave as f64;
        (0..self.num_bins())
            .map(|k| f_min * 2f64.powf(k as f64 / b))
            .collect()
    }

    pub fn window_lengths(&self, rate: u32) -> Vec<usize> {
        let q = self.q_factor();
        self.bin_freqs(rate)
            .iter()
            .map(|f| ((q * rate as f64 / f).round() as usize).max(1))
            .collect()
    }

    /// Shortest accepted input: one analysis window of the lowest bin.
    pub fn min_samples(&self, rate: u32) -> usize {
        self.window_lengths(rate).first().copied().unwrap_or(1)
    }

    pub fn validate(&self, rate: u32) -> Result<()> {
        if self.bins_per_octave == 0 || self.octaves == 0 {
            return Err(Error::Domain(
                "constant-Q analysis needs at least one bin per octave and one octave".into(),
            ));
        }
        let f_min = self.f_min(rate);
        if f_min < MIN_FMIN_HZ {
            return Err(Error::Domain(format!(
                "{} octaves below {} Hz put f_min at {f_min:.3} Hz (< {MIN_FMIN_HZ} Hz)",
                self.octaves,
                self.f_max(rate)
            )));
        }
        if !(self.hop_ms > 0.0) {
            return Err(Error::Domain("constant-Q hop must be positive".into()));
        }
        Ok(())
    }
}

/// Constant-Q power, stored bins × frames.
#[derive(Debug, Clone, PartialEq)]
pub struct CqtSpectrum {
    pub values: Matrix,
    pub bins_per_octave: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub bin_freqs: Vec<f64>,
    pub hop: usize,
}

impl CqtSpectrum {
    pub fn num_bins(&self) -> usize {
        self.values.rows()
    }

    pub fn num_frames(&self) -> usize {
        self.values.cols()
    }
}

fn cis(theta: f64) -> Complex<f64> {
    Complex::new(theta.cos(), theta.sin())
}

/// Prefix sums `P[j] = Σ_{i<j} x[i] e^{-iνi}`, length `len + 1`.
fn modulated_prefix(x: &[f64], nu: f64, out: &mut Vec<Complex<f64>>) {
    out.clear();
    out.reserve(x.len() + 1);
    let step = cis(-nu);
    let mut acc = Complex::new(0.0, 0.0);
    out.push(acc);
    let mut rot = Complex::new(1.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        if i % RESYNC == 0 {
            rot = cis(-nu * i as f64);
        }
        acc += rot * v;
        out.push(acc);
        rot *= step;
    }
}

/// Constant-Q power spectrum. Frames are centred at multiples of the hop;
/// samples outside the signal count as zero.
pub fn cqt_power(w: &Waveform, cfg: &CqtConfig) -> Result<CqtSpectrum> {
    let rate = w.sample_rate();
    cfg.validate(rate)?;
    let min = cfg.min_samples(rate);
    if w.len() < min {
        return Err(Error::TooShort {
            min_samples: min,
            min_seconds: min as f64 / rate as f64,
            got: w.len(),
        });
    }
    let hop = ms_to_samples(cfg.hop_ms, rate).max(1);
    let x = w.samples();
    let len = x.len();
    let num_frames = (len - 1) / hop + 1;
    let freqs = cfg.bin_freqs(rate);
    let lens = cfg.window_lengths(rate);
    let mut values = Matrix::zeros(freqs.len(), num_frames);

    let mut prefix = Vec::new();
    let mut acc = vec![Complex::new(0.0, 0.0); num_frames];
    for (k, (&f, &n)) in freqs.iter().zip(&lens).enumerate() {
        let omega = 2.0 * PI * f / rate as f64;
        let shift = 2.0 * PI / n as f64;
        acc.iter_mut().for_each(|a| *a = Complex::new(0.0, 0.0));
        // periodic Hann: 0.5 - 0.25 e^{+i2πn/N} - 0.25 e^{-i2πn/N}
        for (nu, coef) in [(omega, 0.5), (omega - shift, -0.25), (omega + shift, -0.25)] {
            modulated_prefix(x, nu, &mut prefix);
            for (m, a) in acc.iter_mut().enumerate() {
                let start = (m * hop) as isize - (n / 2) as isize;
                let lo = start.clamp(0, len as isize) as usize;
                let hi = (start + n as isize).clamp(0, len as isize) as usize;
                // Σ_{j} x[j] e^{-iν(j - start)} = e^{iν·start} (P[hi] - P[lo])
                let seg = prefix[hi] - prefix[lo];
                *a += seg * cis(nu * start as f64) * coef;
            }
        }
        let norm = 1.0 / n as f64;
        for (m, a) in acc.iter().enumerate() {
            values.set(k, m, (a * norm).norm_sqr());
        }
    }
    Ok(CqtSpectrum {
        values,
        bins_per_octave: cfg.bins_per_octave,
        f_min: cfg.f_min(rate),
        f_max: cfg.f_max(rate),
        bin_freqs: freqs,
        hop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct evaluation with an explicitly materialised kernel.
    fn naive_cqt(x: &[f64], rate: u32, cfg: &CqtConfig) -> Matrix {
        let hop = ms_to_samples(cfg.hop_ms, rate);
        let num_frames = (x.len() - 1) / hop + 1;
        let freqs = cfg.bin_freqs(rate);
        let lens = cfg.window_lengths(rate);
        let mut out = Matrix::zeros(freqs.len(), num_frames);
        for (k, (&f, &n)) in freqs.iter().zip(&lens).enumerate() {
            let kernel: Vec<Complex<f64>> = (0..n)
                .map(|i| {
                    let win = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
                    cis(-2.0 * PI * f * i as f64 / rate as f64) * (win / n as f64)
                })
                .collect();
            for m in 0..num_frames {
                let start = (m * hop) as isize - (n / 2) as isize;
                let mut acc = Complex::new(0.0, 0.0);
                for (i, kv) in kernel.iter().enumerate() {
                    let j = start + i as isize;
                    if j >= 0 && (j as usize) < x.len() {
                        acc += kv * x[j as usize];
                    }
                }
                out.set(k, m, acc.norm_sqr());
            }
        }
        out
    }

    fn small_cfg() -> CqtConfig {
        CqtConfig {
            bins_per_octave: 12,
            octaves: 5,
            hop_ms: 10.0,
        }
    }

    #[test]
    fn default_bin_budget() {
        let cfg = CqtConfig::default();
        assert_eq!(cfg.num_bins(), 864);
        cfg.validate(16000).unwrap();
    }

    #[test]
    fn geometric_spacing() {
        let f = CqtConfig::default().bin_freqs(16000);
        let r = 2f64.powf(1.0 / 96.0);
        for p in f.windows(2) {
            assert!((p[1] / p[0] - r).abs() < 1e-12);
        }
        assert!((f[0] - 8000.0 / 512.0).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_kernel_oracle() {
        let rate = 16000;
        let cfg = small_cfg();
        let mut lcg = 99u64;
        let x: Vec<f64> = (0..6000)
            .map(|n| {
                lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1);
                0.3 * ((lcg >> 11) as f64 / (1u64 << 53) as f64 - 0.5)
                    + 0.5 * (2.0 * PI * 440.0 * n as f64 / rate as f64).sin()
            })
            .collect();
        let fast = cqt_power(&Waveform::new(x.clone(), rate).unwrap(), &cfg).unwrap();
        let slow = naive_cqt(&x, rate, &cfg);
        let peak = slow.as_slice().iter().cloned().fold(0.0, f64::max);
        for (a, b) in fast.values.as_slice().iter().zip(slow.as_slice()) {
            assert!((a - b).abs() <= 1e-9 * peak + 1e-12 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn tone_at_bin_centre_peaks_there() {
        let rate = 16000;
        let cfg = small_cfg();
        let freqs = cfg.bin_freqs(rate);
        for &k in &[10usize, 30, 47, 55] {
            let f = freqs[k];
            let x: Vec<f64> = (0..8000)
                .map(|n| (2.0 * PI * f * n as f64 / rate as f64).sin())
                .collect();
            let s = cqt_power(&Waveform::new(x, rate).unwrap(), &cfg).unwrap();
            let m = s.num_frames() / 2;
            let col = s.values.column(m);
            let arg = (0..col.len())
                .max_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap())
                .unwrap();
            assert_eq!(arg, k);
        }
    }

    #[test]
    fn homogeneity() {
        let rate = 16000;
        let cfg = small_cfg();
        let x: Vec<f64> = (0..4000)
            .map(|n| ((n * 13) % 29) as f64 / 29.0 - 0.5)
            .collect();
        let w = Waveform::new(x, rate).unwrap();
        let a = cqt_power(&w, &cfg).unwrap();
        let b = cqt_power(&w.scaled(2.0), &cfg).unwrap();
        for (p, q) in a.values.as_slice().iter().zip(b.values.as_slice()) {
            assert_eq!(4.0 * p, *q);
            assert!(*p >= 0.0);
        }
    }

    #[test]
    fn domain_and_length_errors() {
        let cfg = CqtConfig {
            octaves: 10,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(16000), Err(Error::Domain(_))));
        let w = Waveform::new(vec![0.1; 1000], 16000).unwrap();
        match cqt_power(&w, &small_cfg()) {
            Err(Error::TooShort { min_samples, .. }) => {
                assert_eq!(min_samples, small_cfg().min_samples(16000))
            }
            other => panic!("{other:?}"),
        }
    }
}
