use serde::{Deserialize, Serialize};

use super::dct::DctTable;
use super::{add_deltas, cmvn, rasta_filter, FeatureKind, FeatureMatrix, LOG_FLOOR, RASTA_WARMUP};
use crate::audio::{energy_vad, ms_to_samples, Waveform, DEFAULT_VAD_FLOOR_DB};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::signal::stft_power;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfccConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub num_filters: usize,
    /// Kept coefficients 1..=n_coeffs; c0 is always discarded.
    pub n_coeffs: usize,
    pub f_low: f64,
    /// `None` means the Nyquist frequency.
    pub f_high: Option<f64>,
    pub rasta: bool,
    pub deltas: bool,
    pub vad_floor_db: f64,
    pub cmvn: bool,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_ms: 20.0,
            hop_ms: 10.0,
            num_filters: 20,
            n_coeffs: 19,
            f_low: 0.0,
            f_high: None,
            rasta: true,
            deltas: true,
            vad_floor_db: DEFAULT_VAD_FLOOR_DB,
            cmvn: true,
        }
    }
}

impl MfccConfig {
    pub fn n_fft(&self, rate: u32) -> usize {
        ms_to_samples(self.frame_ms, rate).next_power_of_two()
    }

    /// Dimension produced by [`mfcc_pipeline`].
    pub fn pipeline_dim(&self) -> usize {
        self.n_coeffs * if self.deltas { 3 } else { 1 }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub num_filters: usize,
    /// num_filters × num_bins
    pub weights: Matrix,
    pub f_low: f64,
    pub f_high: f64,
}

impl MelFilterbank {
    pub fn new(num_filters: usize, bin_freqs: &[f64], f_low: f64, f_high: f64) -> Result<Self> {
        if num_filters == 0 || !(f_high > f_low) || f_low < 0.0 {
            return Err(Error::Domain(format!(
                "invalid mel filterbank: {num_filters} filters over [{f_low}, {f_high}] Hz"
            )));
        }
        let (ml, mh) = (hz_to_mel(f_low), hz_to_mel(f_high));
        let edges: Vec<f64> = (0..num_filters + 2)
            .map(|i| mel_to_hz(ml + (mh - ml) * i as f64 / (num_filters + 1) as f64))
            .collect();
        let mut weights = Matrix::zeros(num_filters, bin_freqs.len());
        for m in 0..num_filters {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for (k, &f) in bin_freqs.iter().enumerate() {
                let w = if f > lo && f <= c {
                    (f - lo) / (c - lo)
                } else if f > c && f < hi {
                    (hi - f) / (hi - c)
                } else {
                    0.0
                };
                weights.set(m, k, w);
            }
        }
        Ok(Self {
            num_filters,
            weights,
            f_low,
            f_high,
        })
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        (0..self.num_filters)
            .map(|m| {
                self.weights
                    .row(m)
                    .iter()
                    .zip(power)
                    .map(|(w, p)| w * p)
                    .sum()
            })
            .collect()
    }
}

/// Static MFCCs (coefficients 1..=n_coeffs) per 20 ms frame.
pub fn mfcc_extract(w: &Waveform, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    let rate = w.sample_rate();
    let frame_len = ms_to_samples(cfg.frame_ms, rate);
    if w.len() < frame_len {
        return Err(Error::TooShort {
            min_samples: frame_len,
            min_seconds: frame_len as f64 / rate as f64,
            got: w.len(),
        });
    }
    if cfg.n_coeffs + 1 > cfg.num_filters {
        return Err(Error::Domain(format!(
            "{} coefficients need more than {} filters",
            cfg.n_coeffs, cfg.num_filters
        )));
    }
    let spec = stft_power(w, cfg.frame_ms, cfg.hop_ms, cfg.n_fft(rate))?;
    let f_high = cfg.f_high.unwrap_or(rate as f64 / 2.0);
    let bank = MelFilterbank::new(cfg.num_filters, &spec.bin_freqs, cfg.f_low, f_high)?;
    let table = DctTable::new(cfg.num_filters, cfg.n_coeffs + 1);
    let rows: Vec<Vec<f64>> = (0..spec.num_frames())
        .map(|t| {
            let energies: Vec<f64> = bank
                .apply(&spec.values.column(t))
                .iter()
                .map(|e| (e + LOG_FLOOR).ln())
                .collect();
            table.apply(&energies)[1..].to_vec()
        })
        .collect();
    Ok(
        FeatureMatrix::new(Matrix::from_rows(&rows, cfg.n_coeffs)?, FeatureKind::Mfcc)
            .with_meta("num_filters", cfg.num_filters)
            .with_meta("n_coeffs", cfg.n_coeffs),
    )
}

/// Verifier front end: MFCC → RASTA → Δ/ΔΔ → drop non-speech frames → CMVN.
pub fn mfcc_pipeline(w: &Waveform, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    let mut f = mfcc_extract(w, cfg)?;
    let mut mask = energy_vad(w, cfg.frame_ms, cfg.hop_ms, cfg.vad_floor_db)?;
    if cfg.rasta {
        f = rasta_filter(&f)?;
        mask.drain(..RASTA_WARMUP.min(mask.len()));
    }
    if cfg.deltas {
        f = add_deltas(&f)?;
    }
    let kept = f.values.select_rows(&mask);
    if kept.rows() == 0 {
        return Err(Error::Data(
            "no speech frames after voice activity detection".into(),
        ));
    }
    f = f.with_values(kept);
    if cfg.cmvn {
        f = cmvn(&f)?;
    }
    Ok(f)
}
