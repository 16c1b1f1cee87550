use serde::{Deserialize, Serialize};

use super::dct::DctTable;
use super::{add_deltas, cmvn, FeatureKind, FeatureMatrix, LOG_FLOOR};
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::signal::{cqt_power, CqtConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CqccConfig {
    pub cqt: CqtConfig,
    /// Cepstral coefficients beyond c0.
    pub n_coeffs: usize,
    pub include_c0: bool,
    pub add_deltas: bool,
    /// Linear-grid length for uniform resampling; `None` uses the CQT bin count.
    pub resample_len: Option<usize>,
    /// Per-utterance CMVN. Off for the countermeasure baseline.
    pub cmvn: bool,
}

impl Default for CqccConfig {
    fn default() -> Self {
        Self {
            cqt: CqtConfig::default(),
            n_coeffs: 29,
            include_c0: true,
            add_deltas: true,
            resample_len: None,
            cmvn: false,
        }
    }
}

impl CqccConfig {
    pub fn static_dim(&self) -> usize {
        self.n_coeffs + usize::from(self.include_c0)
    }

    pub fn dim(&self) -> usize {
        self.static_dim() * if self.add_deltas { 3 } else { 1 }
    }
}

/// Linearly interpolates values sampled at increasing `src_freqs` onto
/// `target_len` evenly spaced frequencies spanning the same range.
pub fn uniform_resample(values: &[f64], src_freqs: &[f64], target_len: usize) -> Result<Vec<f64>> {
    if values.len() != src_freqs.len() {
        return Err(Error::DimMismatch {
            expected: src_freqs.len(),
            got: values.len(),
        });
    }
    if src_freqs.len() < 2 {
        return Err(Error::Domain(
            "uniform resampling needs at least 2 source bins".into(),
        ));
    }
    if target_len < 2 {
        return Err(Error::Domain(
            "uniform resampling needs a target length >= 2".into(),
        ));
    }
    let lo = src_freqs[0];
    let hi = src_freqs[src_freqs.len() - 1];
    let step = (hi - lo) / (target_len - 1) as f64;
    let mut j = 0usize;
    Ok((0..target_len)
        .map(|i| {
            if i == target_len - 1 {
                return values[values.len() - 1];
            }
            let f = lo + step * i as f64;
            while j + 2 < src_freqs.len() && src_freqs[j + 1] <= f {
                j += 1;
            }
            let (f0, f1) = (src_freqs[j], src_freqs[j + 1]);
            let t = ((f - f0) / (f1 - f0)).clamp(0.0, 1.0);
            values[j] + t * (values[j + 1] - values[j])
        })
        .collect())
}

/// Constant-Q cepstral coefficients, optionally with Δ and ΔΔ appended.
pub fn cqcc_extract(w: &Waveform, cfg: &CqccConfig) -> Result<FeatureMatrix> {
    if cfg.n_coeffs == 0 {
        return Err(Error::Domain("CQCC needs at least one coefficient".into()));
    }
    let spec = cqt_power(w, &cfg.cqt)?;
    let target = cfg.resample_len.unwrap_or(spec.num_bins());
    let n_out = cfg.n_coeffs + 1;
    if n_out > target {
        return Err(Error::Domain(format!(
            "{n_out} cepstral coefficients exceed the {target}-point grid"
        )));
    }
    let table = DctTable::new(target, n_out);
    let skip = usize::from(!cfg.include_c0);
    let mut rows = Vec::with_capacity(spec.num_frames());
    for t in 0..spec.num_frames() {
        let log: Vec<f64> = spec
            .values
            .column(t)
            .iter()
            .map(|p| (p + LOG_FLOOR).ln())
            .collect();
        let lin = uniform_resample(&log, &spec.bin_freqs, target)?;
        rows.push(table.apply(&lin)[skip..].to_vec());
    }
    let values = Matrix::from_rows(&rows, cfg.static_dim())?;
    let mut f = FeatureMatrix::new(values, FeatureKind::Cqcc)
        .with_meta("bins_per_octave", cfg.cqt.bins_per_octave)
        .with_meta("octaves", cfg.cqt.octaves)
        .with_meta("n_coeffs", cfg.n_coeffs)
        .with_meta("include_c0", cfg.include_c0);
    if cfg.add_deltas {
        f = add_deltas(&f)?;
    }
    if cfg.cmvn {
        f = cmvn(&f)?;
    }
    Ok(f)
}
