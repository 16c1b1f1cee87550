//! Trajectory post-processing: RASTA band-pass, deltas, and per-utterance CMVN.

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Output frames discarded while the RASTA filter history fills.
pub const RASTA_WARMUP: usize = 4;

const RASTA_NUM: [f64; 5] = [0.2, 0.1, 0.0, -0.1, -0.2];
const RASTA_POLE: f64 = 0.98;

/// RASTA band-pass filtering of every coefficient trajectory:
/// `H(z) = 0.1 (2 + z⁻¹ − z⁻³ − 2z⁻⁴) / (1 − 0.98 z⁻¹)`.
///
/// The recursion starts once a full numerator history exists; the first
/// [`RASTA_WARMUP`] frames are dropped, so the output has `T − 4` frames.
pub fn rasta_filter(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    let t = f.num_frames();
    if t < RASTA_WARMUP + 1 {
        return Err(Error::Data(format!(
            "RASTA needs at least {} frames, got {t}",
            RASTA_WARMUP + 1
        )));
    }
    let dim = f.dim();
    let mut out = Matrix::zeros(t - RASTA_WARMUP, dim);
    for d in 0..dim {
        let mut prev = 0.0;
        for n in RASTA_WARMUP..t {
            let fir: f64 = RASTA_NUM
                .iter()
                .enumerate()
                .map(|(j, b)| b * f.values.get(n - j, d))
                .sum();
            let y = RASTA_POLE * prev + fir;
            out.set(n - RASTA_WARMUP, d, y);
            prev = y;
        }
    }
    Ok(f.with_values(out))
}

fn central_difference(m: &Matrix) -> Matrix {
    let t = m.rows();
    let mut out = Matrix::zeros(t, m.cols());
    for n in 0..t {
        let next = m.row((n + 1).min(t - 1));
        let prev = m.row(n.saturating_sub(1));
        for ((o, a), b) in out.row_mut(n).iter_mut().zip(next).zip(prev) {
            *o = (a - b) / 2.0;
        }
    }
    out
}

/// Appends Δ and ΔΔ over a three-frame context, `Δ_t = (f_{t+1} − f_{t−1}) / 2`,
/// replicating edge frames. Output dimension is three times the input.
pub fn add_deltas(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    if f.num_frames() < 3 {
        return Err(Error::Data(format!(
            "deltas need at least 3 frames, got {}",
            f.num_frames()
        )));
    }
    let d1 = central_difference(&f.values);
    let d2 = central_difference(&d1);
    Ok(f.with_values(f.values.hstack(&d1)?.hstack(&d2)?))
}

/// Per-utterance mean and variance normalization of every dimension.
/// A dimension with (numerically) zero variance is only mean-subtracted.
pub fn cmvn(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    let t = f.num_frames();
    if t < 2 {
        return Err(Error::Data(format!(
            "CMVN needs at least 2 frames, got {t}"
        )));
    }
    let dim = f.dim();
    let mut out = f.values.clone();
    for d in 0..dim {
        let col = f.values.column(d);
        let mean = col.iter().sum::<f64>() / t as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
        let scale = if var > 1e-20 * (1.0 + mean * mean) {
            1.0 / var.sqrt()
        } else {
            1.0
        };
        for n in 0..t {
            out.set(n, d, (col[n] - mean) * scale);
        }
    }
    Ok(f.with_values(out))
}
