use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::{frame_signal, ms_to_samples, Waveform, WindowKind};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Short-time power spectrum, stored bins × frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Matrix,
    pub bin_freqs: Vec<f64>,
    pub hop: usize,
}

impl Spectrogram {
    pub fn num_bins(&self) -> usize {
        self.values.rows()
    }

    pub fn num_frames(&self) -> usize {
        self.values.cols()
    }
}

/// Power STFT keeping the first `n_fft / 2` bins. Frames are Hamming-windowed
/// and zero-padded to `n_fft`.
pub fn stft_power(w: &Waveform, frame_ms: f64, hop_ms: f64, n_fft: usize) -> Result<Spectrogram> {
    let frame_len = ms_to_samples(frame_ms, w.sample_rate());
    if n_fft < frame_len || n_fft < 2 {
        return Err(Error::Domain(format!(
            "n_fft {n_fft} is smaller than the frame length {frame_len}"
        )));
    }
    let frames = frame_signal(w, frame_ms, hop_ms, WindowKind::Hamming)?;
    let num_bins = n_fft / 2;
    let num_frames = frames.num_frames();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut values = Matrix::zeros(num_bins, num_frames);
    for t in 0..num_frames {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (b, &s) in buf.iter_mut().zip(frames.frames.row(t)) {
            b.re = s;
        }
        fft.process(&mut buf);
        for (k, c) in buf.iter().take(num_bins).enumerate() {
            values.set(k, t, c.norm_sqr());
        }
    }
    let rate = w.sample_rate() as f64;
    Ok(Spectrogram {
        values,
        bin_freqs: (0..num_bins)
            .map(|k| k as f64 * rate / n_fft as f64)
            .collect(),
        hop: frames.hop,
    })
}
