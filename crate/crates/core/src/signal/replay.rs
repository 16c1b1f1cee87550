//! Desk-scale stand-in for loudspeaker playback and re-recording:
//! convolution with a device/room impulse response, optional band limiting,
//! and additive noise at a set signal-to-noise ratio.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{lowpass_fir, Waveform};
use crate::error::{Error, Result};

/// Above this many taps convolution goes through the FFT.
const DIRECT_CONV_MAX_TAPS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    White,
    Pink,
    /// A recorded noise loop, repeated as needed.
    Recorded(Arc<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelNoise {
    pub kind: NoiseKind,
    pub snr_db: f64,
}

/// A simulated playback/recording chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayChannel {
    pub impulse_response: Vec<f64>,
    /// `None` disables additive noise.
    pub noise: Option<ChannelNoise>,
    pub bandlimit_hz: Option<f64>,
}

impl ReplayChannel {
    pub fn identity() -> Self {
        Self {
            impulse_response: vec![1.0],
            noise: None,
            bandlimit_hz: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.impulse_response.is_empty() {
            return Err(Error::Domain(
                "replay channel impulse response is empty".into(),
            ));
        }
        if self.impulse_response.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("impulse response has non-finite taps".into()));
        }
        if let Some(n) = &self.noise {
            if !n.snr_db.is_finite() {
                return Err(Error::Domain(
                    "SNR must be finite; disable noise explicitly instead".into(),
                ));
            }
            if let NoiseKind::Recorded(r) = &n.kind {
                if r.is_empty() {
                    return Err(Error::Domain("recorded noise is empty".into()));
                }
            }
        }
        Ok(())
    }
}

/// Linear convolution truncated to the length of `x` (causal, no look-ahead).
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    if h.len() <= DIRECT_CONV_MAX_TAPS {
        return (0..x.len())
            .map(|n| {
                h.iter()
                    .enumerate()
                    .take(n + 1)
                    .map(|(j, t)| t * x[n - j])
                    .sum()
            })
            .collect();
    }
    let size = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut a: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    a.resize(size, Complex::new(0.0, 0.0));
    let mut b: Vec<Complex<f64>> = h.iter().map(|&v| Complex::new(v, 0.0)).collect();
    b.resize(size, Complex::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a.iter().take(x.len()).map(|c| c.re / size as f64).collect()
}

/// Zero-phase (centred, symmetric) low-pass filter at `cutoff_hz`.
pub fn zero_phase_lowpass(x: &[f64], rate: u32, cutoff_hz: f64) -> Result<Vec<f64>> {
    let nyq = rate as f64 / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyq) {
        return Err(Error::Domain(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {nyq})"
        )));
    }
    let half = 64;
    let taps = lowpass_fir(cutoff_hz / rate as f64, half);
    let mut padded = x.to_vec();
    padded.extend(std::iter::repeat(0.0).take(half));
    let y = convolve(&padded, &taps);
    Ok(y[half..].to_vec())
}

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Pink (1/f) noise by Kellet's refined filtering of white noise.
fn pink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    (0..n)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let out = b[..6].iter().sum::<f64>() + b[6] + w * 0.5362;
            b[6] = w * 0.115926;
            out
        })
        .collect()
}

fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Passes a waveform through the channel. Deterministic for a fixed seed.
pub fn simulate_replay(w: &Waveform, ch: &ReplayChannel, seed: u64) -> Result<Waveform> {
    if w.is_empty() {
        return Err(Error::Domain("cannot replay an empty waveform".into()));
    }
    ch.validate()?;
    let mut y = convolve(w.samples(), &ch.impulse_response);
    if let Some(cut) = ch.bandlimit_hz {
        y = zero_phase_lowpass(&y, w.sample_rate(), cut)?;
    }
    if let Some(noise) = &ch.noise {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = match &noise.kind {
            NoiseKind::White => white(&mut rng, y.len()),
            NoiseKind::Pink => pink(&mut rng, y.len()),
            NoiseKind::Recorded(rec) => {
                // random loop offset keeps different utterances decorrelated
                let off = rand::Rng::random_range(&mut rng, 0..rec.len());
                (0..y.len()).map(|i| rec[(off + i) % rec.len()]).collect()
            }
        };
        let ps = mean_power(&y);
        let pn = mean_power(&n);
        if ps > 0.0 && pn > 0.0 {
            let gain = (ps / (pn * 10f64.powf(noise.snr_db / 10.0))).sqrt();
            for (v, e) in y.iter_mut().zip(&n) {
                *v += gain * e;
            }
        }
    }
    Waveform::new(y, w.sample_rate())
}

/// Synthetic impulse-response families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IrKind {
    /// Direct path plus an exponentially decaying white-noise tail reaching
    /// −60 dB after `rt60_s`; energy-normalized.
    RoomDecay { rt60_s: f64 },
    /// Windowed-sinc low-pass with unit DC gain.
    LowpassSpeaker { cutoff_hz: f64, taps: usize },
}

pub fn synth_ir(kind: IrKind, rate: u32, seed: u64) -> Result<Vec<f64>> {
    match kind {
        IrKind::RoomDecay { rt60_s } => {
            if !(rt60_s >= 0.0 && rt60_s.is_finite()) {
                return Err(Error::Domain(format!(
                    "decay time must be >= 0, got {rt60_s}"
                )));
            }
            let len = (rt60_s * rate as f64).ceil() as usize;
            if len <= 1 {
                return Ok(vec![1.0]);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let decay = -3.0 * std::f64::consts::LN_10 / len as f64;
            let mut h: Vec<f64> = (0..len)
                .map(|n| {
                    if n == 0 {
                        1.0
                    } else {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        0.3 * g * (decay * n as f64).exp()
                    }
                })
                .collect();
            let e = h.iter().map(|t| t * t).sum::<f64>().sqrt();
            h.iter_mut().for_each(|t| *t /= e);
            Ok(h)
        }
        IrKind::LowpassSpeaker { cutoff_hz, taps } => {
            let nyq = rate as f64 / 2.0;
            if !(cutoff_hz > 0.0 && cutoff_hz < nyq) {
                return Err(Error::Domain(format!(
                    "speaker cutoff {cutoff_hz} Hz must lie in (0, {nyq})"
                )));
            }
            if taps < 3 {
                return Err(Error::Domain("speaker filter needs at least 3 taps".into()));
            }
            Ok(lowpass_fir(cutoff_hz / rate as f64, taps / 2))
        }
    }
}
