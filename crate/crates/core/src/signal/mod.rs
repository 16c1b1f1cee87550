//! Spectral analysis (STFT, constant-Q) and the simulated replay channel.

mod cqt;
mod replay;
mod stft;

pub use cqt::{cqt_power, CqtConfig, CqtSpectrum};
pub use replay::{
    convolve, simulate_replay, synth_ir, zero_phase_lowpass, ChannelNoise, IrKind, NoiseKind,
    ReplayChannel,
};
pub use stft::{stft_power, Spectrogram};
