//! Toolkit for studying playback-spoofing attacks on speaker verification.
//!
//! The crate covers the whole desk-scale pipeline: audio I/O and a simulated
//! replay channel, CQCC/MFCC front ends, diagonal GMMs, a small differentiable
//! layer kernel, a SEGAN-style waveform enhancer, two playback countermeasures,
//! a GMM-UBM verifier, and EER / tandem-DCF evaluation.

pub mod asv;
pub mod audio;
pub mod codec;
pub mod detectors;
pub mod enhancer;
pub mod error;
pub mod features;
pub mod gmm;
pub mod harness;
pub mod matrix;
pub mod metrics;
pub mod neural;
pub mod signal;

pub use error::{Error, Result};
