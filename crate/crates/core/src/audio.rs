//! Audio containers and time-domain utilities.
//!
//! Everything here operates on mono [`Waveform`]s normalized to `[-1, 1]`. The
//! canonical internal rate is 16 kHz; other rates are reduced by integer-factor
//! decimation only.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Canonical sample rate for all analysis.
pub const CANONICAL_RATE: u32 = 16_000;

const PCM16_SCALE: f64 = 32768.0;

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Domain("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Data(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean power (mean of squared samples). Zero for an empty waveform.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    /// Multiplies every sample by `gain`.
    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Sample encoding used when writing WAV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WavEncoding {
    #[default]
    Pcm16,
    Float32,
}

/// Outcome of a WAV write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WriteReport {
    /// Samples outside `[-1, 1]` that were clipped.
    pub clipped: usize,
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => match io.kind() {
            std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied => {
                Error::io(path, io)
            }
            _ => Error::Parse(format!("{}: {io}", path.display())),
        },
        hound::Error::FormatError(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        hound::Error::TooWide => Error::Format {
            field: "bits_per_sample",
            value: "too wide".into(),
        },
        hound::Error::UnfinishedSample => {
            Error::Parse(format!("{}: truncated sample data", path.display()))
        }
        hound::Error::Unsupported => Error::Format {
            field: "format",
            value: "unsupported WAVE variant".into(),
        },
        hound::Error::InvalidSampleFormat => Error::Format {
            field: "sample_format",
            value: "invalid".into(),
        },
    }
}

/// Reads a mono PCM16 or float32 RIFF/WAVE file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format {
            field: "channels",
            value: spec.channels.to_string(),
        });
    }
    // hound reports a short data chunk only via the iterator, so compare counts explicitly.
    let expected = reader.len() as usize;
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Int, bits) => {
            return Err(Error::Format {
                field: "bits_per_sample",
                value: format!("{bits} (integer PCM must be 16-bit)"),
            })
        }
        (hound::SampleFormat::Float, bits) => {
            return Err(Error::Format {
                field: "bits_per_sample",
                value: format!("{bits} (float PCM must be 32-bit)"),
            })
        }
    };
    if samples.len() != expected {
        return Err(Error::Parse(format!(
            "{}: truncated data chunk ({} of {} samples)",
            path.display(),
            samples.len(),
            expected
        )));
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a waveform as mono PCM16. Samples outside `[-1, 1]` are clipped and counted.
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<WriteReport> {
    write_wav_with(w, path, WavEncoding::Pcm16)
}

/// Writes a waveform with the given encoding via a temporary file and rename.
pub fn write_wav_with(
    w: &Waveform,
    path: impl AsRef<Path>,
    encoding: WavEncoding,
) -> Result<WriteReport> {
    let path = path.as_ref();
    let spec = match encoding {
        WavEncoding::Pcm16 => hound::WavSpec {
            channels: 1,
            sample_rate: w.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        },
        WavEncoding::Float32 => hound::WavSpec {
            channels: 1,
            sample_rate: w.sample_rate,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        },
    };
    let tmp = tmp_path(path);
    let mut report = WriteReport::default();
    {
        let mut writer = hound::WavWriter::create(&tmp, spec).map_err(|e| match e {
            hound::Error::IoError(io) => Error::io(path, io),
            other => map_hound(path, other),
        })?;
        for &s in &w.samples {
            let clipped = if s > 1.0 {
                report.clipped += 1;
                1.0
            } else if s < -1.0 {
                report.clipped += 1;
                -1.0
            } else {
                s
            };
            let res = match encoding {
                WavEncoding::Pcm16 => {
                    let q = (clipped * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)
                }
                WavEncoding::Float32 => writer.write_sample(clipped as f32),
            };
            res.map_err(|e| map_hound(path, e))?;
        }
        writer.finalize().map_err(|e| map_hound(path, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    if report.clipped > 0 {
        log::warn!(
            "{}: clipped {} samples outside [-1, 1]",
            path.display(),
            report.clipped
        );
    }
    Ok(report)
}

pub(crate) fn tmp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Windowed-sinc low-pass FIR (Blackman window), unit DC gain.
///
/// `cutoff` is in cycles per sample (0 < cutoff < 0.5); `half_len` taps on each side.
pub(crate) fn lowpass_fir(cutoff: f64, half_len: usize) -> Vec<f64> {
    let n = 2 * half_len + 1;
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let m = i as f64 - half_len as f64;
            let sinc = if m == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * m).sin() / (PI * m)
            };
            let w = 0.42 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()
                + 0.08 * (4.0 * PI * i as f64 / (n - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Reduces the sample rate by an integer factor after zero-phase anti-alias filtering.
///
/// The low-pass cutoff sits at 0.45 of the output Nyquist frequency; the output
/// has `floor(len / factor)` samples.
pub fn resample_decimate(w: &Waveform, factor: usize) -> Result<Waveform> {
    if factor == 0 {
        return Err(Error::Domain("decimation factor must be at least 1".into()));
    }
    if factor == 1 {
        return Ok(w.clone());
    }
    let out_rate = w.sample_rate / factor as u32;
    if out_rate == 0 || w.sample_rate % factor as u32 != 0 {
        return Err(Error::Domain(format!(
            "sample rate {} is not divisible by {factor}",
            w.sample_rate
        )));
    }
    // Output Nyquist in cycles/sample at the input rate is 0.5 / factor.
    let cutoff = 0.45 * 0.5 / factor as f64;
    let half = 16 * factor;
    let taps = lowpass_fir(cutoff, half);
    let x = &w.samples;
    let out_len = x.len() / factor;
    let out = (0..out_len)
        .map(|j| {
            let center = (j * factor) as isize;
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let idx = center + k as isize - half as isize;
                if idx >= 0 && (idx as usize) < x.len() {
                    acc += t * x[idx as usize];
                }
            }
            acc
        })
        .collect();
    Waveform::new(out, out_rate)
}

/// Analysis window shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Rectangular,
    #[default]
    Hamming,
    Hann,
}

impl WindowKind {
    /// Symmetric window of `len` points.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        if len <= 1 {
            return vec![1.0; len];
        }
        let denom = (len - 1) as f64;
        (0..len)
            .map(|n| {
                let phase = 2.0 * PI * n as f64 / denom;
                match self {
                    WindowKind::Rectangular => 1.0,
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                }
            })
            .collect()
    }
}

/// Overlapping windowed slices of a waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Matrix,
    pub frame_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl FrameSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }
}

/// Converts a duration in milliseconds into a whole number of samples.
pub fn ms_to_samples(ms: f64, rate: u32) -> usize {
    (ms * rate as f64 / 1000.0).round() as usize
}

/// Number of full frames that fit in `len` samples.
pub fn frame_count(len: usize, frame_len: usize, hop: usize) -> usize {
    if len < frame_len || frame_len == 0 {
        0
    } else {
        (len - frame_len) / hop + 1
    }
}

fn check_framing(frame_ms: f64, hop_ms: f64) -> Result<()> {
    if !(hop_ms > 0.0 && frame_ms >= hop_ms && frame_ms.is_finite()) {
        return Err(Error::Domain(format!(
            "framing requires frame_ms >= hop_ms > 0 (got {frame_ms} / {hop_ms})"
        )));
    }
    Ok(())
}

/// Splits a waveform into windowed frames. Row `i` starts at sample `i * hop`.
///
/// A waveform shorter than one frame yields an empty sequence.
pub fn frame_signal(
    w: &Waveform,
    frame_ms: f64,
    hop_ms: f64,
    window: WindowKind,
) -> Result<FrameSequence> {
    check_framing(frame_ms, hop_ms)?;
    let frame_len = ms_to_samples(frame_ms, w.sample_rate);
    let hop = ms_to_samples(hop_ms, w.sample_rate).max(1);
    if frame_len == 0 {
        return Err(Error::Domain("frame shorter than one sample".into()));
    }
    let n = frame_count(w.len(), frame_len, hop);
    let win = window.coefficients(frame_len);
    let mut frames = Matrix::zeros(n, frame_len);
    for i in 0..n {
        let src = &w.samples[i * hop..i * hop + frame_len];
        for ((dst, s), c) in frames.row_mut(i).iter_mut().zip(src).zip(&win) {
            *dst = s * c;
        }
    }
    Ok(FrameSequence {
        frames,
        frame_len,
        hop,
        window,
    })
}

/// Default VAD floor relative to the loudest frame.
pub const DEFAULT_VAD_FLOOR_DB: f64 = 30.0;

/// Energy-based voice activity detection.
///
/// A frame is kept iff its energy is nonzero and within `floor_db` of the
/// loudest frame. The mask is aligned with [`frame_signal`] using the same
/// framing parameters.
pub fn energy_vad(w: &Waveform, frame_ms: f64, hop_ms: f64, floor_db: f64) -> Result<Vec<bool>> {
    if !(floor_db > 0.0) {
        return Err(Error::Domain(format!(
            "VAD floor must be positive, got {floor_db}"
        )));
    }
    let frames = frame_signal(w, frame_ms, hop_ms, WindowKind::Rectangular)?;
    let energies: Vec<f64> = frames
        .frames
        .iter_rows()
        .map(|r| r.iter().map(|s| s * s).sum())
        .collect();
    let max = energies.iter().cloned().fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return Ok(vec![false; energies.len()]);
    }
    let threshold_db = 10.0 * max.log10() - floor_db;
    Ok(energies
        .iter()
        .map(|&e| e > 0.0 && 10.0 * e.log10() >= threshold_db)
        .collect())
}

/// Concatenates the samples of the frames kept by a VAD mask (hop-sized blocks,
/// last kept frame contributes its full length).
pub fn trim_silence(w: &Waveform, mask: &[bool], frame_len: usize, hop: usize) -> Waveform {
    let mut out = Vec::new();
    let mut covered_until = 0usize;
    for (i, &keep) in mask.iter().enumerate() {
        if !keep {
            continue;
        }
        let start = (i * hop).max(covered_until);
        let end = (i * hop + frame_len).min(w.len());
        if start < end {
            out.extend_from_slice(&w.samples[start..end]);
            covered_until = end;
        }
    }
    Waveform {
        samples: out,
        sample_rate: w.sample_rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, len: usize, amp: f64) -> Waveform {
        let s = (0..len)
            .map(|n| amp * (2.0 * PI * freq * n as f64 / rate as f64).sin())
            .collect();
        Waveform::new(s, rate).unwrap()
    }

    fn dft_peak(x: &[f64]) -> usize {
        // Brute-force magnitude DFT over the first half.
        let n = x.len();
        (0..n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                (k, re * re + im * im)
            })
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0
    }

    #[test]
    fn rejects_bad_waveforms() {
        assert!(Waveform::new(vec![0.0], 0).is_err());
        assert!(Waveform::new(vec![f64::NAN], 16000).is_err());
    }

    #[test]
    fn wav_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let s: Vec<f64> = (0..16000)
            .map(|i| ((i * 7919) % 2001) as f64 / 1000.0 - 1.0)
            .collect();
        let w = Waveform::new(s, 16000).unwrap();
        let rep = write_wav(&w, &p).unwrap();
        assert_eq!(rep.clipped, 0);
        let r = read_wav(&p).unwrap();
        assert_eq!(r.len(), 16000);
        assert_eq!(r.sample_rate(), 16000);
        let err = w
            .samples()
            .iter()
            .zip(r.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 2f64.powi(-15), "max err {err}");
    }

    #[test]
    fn int16_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&p, spec).unwrap();
        wr.write_sample(32767i16).unwrap();
        wr.write_sample(-32768i16).unwrap();
        wr.finalize().unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.samples()[0], 32767.0 / 32768.0);
        assert_eq!(r.samples()[1], -1.0);
    }

    #[test]
    fn stereo_and_bit_depth_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&p, spec).unwrap();
        wr.write_sample(0i16).unwrap();
        wr.write_sample(0i16).unwrap();
        wr.finalize().unwrap();
        match read_wav(&p) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "channels"),
            other => panic!("expected channel error, got {other:?}"),
        }

        let p = dir.path().join("b.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&p, spec).unwrap();
        wr.write_sample(0i32).unwrap();
        wr.finalize().unwrap();
        match read_wav(&p) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "bits_per_sample"),
            other => panic!("expected bit-depth error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        let w = Waveform::new(vec![0.25; 1000], 16000).unwrap();
        write_wav(&w, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 501]).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Parse(_))));
        std::fs::write(&p, &bytes[..20]).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Parse(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            read_wav("/nonexistent/dir/x.wav"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn empty_and_clipped_writes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.wav");
        write_wav(&Waveform::new(vec![], 16000).unwrap(), &p).unwrap();
        assert_eq!(read_wav(&p).unwrap().len(), 0);

        let p = dir.path().join("c.wav");
        let rep = write_wav(&Waveform::new(vec![1.5, -2.0, 0.5], 16000).unwrap(), &p).unwrap();
        assert_eq!(rep.clipped, 2);
        let r = read_wav(&p).unwrap();
        assert!((r.samples()[0] - 1.0).abs() <= 2f64.powi(-15));
        assert_eq!(r.samples()[1], -1.0);
    }

    #[test]
    fn float32_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let w = Waveform::new(vec![0.1, -0.7, 0.3333], 8000).unwrap();
        write_wav_with(&w, &p, WavEncoding::Float32).unwrap();
        let r = read_wav(&p).unwrap();
        for (a, b) in w.samples().iter().zip(r.samples()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn decimation() {
        let w = tone(100.0, 48000, 4800, 0.5);
        assert!(matches!(resample_decimate(&w, 0), Err(Error::Domain(_))));
        assert_eq!(resample_decimate(&w, 1).unwrap(), w);

        let d = resample_decimate(&w, 3).unwrap();
        assert_eq!(d.sample_rate(), 16000);
        assert_eq!(d.len(), 1600);
        let odd = Waveform::new(vec![0.0; 100], 48000).unwrap();
        assert_eq!(resample_decimate(&odd, 3).unwrap().len(), 33);

        // 1600 samples at 16 kHz: bin spacing 10 Hz, 100 Hz lands on bin 10.
        assert!((dft_peak(d.samples()) as i64 - 10).abs() <= 1);
    }

    #[test]
    fn decimation_suppresses_alias() {
        // 7 kHz is below the 8 kHz output Nyquist but far above the 3.6 kHz cutoff.
        let w = tone(7000.0, 48000, 48000, 1.0);
        let d = resample_decimate(&w, 3).unwrap();
        let mid = &d.samples()[200..d.len() - 200];
        let p: f64 = mid.iter().map(|s| s * s).sum::<f64>() / mid.len() as f64;
        assert!(10.0 * (p / 0.5).log10() < -40.0);
    }

    #[test]
    fn framing_counts_and_windows() {
        let w = Waveform::new(vec![1.0; 16000], 16000).unwrap();
        let f = frame_signal(&w, 25.0, 10.0, WindowKind::Hamming).unwrap();
        assert_eq!(f.frame_len, 400);
        assert_eq!(f.hop, 160);
        assert_eq!(f.num_frames(), (16000 - 400) / 160 + 1);

        let w = Waveform::new(vec![1.0; 400], 16000).unwrap();
        let f = frame_signal(&w, 25.0, 10.0, WindowKind::Rectangular).unwrap();
        assert_eq!(f.num_frames(), 1);
        assert!(f.frames.row(0).iter().all(|&v| v == 1.0));

        let w = Waveform::new(vec![1.0; 399], 16000).unwrap();
        assert_eq!(
            frame_signal(&w, 25.0, 10.0, WindowKind::Hann)
                .unwrap()
                .num_frames(),
            0
        );
        assert!(frame_signal(&w, 5.0, 10.0, WindowKind::Hann).is_err());
    }

    #[test]
    fn frame_rows_are_contiguous_slices() {
        let s: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let w = Waveform::new(s.clone(), 16000).unwrap();
        let f = frame_signal(&w, 25.0, 10.0, WindowKind::Rectangular).unwrap();
        for i in 0..f.num_frames() {
            assert_eq!(f.frames.row(i), &s[i * 160..i * 160 + 400]);
        }
    }

    #[test]
    fn vad_silence_and_constant() {
        let z = Waveform::new(vec![0.0; 8000], 16000).unwrap();
        assert!(energy_vad(&z, 20.0, 10.0, 30.0).unwrap().iter().all(|k| !k));
        let c = Waveform::new(vec![0.3; 8000], 16000).unwrap();
        assert!(energy_vad(&c, 20.0, 10.0, 30.0).unwrap().iter().all(|&k| k));
        assert!(energy_vad(&c, 20.0, 10.0, 0.0).is_err());
    }

    #[test]
    fn vad_tone_burst() {
        // Silence floor 60 dB below a burst; burst boundaries at 500 Hz phase peaks.
        let rate = 16000;
        let len = 16000;
        let (b0, b1) = (4000usize, 4000 + 256 * 25);
        let mut s = vec![0.0; len];
        let mut lcg = 12345u64;
        for (n, v) in s.iter_mut().enumerate() {
            lcg = lcg
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let noise = ((lcg >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 2e-3;
            *v = noise;
            if n >= b0 && n < b1 {
                *v += (2.0 * PI * 500.0 * (n - b0) as f64 / rate as f64).cos();
            }
        }
        let w = Waveform::new(s, rate).unwrap();
        let mask = energy_vad(&w, 25.0, 10.0, 30.0).unwrap();
        let (fl, hop) = (400, 160);
        for (i, &k) in mask.iter().enumerate() {
            let (s0, s1) = (i * hop, i * hop + fl);
            let overlaps = s1 > b0 && s0 < b1;
            assert_eq!(k, overlaps, "frame {i}");
        }
    }

    #[test]
    fn trim_keeps_only_voiced_blocks() {
        let mut s = vec![0.0; 3200];
        for v in s.iter_mut().skip(1600) {
            *v = 0.5;
        }
        let w = Waveform::new(s, 16000).unwrap();
        let mask = energy_vad(&w, 20.0, 10.0, 30.0).unwrap();
        let t = trim_silence(&w, &mask, 320, 160);
        assert!(t.samples().iter().filter(|&&v| v == 0.0).count() < 320);
        assert!(t.len() >= 1600);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn frame_count_formula(len in 0usize..5000, frame_len in 1usize..500, hop in 1usize..300) {
                prop_assume!(frame_len >= hop);
                let n = frame_count(len, frame_len, hop);
                if len >= frame_len {
                    prop_assert_eq!(n, (len - frame_len) / hop + 1);
                    prop_assert!((n - 1) * hop + frame_len <= len);
                    prop_assert!(n * hop + frame_len > len);
                } else {
                    prop_assert_eq!(n, 0);
                }
            }

            #[test]
            fn vad_scale_invariant(seed in 0u64..1000, gain in 0.01f64..100.0) {
                let mut lcg = seed.wrapping_add(1);
                let s: Vec<f64> = (0..4000).map(|n| {
                    lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let u = (lcg >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                    u * (1.0 + (n as f64 / 300.0).sin()).powi(4) * 0.1
                }).collect();
                let w = Waveform::new(s, 16000).unwrap();
                let a = energy_vad(&w, 20.0, 10.0, 30.0).unwrap();
                let b = energy_vad(&w.scaled(gain), 20.0, 10.0, 30.0).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
