//! Experiment configuration (TOML). Unknown keys are rejected and every random
//! seed must be spelled out.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asv::AsvConfig;
use crate::audio::{read_wav, WavEncoding};
use crate::detectors::{CqccGmmConfig, LcnnConfig};
use crate::enhancer::SeganConfig;
use crate::error::{Error, Result};
use crate::metrics::TdcfParams;
use crate::signal::{synth_ir, ChannelNoise, IrKind, NoiseKind, ReplayChannel};

/// The desk-scale experiment shipped with the crate.
pub const DESK_CONFIG: &str = include_str!("../../configs/desk.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub corpus: u64,
    pub channels: u64,
    pub cm: u64,
    pub segan: u64,
    pub attack: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Clean source utterances; `None` synthesizes pseudo-speech.
    pub source_manifest: Option<PathBuf>,
    pub speakers: usize,
    pub phrases: usize,
    /// Sessions per speaker and phrase, split alternately into the genuine
    /// and stolen halves.
    pub sessions: usize,
    pub syllables: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            source_manifest: None,
            speakers: 8,
            phrases: 2,
            sessions: 8,
            syllables: 5,
        }
    }
}

/// Speakers are sorted by id; the first `train_speakers` train the
/// countermeasures, the UBM and the enhancers, the next `dev_speakers` form
/// the LCNN development set and the rest are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_speakers: usize,
    pub dev_speakers: usize,
    /// Genuine sessions per speaker and phrase used for enrollment.
    pub enroll_sessions: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_speakers: 4,
            dev_speakers: 0,
            enroll_sessions: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSource {
    White,
    Pink,
    Recorded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseSource,
    /// WAV loop for `recorded` noise.
    #[serde(default)]
    pub path: Option<PathBuf>,
    pub snr_db: f64,
}

/// A simulated acoustic path: cascaded impulse responses, optional band
/// limit and additive noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub name: String,
    #[serde(default)]
    pub ir: Vec<IrKind>,
    /// A measured impulse response appended to the cascade.
    #[serde(default)]
    pub ir_wav: Option<PathBuf>,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
    #[serde(default)]
    pub bandlimit_hz: Option<f64>,
}

fn full_convolution(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, h) in b.iter().enumerate() {
            y[i + j] += x * h;
        }
    }
    y
}

impl ChannelConfig {
    pub fn build(&self, rate: u32, seed: u64) -> Result<ReplayChannel> {
        let mut h = vec![1.0];
        for (i, kind) in self.ir.iter().enumerate() {
            let part = synth_ir(*kind, rate, derive_seed(seed, &format!("{}/ir{i}", self.name)))?;
            h = full_convolution(&h, &part);
        }
        if let Some(p) = &self.ir_wav {
            let w = read_wav(p)?;
            if w.sample_rate() != rate {
                return Err(Error::Data(format!(
                    "{}: impulse response at {} Hz, experiment at {rate} Hz",
                    p.display(),
                    w.sample_rate()
                )));
            }
            h = full_convolution(&h, w.samples());
        }
        let noise = match &self.noise {
            None => None,
            Some(n) => {
                let kind = match (n.kind, &n.path) {
                    (NoiseSource::White, None) => NoiseKind::White,
                    (NoiseSource::Pink, None) => NoiseKind::Pink,
                    (NoiseSource::Recorded, Some(p)) => NoiseKind::Recorded(Arc::new(read_wav(p)?.into_samples())),
                    (NoiseSource::Recorded, None) => {
                        return Err(Error::Config(format!("channel {}: recorded noise needs a path", self.name)))
                    }
                    (_, Some(_)) => {
                        return Err(Error::Config(format!(
                            "channel {}: noise path only applies to recorded noise",
                            self.name
                        )))
                    }
                };
                Some(ChannelNoise {
                    kind,
                    snr_db: n.snr_db,
                })
            }
        };
        Ok(ReplayChannel {
            impulse_response: h,
            noise,
            bandlimit_hz: self.bandlimit_hz,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnhancerSpec {
    pub name: String,
    /// Degradation applied to clean speech to form training pairs.
    pub train_channel: ChannelConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmKind {
    CqccGmm,
    Lcnn,
}

impl CmKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CmKind::CqccGmm => "cqcc_gmm",
            CmKind::Lcnn => "lcnn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Relative paths are taken from the working directory.
    pub output_dir: PathBuf,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    #[serde(default = "default_encoding")]
    pub wav_encoding: WavEncoding,
    pub seeds: Seeds,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub split: SplitConfig,
    /// The verification-side microphone, applied to genuine and replayed audio.
    pub recording: ChannelConfig,
    /// The attacker's covert recording of the target.
    pub stolen: ChannelConfig,
    /// Replay device grid, one entry per loudspeaker/room pairing.
    pub channels: Vec<ChannelConfig>,
    #[serde(default = "default_cms")]
    pub countermeasures: Vec<CmKind>,
    #[serde(default)]
    pub cqcc_gmm: CqccGmmConfig,
    #[serde(default)]
    pub lcnn: LcnnConfig,
    #[serde(default)]
    pub asv: AsvConfig,
    #[serde(default)]
    pub segan: SeganConfig,
    /// The first entry is the primary enhancement condition.
    pub enhancers: Vec<EnhancerSpec>,
    #[serde(default)]
    pub tdcf: TdcfParams,
}

fn default_rate() -> u32 {
    crate::audio::CANONICAL_RATE
}

fn default_encoding() -> WavEncoding {
    WavEncoding::Float32
}

fn default_cms() -> Vec<CmKind> {
    vec![CmKind::CqccGmm, CmKind::Lcnn]
}

/// Condition name of the conventional (unenhanced) attack.
pub const PLAIN: &str = "none";

fn check_name(what: &str, name: &str) -> Result<()> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(Error::Config(format!(
            "{what} name {name:?} must be non-empty ASCII letters, digits, '_' or '-'"
        )));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn desk() -> Self {
        Self::from_toml_str(DESK_CONFIG).expect("bundled configuration is valid")
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Config("at least one replay channel is required".into()));
        }
        if self.countermeasures.is_empty() {
            return Err(Error::Config("no countermeasure selected".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for c in &self.channels {
            check_name("channel", &c.name)?;
            if !names.insert(c.name.as_str()) {
                return Err(Error::Config(format!("duplicate channel name {:?}", c.name)));
            }
        }
        let mut enh = std::collections::BTreeSet::new();
        for e in &self.enhancers {
            check_name("enhancer", &e.name)?;
            if e.name == PLAIN || !enh.insert(e.name.as_str()) {
                return Err(Error::Config(format!("enhancer name {:?} is reserved or repeated", e.name)));
            }
        }
        let c = &self.corpus;
        if c.source_manifest.is_none() && (c.speakers == 0 || c.phrases == 0 || c.sessions < 2 || c.syllables == 0) {
            return Err(Error::Config(
                "synthetic corpus needs speakers, phrases, syllables and at least two sessions".into(),
            ));
        }
        let s = &self.split;
        if s.train_speakers == 0 || s.enroll_sessions == 0 {
            return Err(Error::Config("split needs training speakers and enrollment sessions".into()));
        }
        if c.source_manifest.is_none() && s.train_speakers + s.dev_speakers >= c.speakers {
            return Err(Error::Config("split leaves no evaluation speakers".into()));
        }
        if self.lcnn.lr_schedule && s.dev_speakers == 0 && self.countermeasures.contains(&CmKind::Lcnn) {
            return Err(Error::Config("LCNN learning-rate schedule needs dev_speakers > 0".into()));
        }
        if self.segan.sample_rate != self.sample_rate {
            return Err(Error::Config(format!(
                "enhancer rate {} differs from experiment rate {}",
                self.segan.sample_rate, self.sample_rate
            )));
        }
        self.segan.validate()?;
        self.lcnn.validate()?;
        self.tdcf.validate()?;
        Ok(())
    }
}

/// Independent stream seed for a named stage or file.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_parses_and_round_trips() {
        let cfg = ExperimentConfig::desk();
        assert_eq!(cfg.channels.len(), 2);
        assert_eq!(cfg.enhancers.len(), 2);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = DESK_CONFIG.replacen("[seeds]", "[seeds]\ncorpsu = 3", 1);
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(Error::Config(_))));
        let bad = DESK_CONFIG.replacen("[segan]", "[segan]\nlamda = 3.0", 1);
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn seeds_are_mandatory() {
        let start = DESK_CONFIG.find("attack =").unwrap();
        let end = start + DESK_CONFIG[start..].find('\n').unwrap();
        let bad = format!("{}{}", &DESK_CONFIG[..start], &DESK_CONFIG[end..]);
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_names_and_splits() {
        let mut cfg = ExperimentConfig::desk();
        cfg.channels[1].name = cfg.channels[0].name.clone();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::desk();
        cfg.enhancers[0].name = PLAIN.into();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::desk();
        cfg.channels[0].name = "a/b".into();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::desk();
        cfg.split.train_speakers = cfg.corpus.speakers;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn channels_build_deterministically() {
        let cfg = ExperimentConfig::desk();
        let a = cfg.channels[0].build(16000, 1).unwrap();
        assert_eq!(a, cfg.channels[0].build(16000, 1).unwrap());
        assert!(a.impulse_response.len() > 1);
        let bad = ChannelConfig {
            name: "x".into(),
            ir: vec![],
            ir_wav: None,
            noise: Some(NoiseConfig {
                kind: NoiseSource::Recorded,
                path: None,
                snr_db: 10.0,
            }),
            bandlimit_hz: None,
        };
        assert!(matches!(bad.build(16000, 0), Err(Error::Config(_))));
    }

    #[test]
    fn derived_seeds_differ_by_tag() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
        assert_eq!(derive_seed(7, "x"), derive_seed(7, "x"));
    }
}
