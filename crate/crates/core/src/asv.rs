//! Text-dependent GMM-UBM speaker verification: UBM training on pooled MFCC
//! frames, MAP mean adaptation per speaker and passphrase, and average
//! log-likelihood-ratio scoring.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::codec::{self, ConfigDigest};
use crate::error::{Error, Result};
use crate::features::{mfcc_pipeline, MfccConfig};
use crate::gmm::{accumulate_stats, decode_gmm, encode_gmm, log_likelihood, map_adapt_means, model_digest, train_gmm, DiagGmm, EmConfig, SufficientStats};
use crate::matrix::Matrix;
use crate::metrics::TrialClass;

/// A UBM needs at least this many frames per component.
pub const MIN_FRAMES_PER_COMPONENT: usize = 10;

const MAGIC: &[u8; 4] = b"SKSM";
const VERSION: u32 = 1;
const WHAT: &str = "speaker model file";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsvConfig {
    pub mfcc: MfccConfig,
    pub ubm: EmConfig,
    pub relevance: f64,
}

impl Default for AsvConfig {
    fn default() -> Self {
        Self {
            mfcc: MfccConfig::default(),
            ubm: EmConfig::default(),
            relevance: 3.0,
        }
    }
}

/// Verifier features of one utterance.
pub fn asv_features(w: &Waveform, cfg: &MfccConfig) -> Result<Matrix> {
    Ok(mfcc_pipeline(w, cfg)?.values)
}

/// Fits a UBM on the pooled frames of every feature matrix.
pub fn train_ubm_features(features: &[Matrix], em: &EmConfig) -> Result<DiagGmm> {
    let Some(first) = features.first() else {
        return Err(Error::Data("empty UBM training corpus".into()));
    };
    let mut pooled = first.clone();
    for f in &features[1..] {
        pooled = pooled.vstack(f)?;
    }
    let need = MIN_FRAMES_PER_COMPONENT * em.components;
    if pooled.rows() < need {
        return Err(Error::Data(format!(
            "{} UBM frames for {} components; need at least {need}",
            pooled.rows(),
            em.components
        )));
    }
    Ok(train_gmm(&pooled, em)?.0)
}

pub fn train_ubm(utterances: &[Waveform], cfg: &AsvConfig) -> Result<DiagGmm> {
    let feats = utterances
        .iter()
        .map(|w| asv_features(w, &cfg.mfcc))
        .collect::<Result<Vec<_>>>()?;
    train_ubm_features(&feats, &cfg.ubm)
}

/// A MAP-adapted model for one speaker and passphrase.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerModel {
    pub speaker_id: String,
    pub phrase_id: String,
    pub adapted: DiagGmm,
    /// Digest of the UBM the model was adapted from.
    pub ubm_ref: ConfigDigest,
}

impl SpeakerModel {
    /// `speaker_id/phrase_id`, used as the model column of trial lists.
    pub fn model_id(&self) -> String {
        model_id(&self.speaker_id, &self.phrase_id)
    }
}

pub fn model_id(speaker_id: &str, phrase_id: &str) -> String {
    format!("{speaker_id}/{phrase_id}")
}

/// Adapts the UBM means to the pooled statistics of all enrollment sessions.
pub fn enroll(ubm: &DiagGmm, speaker_id: &str, phrase_id: &str, enrollment: &[Matrix], relevance: f64) -> Result<SpeakerModel> {
    if enrollment.is_empty() {
        return Err(Error::Data(format!("no enrollment utterances for {speaker_id}/{phrase_id}")));
    }
    let mut stats = SufficientStats::zeros(ubm.num_components(), ubm.dim());
    for f in enrollment {
        stats.merge(&accumulate_stats(ubm, f)?)?;
    }
    Ok(SpeakerModel {
        speaker_id: speaker_id.to_string(),
        phrase_id: phrase_id.to_string(),
        adapted: map_adapt_means(ubm, &stats, relevance)?,
        ubm_ref: model_digest(ubm),
    })
}

/// Average per-frame log-likelihood of the adapted model minus that of the UBM.
pub fn asv_score(model: &SpeakerModel, ubm: &DiagGmm, features: &Matrix) -> Result<f64> {
    if model.ubm_ref != model_digest(ubm) {
        return Err(Error::Data(format!("model {} was not adapted from this UBM", model.model_id())));
    }
    Ok(log_likelihood(&model.adapted, features)? - log_likelihood(ubm, features)?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Identity {
    speaker_id: String,
    phrase_id: String,
}

/// Speaker model file: magic, version, a length-prefixed JSON identity block,
/// then the adapted mixture in the GMM format carrying the UBM digest.
pub fn write_speaker_model(m: &SpeakerModel, path: impl AsRef<Path>) -> Result<()> {
    let id = serde_json::to_vec(&Identity {
        speaker_id: m.speaker_id.clone(),
        phrase_id: m.phrase_id.clone(),
    })
    .map_err(|e| Error::Parse(format!("{WHAT}: {e}")))?;
    codec::write_atomic(path.as_ref(), |w| {
        codec::write_header(w, MAGIC, VERSION)?;
        w.write_u64::<LittleEndian>(id.len() as u64)?;
        w.write_all(&id)?;
        encode_gmm(&m.adapted, &m.ubm_ref, w)
    })
}

pub fn read_speaker_model(path: impl AsRef<Path>) -> Result<SpeakerModel> {
    let mut r = codec::open_read(path.as_ref())?;
    codec::read_header(&mut r, MAGIC, VERSION, WHAT)?;
    let n = codec::read_len(&mut r, WHAT)?;
    if n > 1 << 20 {
        return Err(Error::Parse(format!("{WHAT}: identity block of {n} bytes")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(codec::truncated(WHAT))?;
    let id: Identity = serde_json::from_slice(&buf).map_err(|e| Error::Parse(format!("{WHAT}: {e}")))?;
    let (adapted, ubm_ref) = decode_gmm(&mut r)?;
    Ok(SpeakerModel {
        speaker_id: id.speaker_id,
        phrase_id: id.phrase_id,
        adapted,
        ubm_ref,
    })
}

/// One line of a trial list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub model_id: String,
    pub utterance_id: String,
    pub class: TrialClass,
}

/// Writes `model-id<TAB>utterance-id<TAB>class` lines.
pub fn write_trials(trials: &[Trial], path: impl AsRef<Path>) -> Result<()> {
    codec::write_atomic(path.as_ref(), |w| {
        for t in trials {
            writeln!(w, "{}\t{}\t{}", t.model_id, t.utterance_id, t.class)?;
        }
        Ok(())
    })
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (n, line) in codec::open_read(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |m: String| Error::Parse(format!("{}:{}: {m}", path.display(), n + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(at(format!("expected 3 fields, got {}", f.len())));
        }
        let class: TrialClass = f[2].parse().map_err(|e: Error| at(e.to_string()))?;
        if !matches!(class, TrialClass::Target | TrialClass::Nontarget | TrialClass::Spoof) {
            return Err(at(format!("class {class} is not a verification trial class")));
        }
        out.push(Trial {
            model_id: f[0].to_string(),
            utterance_id: f[1].to_string(),
            class,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cloud(n: usize, centre: &[f64], seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| centre.iter().map(|c| c + rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        Matrix::from_rows(&rows, centre.len()).unwrap()
    }

    fn small_ubm() -> DiagGmm {
        let data = cloud(400, &[0.0, 0.0], 1).vstack(&cloud(400, &[4.0, -4.0], 2)).unwrap();
        let em = EmConfig {
            components: 2,
            max_iters: 20,
            tol: 1e-8,
            seed: 3,
        };
        train_ubm_features(&[data], &em).unwrap()
    }

    #[test]
    fn ubm_needs_enough_frames() {
        let em = EmConfig {
            components: 8,
            ..EmConfig::default()
        };
        assert!(matches!(train_ubm_features(&[cloud(79, &[0.0], 0)], &em), Err(Error::Data(_))));
        assert!(train_ubm_features(&[], &em).is_err());
    }

    #[test]
    fn single_component_ubm_matches_moments() {
        let x = cloud(200, &[1.0, 2.0, 3.0], 4);
        let em = EmConfig {
            components: 1,
            max_iters: 5,
            tol: 0.0,
            seed: 0,
        };
        let ubm = train_ubm_features(&[x.clone()], &em).unwrap();
        for d in 0..3 {
            let col = x.column(d);
            let mean = col.iter().sum::<f64>() / 200.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 200.0;
            assert!((ubm.means().get(0, d) - mean).abs() < 1e-10);
            assert!((ubm.variances().get(0, d) - var).abs() < 1e-10);
        }
    }

    #[test]
    fn unadapted_model_scores_zero() {
        let ubm = small_ubm();
        let m = enroll(&ubm, "s", "p", &[Matrix::zeros(0, 2)], 3.0).unwrap();
        assert_eq!(m.adapted, ubm);
        for seed in 0..5 {
            assert_eq!(asv_score(&m, &ubm, &cloud(30, &[1.0, 1.0], seed)).unwrap(), 0.0);
        }
        assert!(enroll(&ubm, "s", "p", &[], 3.0).is_err());
    }

    #[test]
    fn self_trials_beat_impostors() {
        let ubm = small_ubm();
        let enr = cloud(60, &[1.0, -1.0], 10);
        let m = enroll(&ubm, "spk", "p1", &[enr.clone()], 3.0).unwrap();
        assert_eq!(m.adapted.weights(), ubm.weights());
        assert_eq!(m.adapted.variances(), ubm.variances());
        let own = asv_score(&m, &ubm, &enr).unwrap();
        assert!(own > 0.0);
        let impostor = asv_score(&m, &ubm, &cloud(60, &[3.0, -3.0], 11)).unwrap();
        assert!(own > impostor);
    }

    #[test]
    fn enrollment_is_order_invariant() {
        let ubm = small_ubm();
        let (a, b) = (cloud(20, &[0.5, 0.0], 5), cloud(25, &[3.0, -2.0], 6));
        let m1 = enroll(&ubm, "s", "p", &[a.clone(), b.clone()], 3.0).unwrap();
        let m2 = enroll(&ubm, "s", "p", &[b, a], 3.0).unwrap();
        for (x, y) in m1.adapted.means().as_slice().iter().zip(m2.adapted.means().as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn score_requires_the_parent_ubm() {
        let ubm = small_ubm();
        let m = enroll(&ubm, "s", "p", &[cloud(10, &[0.0, 0.0], 7)], 3.0).unwrap();
        let other = DiagGmm::new(vec![1.0], Matrix::zeros(1, 2), Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap()).unwrap();
        assert!(asv_score(&m, &other, &cloud(10, &[0.0, 0.0], 8)).is_err());
    }

    #[test]
    fn model_and_trial_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ubm = small_ubm();
        let m = enroll(&ubm, "spk 1", "phrase-02", &[cloud(10, &[0.0, 1.0], 9)], 3.0).unwrap();
        let p = dir.path().join("m.sksm");
        write_speaker_model(&m, &p).unwrap();
        assert_eq!(read_speaker_model(&p).unwrap(), m);

        let trials = vec![
            Trial {
                model_id: m.model_id(),
                utterance_id: "u1".into(),
                class: TrialClass::Target,
            },
            Trial {
                model_id: m.model_id(),
                utterance_id: "u2".into(),
                class: TrialClass::Spoof,
            },
        ];
        let t = dir.path().join("trials.txt");
        write_trials(&trials, &t).unwrap();
        assert_eq!(read_trials(&t).unwrap(), trials);
        std::fs::write(&t, "m\tu\tgenuine\n").unwrap();
        assert!(read_trials(&t).is_err());
    }

    #[test]
    fn waveform_front_end_dimension() {
        let x: Vec<f64> = (0..16000)
            .map(|n| 0.3 * (0.05 * n as f64).sin() * (1.0 + (0.001 * n as f64).sin()))
            .collect();
        let f = asv_features(&Waveform::new(x, 16000).unwrap(), &MfccConfig::default()).unwrap();
        assert_eq!(f.cols(), 57);
    }
}
