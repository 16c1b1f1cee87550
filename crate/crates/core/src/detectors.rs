//! Playback countermeasures. Both produce a per-utterance score where higher
//! means "more genuine".
//!
//! * CQCC-GMM: one mixture per class on pooled CQCC frames; the score is the
//!   log-likelihood ratio of the genuine and playback models.
//! * LCNN: a light CNN with max-feature-map activations over fixed-size log
//!   power spectrogram segments; the score is the genuine-class probability
//!   averaged over segments.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{energy_vad, frame_count, ms_to_samples, trim_silence, Waveform, DEFAULT_VAD_FLOOR_DB};
use crate::codec;
use crate::error::{Error, Result};
use crate::features::{cqcc_extract, CqccConfig, LOG_FLOOR};
use crate::gmm::{decode_gmm, encode_gmm, log_likelihood, train_gmm, DiagGmm, EmConfig};
use crate::matrix::Matrix;
use crate::neural::{load_graph, save_graph, softmax_ce_loss, Adam, AdamConfig, GraphSpec, LayerGraph, LayerSpec, Mode, Padding, Tensor};

/// Class index of genuine speech in LCNN outputs.
pub const GENUINE: usize = 0;
/// Class index of playback speech in LCNN outputs.
pub const PLAYBACK: usize = 1;

/// CQCC frames of one utterance.
pub fn cqcc_features(w: &Waveform, cfg: &CqccConfig) -> Result<Matrix> {
    Ok(cqcc_extract(w, cfg)?.values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CqccGmmConfig {
    pub features: CqccConfig,
    pub em: EmConfig,
    /// Average log-likelihoods per frame; `false` sums them over the utterance.
    pub per_frame_average: bool,
}

impl Default for CqccGmmConfig {
    fn default() -> Self {
        Self {
            features: CqccConfig::default(),
            em: EmConfig::default(),
            per_frame_average: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CqccGmmCm {
    pub genuine_model: DiagGmm,
    pub playback_model: DiagGmm,
    pub config: CqccGmmConfig,
}

fn pool(features: &[Matrix], what: &str) -> Result<Matrix> {
    let Some(first) = features.first() else {
        return Err(Error::Data(format!("no {what} training utterances")));
    };
    let mut pooled = first.clone();
    for f in &features[1..] {
        pooled = pooled.vstack(f)?;
    }
    Ok(pooled)
}

/// Trains both class models from precomputed CQCC frames with the same EM
/// settings and seed.
pub fn cm_train_cqcc_gmm_features(genuine: &[Matrix], playback: &[Matrix], cfg: &CqccGmmConfig) -> Result<CqccGmmCm> {
    let g = pool(genuine, "genuine")?;
    let p = pool(playback, "playback")?;
    Ok(CqccGmmCm {
        genuine_model: train_gmm(&g, &cfg.em)?.0,
        playback_model: train_gmm(&p, &cfg.em)?.0,
        config: *cfg,
    })
}

pub fn cm_train_cqcc_gmm(genuine: &[Waveform], playback: &[Waveform], cfg: &CqccGmmConfig) -> Result<CqccGmmCm> {
    let feats = |ws: &[Waveform]| ws.iter().map(|w| cqcc_features(w, &cfg.features)).collect::<Result<Vec<_>>>();
    cm_train_cqcc_gmm_features(&feats(genuine)?, &feats(playback)?, cfg)
}

impl CqccGmmCm {
    /// Log-likelihood ratio of precomputed frames.
    pub fn score_features(&self, f: &Matrix) -> Result<f64> {
        if self.config.per_frame_average {
            Ok(log_likelihood(&self.genuine_model, f)? - log_likelihood(&self.playback_model, f)?)
        } else {
            let n = f.rows() as f64;
            Ok(n * (log_likelihood(&self.genuine_model, f)? - log_likelihood(&self.playback_model, f)?))
        }
    }

    pub fn score(&self, w: &Waveform) -> Result<f64> {
        self.score_features(&cqcc_features(w, &self.config.features)?)
    }

    /// The same detector with the class models exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            genuine_model: self.playback_model.clone(),
            playback_model: self.genuine_model.clone(),
            config: self.config,
        }
    }
}

pub fn cm_score_cqcc_gmm(cm: &CqccGmmCm, w: &Waveform) -> Result<f64> {
    cm.score(w)
}

const CM_MAGIC: &[u8; 4] = b"SKCG";
const CM_VERSION: u32 = 1;
const CM_WHAT: &str = "CQCC-GMM model file";

/// Magic, version, length-prefixed JSON configuration, then the genuine and
/// playback mixtures in the GMM format.
pub fn write_cqcc_gmm(cm: &CqccGmmCm, path: impl AsRef<Path>) -> Result<()> {
    let cfg = serde_json::to_vec(&cm.config).map_err(|e| Error::Parse(format!("{CM_WHAT}: {e}")))?;
    let digest = codec::config_digest(&cm.config);
    codec::write_atomic(path.as_ref(), |w| {
        codec::write_header(w, CM_MAGIC, CM_VERSION)?;
        w.write_u64::<LittleEndian>(cfg.len() as u64)?;
        w.write_all(&cfg)?;
        encode_gmm(&cm.genuine_model, &digest, w)?;
        encode_gmm(&cm.playback_model, &digest, w)
    })
}

pub fn read_cqcc_gmm(path: impl AsRef<Path>) -> Result<CqccGmmCm> {
    let mut r = codec::open_read(path.as_ref())?;
    codec::read_header(&mut r, CM_MAGIC, CM_VERSION, CM_WHAT)?;
    let n = codec::read_len(&mut r, CM_WHAT)?;
    if n > 1 << 20 {
        return Err(Error::Parse(format!("{CM_WHAT}: configuration block of {n} bytes")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(codec::truncated(CM_WHAT))?;
    let config: CqccGmmConfig = serde_json::from_slice(&buf).map_err(|e| Error::Parse(format!("{CM_WHAT}: {e}")))?;
    let (genuine_model, dg) = decode_gmm(&mut r)?;
    let (playback_model, dp) = decode_gmm(&mut r)?;
    let want = codec::config_digest(&config);
    if dg != want || dp != want {
        return Err(Error::Parse(format!("{CM_WHAT}: model digest does not match the configuration")));
    }
    if genuine_model.dim() != playback_model.dim() || genuine_model.dim() != config.features.dim() {
        return Err(Error::Parse(format!("{CM_WHAT}: model dimensions disagree")));
    }
    Ok(CqccGmmCm {
        genuine_model,
        playback_model,
        config,
    })
}

/// Network size. `PaperScale` uses 864 × 400 inputs; `DeskScale` keeps the
/// layer sequence with fewer channels on 128 × 100 inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LcnnPreset {
    PaperScale,
    DeskScale,
}

/// Spectrogram front end and segment geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LcnnInput {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub n_fft: usize,
    /// Frames per segment.
    pub frames: usize,
    pub vad_floor_db: f64,
}

impl LcnnInput {
    pub fn bins(&self) -> usize {
        self.n_fft / 2
    }

    pub fn for_preset(p: LcnnPreset) -> Self {
        match p {
            LcnnPreset::PaperScale => Self {
                frame_ms: 25.0,
                hop_ms: 10.0,
                n_fft: 1728,
                frames: 400,
                vad_floor_db: DEFAULT_VAD_FLOOR_DB,
            },
            LcnnPreset::DeskScale => Self {
                frame_ms: 16.0,
                hop_ms: 10.0,
                n_fft: 256,
                frames: 100,
                vad_floor_db: DEFAULT_VAD_FLOOR_DB,
            },
        }
    }
}

/// Cuts a bins × T matrix into `ceil(T / frames)` segments after repeating its
/// columns cyclically from frame 0.
pub fn tile_segments(spec: &Matrix, frames: usize) -> Result<Vec<Matrix>> {
    let t = spec.cols();
    if t == 0 || frames == 0 {
        return Err(Error::Data("no speech frames".into()));
    }
    let n = t.div_ceil(frames);
    let bins = spec.rows();
    Ok((0..n)
        .map(|s| {
            let mut m = Matrix::zeros(bins, frames);
            for j in 0..frames {
                let src = (s * frames + j) % t;
                for b in 0..bins {
                    m.set(b, j, spec.get(b, src));
                }
            }
            m
        })
        .collect())
}

/// Standardises a segment to zero mean and unit variance.
fn standardise(m: &mut Matrix) {
    let v = m.as_mut_slice();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
    v.iter_mut().for_each(|x| *x = (*x - mean) * scale);
}

/// VAD trim, log power STFT, cyclic tiling to whole segments and
/// per-segment standardisation. Segments are bins × frames.
pub fn lcnn_prepare_input(w: &Waveform, input: &LcnnInput) -> Result<Vec<Matrix>> {
    let mask = energy_vad(w, input.frame_ms, input.hop_ms, input.vad_floor_db)?;
    let frame_len = ms_to_samples(input.frame_ms, w.sample_rate());
    let hop = ms_to_samples(input.hop_ms, w.sample_rate());
    let speech = trim_silence(w, &mask, frame_len, hop);
    if frame_count(speech.len(), frame_len, hop) == 0 {
        return Err(Error::Data("no speech frames after voice activity detection".into()));
    }
    let spec = crate::signal::stft_power(&speech, input.frame_ms, input.hop_ms, input.n_fft)?;
    let mut log = spec.values;
    log.as_mut_slice().iter_mut().for_each(|p| *p = (*p + LOG_FLOOR).ln());
    let mut segs = tile_segments(&log, input.frames)?;
    segs.iter_mut().for_each(standardise);
    Ok(segs)
}

/// Mean of per-segment genuine-class probabilities.
pub fn average_segment_probabilities(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::Data("no segments to average".into()));
    }
    Ok(p.iter().sum::<f64>() / p.len() as f64)
}

fn push_conv(spec: &mut GraphSpec, in_ch: usize, out_ch: usize, k: usize) {
    spec.push(LayerSpec::Conv2d {
        in_ch,
        out_ch,
        kernel: [k, k],
        stride: [1, 1],
        padding: Padding::Same,
    });
    spec.push(LayerSpec::Mfm);
}

fn push_nin(spec: &mut GraphSpec, in_ch: usize, out_ch: usize) {
    spec.push(LayerSpec::Nin { in_ch, out_ch });
    spec.push(LayerSpec::Mfm);
}

fn push_pool(spec: &mut GraphSpec) {
    spec.push(LayerSpec::MaxPool2d {
        kernel: [2, 2],
        stride: [2, 2],
    });
}

/// Five convolutions, four NIN layers, ten MFM activations, five max-pooling
/// layers and two fully connected layers; the output holds two logits.
pub fn lcnn_spec(preset: LcnnPreset, input: &LcnnInput, dropout: f64) -> Result<GraphSpec> {
    // output channels before MFM, per stage: conv1, then (nin, conv) × 4
    let (c1, stages, fc): (usize, [(usize, usize); 4], usize) = match preset {
        LcnnPreset::PaperScale => (32, [(32, 48), (48, 64), (64, 32), (32, 32)], 64),
        LcnnPreset::DeskScale => (16, [(16, 24), (24, 32), (32, 16), (16, 16)], 32),
    };
    let mut spec = GraphSpec::new(vec![1, input.bins(), input.frames]);
    push_conv(&mut spec, 1, c1, 5);
    push_pool(&mut spec);
    let mut ch = c1 / 2;
    for (nin, conv) in stages {
        push_nin(&mut spec, ch, nin);
        push_conv(&mut spec, nin / 2, conv, 3);
        push_pool(&mut spec);
        ch = conv / 2;
    }
    let shapes = spec.infer_shapes()?;
    let flat: usize = shapes.last().expect("nonempty").iter().product();
    spec.push(LayerSpec::FullyConnected {
        in_features: flat,
        out_features: fc,
    });
    spec.push(LayerSpec::Mfm);
    spec.push(LayerSpec::Dropout { rate: dropout });
    spec.push(LayerSpec::FullyConnected {
        in_features: fc / 2,
        out_features: 2,
    });
    spec.infer_shapes()?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LcnnConfig {
    pub preset: LcnnPreset,
    pub input: LcnnInput,
    pub lr: f64,
    pub beta1: f64,
    /// Learning-rate factor applied when development accuracy drops.
    pub lr_decay: f64,
    pub lr_schedule: bool,
    pub dropout: f64,
    pub epochs: usize,
    pub batch: usize,
}

impl LcnnConfig {
    pub fn preset(p: LcnnPreset) -> Self {
        Self {
            preset: p,
            input: LcnnInput::for_preset(p),
            lr: 1e-4,
            beta1: 0.5,
            lr_decay: 0.9,
            lr_schedule: true,
            dropout: 0.5,
            epochs: 9,
            batch: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let i = &self.input;
        if i.frames == 0 || i.n_fft < 2 || !(i.frame_ms > 0.0) || !(i.hop_ms > 0.0) {
            return Err(Error::Config(format!("invalid LCNN input {i:?}")));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(self.lr_decay > 0.0) || self.batch == 0 {
            return Err(Error::Config("invalid LCNN optimiser settings".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

impl Default for LcnnConfig {
    fn default() -> Self {
        Self::preset(LcnnPreset::DeskScale)
    }
}

/// Labelled spectrogram segments; labels are [`GENUINE`] or [`PLAYBACK`].
#[derive(Debug, Clone, Default)]
pub struct LcnnData {
    pub segments: Vec<Matrix>,
    pub labels: Vec<usize>,
}

impl LcnnData {
    pub fn from_waveforms(genuine: &[Waveform], playback: &[Waveform], input: &LcnnInput) -> Result<Self> {
        let mut d = Self::default();
        for (set, label) in [(genuine, GENUINE), (playback, PLAYBACK)] {
            for w in set {
                d.push(lcnn_prepare_input(w, input)?, label);
            }
        }
        Ok(d)
    }

    pub fn push(&mut self, segments: Vec<Matrix>, label: usize) {
        self.labels.extend(std::iter::repeat_n(label, segments.len()));
        self.segments.extend(segments);
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

fn batch_tensor(segs: &[&Matrix]) -> Result<Tensor> {
    let (h, w) = (segs[0].rows(), segs[0].cols());
    let mut data = Vec::with_capacity(segs.len() * h * w);
    for s in segs {
        data.extend_from_slice(s.as_slice());
    }
    Tensor::new(vec![segs.len(), 1, h, w], data)
}

fn softmax2(logits: &[f64]) -> f64 {
    let m = logits[0].max(logits[1]);
    let (a, b) = ((logits[0] - m).exp(), (logits[1] - m).exp());
    a / (a + b)
}

#[derive(Debug, Clone)]
pub struct LcnnCm {
    pub config: LcnnConfig,
    pub graph: LayerGraph,
}

/// Per-epoch training record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LcnnHistory {
    pub train_loss: Vec<f64>,
    pub dev_accuracy: Vec<f64>,
    pub lr: Vec<f64>,
}

const LCNN_KIND: &str = "lcnn-cm";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LcnnMeta {
    kind: String,
    config: LcnnConfig,
}

impl LcnnCm {
    pub fn new(config: LcnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let spec = lcnn_spec(config.preset, &config.input, config.dropout)?;
        Ok(Self {
            config,
            graph: LayerGraph::build(spec, seed)?,
        })
    }

    /// Genuine-class probability of each segment.
    pub fn segment_probabilities(&self, segments: &[Matrix]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(segments.len());
        for chunk in segments.chunks(16) {
            let refs: Vec<&Matrix> = chunk.iter().collect();
            let logits = self.graph.infer(&batch_tensor(&refs)?, &[])?;
            out.extend(logits.data().chunks(2).map(softmax2));
        }
        Ok(out)
    }

    pub fn score_segments(&self, segments: &[Matrix]) -> Result<f64> {
        average_segment_probabilities(&self.segment_probabilities(segments)?)
    }

    pub fn score(&self, w: &Waveform) -> Result<f64> {
        self.score_segments(&lcnn_prepare_input(w, &self.config.input)?)
    }

    /// Fraction of segments classified correctly.
    pub fn accuracy(&self, data: &LcnnData) -> Result<f64> {
        let p = self.segment_probabilities(&data.segments)?;
        let correct = p
            .iter()
            .zip(&data.labels)
            .filter(|(p, &l)| (**p >= 0.5) == (l == GENUINE))
            .count();
        Ok(correct as f64 / data.len().max(1) as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::to_value(LcnnMeta {
            kind: LCNN_KIND.into(),
            config: self.config,
        })
        .map_err(|e| Error::Parse(format!("LCNN metadata: {e}")))?;
        save_graph(&self.graph, &meta, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (graph, meta) = load_graph(path)?;
        let meta: LcnnMeta = serde_json::from_value(meta).map_err(|e| Error::Parse(format!("LCNN metadata: {e}")))?;
        if meta.kind != LCNN_KIND {
            return Err(Error::Format {
                field: "checkpoint kind",
                value: meta.kind,
            });
        }
        meta.config.validate()?;
        if graph.spec() != &lcnn_spec(meta.config.preset, &meta.config.input, meta.config.dropout)? {
            return Err(Error::Parse("LCNN graph does not match its configuration".into()));
        }
        Ok(Self {
            config: meta.config,
            graph,
        })
    }
}

pub fn cm_score_lcnn(cm: &LcnnCm, w: &Waveform) -> Result<f64> {
    cm.score(w)
}

/// Learning rate for the next epoch: decayed when accuracy fell.
pub fn scheduled_lr(lr: f64, previous_acc: Option<f64>, acc: f64, decay: f64) -> f64 {
    if previous_acc.is_some_and(|p| acc < p) {
        lr * decay
    } else {
        lr
    }
}

/// Mini-batch Adam on softmax cross-entropy. After each epoch the learning
/// rate is multiplied by `lr_decay` if development accuracy fell.
pub fn cm_train_lcnn(train: &LcnnData, dev: &LcnnData, cfg: &LcnnConfig, seed: u64) -> Result<(LcnnCm, LcnnHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty LCNN training set".into()));
    }
    for l in [GENUINE, PLAYBACK] {
        if !train.labels.contains(&l) {
            return Err(Error::Data(format!("LCNN training set lacks class {l}")));
        }
    }
    if cfg.lr_schedule && dev.is_empty() {
        return Err(Error::Config("the learning-rate schedule needs a development set".into()));
    }
    let shape = [cfg.input.bins(), cfg.input.frames];
    if let Some(s) = train.segments.iter().chain(&dev.segments).find(|s| [s.rows(), s.cols()] != shape) {
        return Err(Error::DimMismatch {
            expected: shape[0] * shape[1],
            got: s.rows() * s.cols(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cm = LcnnCm::new(*cfg, rng.random())?;
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        ..AdamConfig::default()
    })?;
    let mut history = LcnnHistory::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut last_acc: Option<f64> = None;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch) {
            let segs: Vec<&Matrix> = idx.iter().map(|&i| &train.segments[i]).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let logits = cm.graph.forward(&batch_tensor(&segs)?, &[], Mode::Train, rng.random())?;
            let loss = softmax_ce_loss(&logits, &labels)?;
            cm.graph.backward(&loss.grads[0])?;
            opt.step(&mut cm.graph)?;
            total += loss.value * idx.len() as f64;
        }
        history.train_loss.push(total / train.len() as f64);
        if !dev.is_empty() {
            let acc = cm.accuracy(dev)?;
            if cfg.lr_schedule {
                opt.set_lr(scheduled_lr(opt.lr(), last_acc, acc, cfg.lr_decay));
            }
            last_acc = Some(acc);
            history.dev_accuracy.push(acc);
        }
        history.lr.push(opt.lr());
        log::debug!("lcnn epoch {epoch}: loss {:.4}, lr {:.3e}", history.train_loss[epoch], opt.lr());
    }
    Ok((cm, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::CqtConfig;
    use rand_distr::StandardNormal;

    fn gmm(mu: f64, dim: usize) -> DiagGmm {
        DiagGmm::new(
            vec![0.5, 0.5],
            Matrix::from_vec(2, dim, (0..2 * dim).map(|i| mu + (i / dim) as f64).collect()).unwrap(),
            Matrix::from_vec(2, dim, vec![1.0; 2 * dim]).unwrap(),
        )
        .unwrap()
    }

    fn frames(n: usize, dim: usize, mu: f64, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(n, dim, (0..n * dim).map(|_| mu + rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
    }

    fn small_cm() -> CqccGmmCm {
        let mut config = CqccGmmConfig::default();
        config.features.add_deltas = false;
        config.features.n_coeffs = 2;
        CqccGmmCm {
            genuine_model: gmm(1.0, 3),
            playback_model: gmm(-1.5, 3),
            config,
        }
    }

    #[test]
    fn identical_models_score_zero_and_swap_negates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cm = small_cm();
        let same = CqccGmmCm {
            playback_model: cm.genuine_model.clone(),
            ..cm.clone()
        };
        for _ in 0..10 {
            let f = frames(20, 3, 0.3, &mut rng);
            assert_eq!(same.score_features(&f).unwrap(), 0.0);
            assert_eq!(cm.swapped().score_features(&f).unwrap(), -cm.score_features(&f).unwrap());
        }
    }

    #[test]
    fn scores_ignore_frame_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cm = small_cm();
        let f = frames(30, 3, 0.0, &mut rng);
        let mut rows: Vec<Vec<f64>> = f.iter_rows().map(|r| r.to_vec()).collect();
        rows.reverse();
        rows.swap(3, 17);
        let g = Matrix::from_rows(&rows, 3).unwrap();
        assert!((cm.score_features(&f).unwrap() - cm.score_features(&g).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn genuine_samples_score_positive() {
        let cm = small_cm();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut positive = 0;
        for _ in 0..100 {
            // draw 10 frames from the genuine mixture
            let rows: Vec<Vec<f64>> = (0..10)
                .map(|_| {
                    let k = usize::from(rng.random::<bool>());
                    (0..3)
                        .map(|d| cm.genuine_model.means().get(k, d) + rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect();
            if cm.score_features(&Matrix::from_rows(&rows, 3).unwrap()).unwrap() > 0.0 {
                positive += 1;
            }
        }
        assert!(positive >= 95, "{positive}/100");
    }

    #[test]
    fn identical_training_sets_give_symmetric_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<Matrix> = (0..3).map(|_| frames(40, 4, 0.0, &mut rng)).collect();
        let cfg = CqccGmmConfig {
            em: EmConfig {
                components: 2,
                max_iters: 10,
                tol: 1e-6,
                seed: 9,
            },
            ..CqccGmmConfig::default()
        };
        let cm = cm_train_cqcc_gmm_features(&data, &data, &cfg).unwrap();
        assert_eq!(cm.score_features(&frames(25, 4, 0.5, &mut rng)).unwrap(), 0.0);
        assert!(cm_train_cqcc_gmm_features(&[], &data, &cfg).is_err());
    }

    fn voiced(len: usize, rate: u32, cutoff: f64, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = 0.0;
        let a = (-2.0 * std::f64::consts::PI * cutoff / rate as f64).exp();
        let x = (0..len)
            .map(|n| {
                let pulse = if n % 100 == 0 { 1.0 } else { 0.0 };
                y = a * y + (1.0 - a) * (pulse + 0.05 * rng.sample::<f64, _>(StandardNormal));
                y * (1.0 + 0.5 * (n as f64 * 0.002).sin())
            })
            .collect();
        Waveform::new(x, rate).unwrap()
    }

    #[test]
    fn cqcc_gmm_trains_on_waveforms_and_round_trips() {
        let cfg = CqccGmmConfig {
            features: CqccConfig {
                cqt: CqtConfig {
                    bins_per_octave: 12,
                    octaves: 5,
                    hop_ms: 10.0,
                },
                ..CqccConfig::default()
            },
            em: EmConfig {
                components: 2,
                max_iters: 10,
                tol: 1e-6,
                seed: 1,
            },
            per_frame_average: true,
        };
        let gen: Vec<Waveform> = (0..3).map(|i| voiced(8000, 16000, 3000.0, i)).collect();
        let pb: Vec<Waveform> = (0..3).map(|i| voiced(8000, 16000, 600.0, 10 + i)).collect();
        let cm = cm_train_cqcc_gmm(&gen, &pb, &cfg).unwrap();
        assert_eq!(cm.genuine_model.dim(), 90);
        let g = cm_score_cqcc_gmm(&cm, &voiced(8000, 16000, 3000.0, 50)).unwrap();
        let p = cm_score_cqcc_gmm(&cm, &voiced(8000, 16000, 600.0, 51)).unwrap();
        assert!(g > p, "{g} vs {p}");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cm.skcg");
        write_cqcc_gmm(&cm, &path).unwrap();
        assert_eq!(read_cqcc_gmm(&path).unwrap(), cm);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_cqcc_gmm(&path), Err(Error::Parse(_))));
    }

    fn ramp(bins: usize, t: usize) -> Matrix {
        Matrix::from_vec(bins, t, (0..bins * t).map(|i| (i % t) as f64 + 1000.0 * (i / t) as f64).collect()).unwrap()
    }

    #[test]
    fn cyclic_tiling() {
        let segs = tile_segments(&ramp(3, 250), 400).unwrap();
        assert_eq!(segs.len(), 1);
        for j in 0..400 {
            assert_eq!(segs[0].get(2, j), 2000.0 + (j % 250) as f64);
        }
        let exact = ramp(2, 400);
        assert_eq!(tile_segments(&exact, 400).unwrap(), vec![exact]);
        let segs = tile_segments(&ramp(2, 600), 400).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].get(0, 199), 599.0);
        assert_eq!(segs[1].get(0, 200), 0.0);
        assert!(tile_segments(&Matrix::zeros(4, 0), 400).is_err());
    }

    #[test]
    fn paper_front_end_geometry() {
        let input = LcnnInput::for_preset(LcnnPreset::PaperScale);
        let w = voiced(40000, 16000, 3000.0, 7);
        let segs = lcnn_prepare_input(&w, &input).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].rows(), segs[0].cols()), (864, 400));
        let silent = Waveform::new(vec![0.0; 16000], 16000).unwrap();
        assert!(matches!(lcnn_prepare_input(&silent, &input), Err(Error::Data(_))));
        let desk = LcnnInput::for_preset(LcnnPreset::DeskScale);
        let segs = lcnn_prepare_input(&w, &desk).unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!((segs[0].rows(), segs[0].cols()), (128, 100));
        let m = segs[0].as_slice().iter().sum::<f64>() / 12800.0;
        assert!(m.abs() < 1e-12);
    }

    #[test]
    fn probability_averaging() {
        assert_eq!(average_segment_probabilities(&[0.2, 0.8]).unwrap(), 0.5);
        assert_eq!(average_segment_probabilities(&[0.3]).unwrap(), 0.3);
        assert!(average_segment_probabilities(&[]).is_err());
    }

    fn count(spec: &GraphSpec, name: &str) -> usize {
        spec.nodes.iter().filter(|n| n.layer.name() == name).count()
    }

    #[test]
    fn layer_inventory() {
        for p in [LcnnPreset::PaperScale, LcnnPreset::DeskScale] {
            let spec = lcnn_spec(p, &LcnnInput::for_preset(p), 0.5).unwrap();
            assert_eq!(count(&spec, "conv2d"), 5);
            assert_eq!(count(&spec, "nin"), 4);
            assert_eq!(count(&spec, "mfm"), 10);
            assert_eq!(count(&spec, "maxpool2d"), 5);
            assert_eq!(count(&spec, "fully_connected"), 2);
            assert_eq!(count(&spec, "dropout"), 1);
            let shapes = spec.infer_shapes().unwrap();
            assert_eq!(shapes.last().unwrap(), &vec![2]);
            let fc = spec.nodes.iter().position(|n| n.layer.name() == "fully_connected").unwrap();
            assert_eq!(spec.nodes[fc + 2].layer.name(), "dropout");
        }
    }

    #[test]
    fn equal_logits_give_one_half() {
        let mut cm = LcnnCm::new(LcnnConfig::default(), 1).unwrap();
        let last = cm.graph.params_mut().len() - 1;
        for p in &mut cm.graph.params_mut()[last] {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        let segs = vec![Matrix::from_vec(128, 100, vec![0.3; 12800]).unwrap(); 3];
        assert_eq!(cm.score_segments(&segs).unwrap(), 0.5);
    }

    #[test]
    fn schedule_and_dev_requirements() {
        assert!((scheduled_lr(1e-4, Some(0.8), 0.7, 0.9) - 9e-5).abs() < 1e-20);
        assert_eq!(scheduled_lr(1e-4, Some(0.8), 0.8, 0.9), 1e-4);
        assert_eq!(scheduled_lr(1e-4, None, 0.1, 0.9), 1e-4);
        let mut train = LcnnData::default();
        train.push(vec![Matrix::zeros(128, 100)], GENUINE);
        train.push(vec![Matrix::zeros(128, 100)], PLAYBACK);
        let r = cm_train_lcnn(&train, &LcnnData::default(), &LcnnConfig::default(), 0);
        assert!(matches!(r, Err(Error::Config(_))));
        let cfg = LcnnConfig {
            epochs: 0,
            lr_schedule: false,
            ..LcnnConfig::default()
        };
        let (cm, h) = cm_train_lcnn(&train, &LcnnData::default(), &cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fresh = LcnnCm::new(cfg, rng.random()).unwrap();
        assert_eq!(cm.graph.flat_values(), fresh.graph.flat_values());
        assert!(h.train_loss.is_empty());
    }

    /// Bright upper band for genuine, bright lower band for playback.
    fn band_segment(genuine: bool, rng: &mut ChaCha8Rng) -> Matrix {
        let mut m = Matrix::zeros(128, 100);
        for b in 0..128 {
            let lift = if (b >= 64) == genuine { 1.0 } else { -1.0 };
            for t in 0..100 {
                m.set(b, t, lift + 0.5 * rng.sample::<f64, _>(StandardNormal));
            }
        }
        m
    }

    #[test]
    fn desk_lcnn_learns_separable_spectra() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut train = LcnnData::default();
        let mut dev = LcnnData::default();
        for i in 0..24 {
            let g = i % 2 == 0;
            let label = if g { GENUINE } else { PLAYBACK };
            train.push(vec![band_segment(g, &mut rng)], label);
            if i < 8 {
                dev.push(vec![band_segment(g, &mut rng)], label);
            }
        }
        let cfg = LcnnConfig {
            lr: 1e-3,
            epochs: 4,
            batch: 8,
            ..LcnnConfig::default()
        };
        let (cm, h) = cm_train_lcnn(&train, &dev, &cfg, 7).unwrap();
        assert_eq!(h.lr.len(), 4);
        assert!(cm.accuracy(&train).unwrap() > 0.95, "{h:?}");
        let (again, _) = cm_train_lcnn(&train, &dev, &cfg, 7).unwrap();
        assert_eq!(cm.graph.flat_values(), again.graph.flat_values());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lcnn.sknn");
        cm.save(&path).unwrap();
        let back = LcnnCm::load(&path).unwrap();
        assert_eq!(back.score_segments(&dev.segments).unwrap(), cm.score_segments(&dev.segments).unwrap());
    }
}
