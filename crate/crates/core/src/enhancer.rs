//! SEGAN-style waveform enhancement: chunking, generator and discriminator
//! assembly, least-squares adversarial training and chunked inference.
//!
//! The generator is a strided 1-D convolutional encoder whose latent code is
//! concatenated with Gaussian noise of the same shape, followed by a mirrored
//! transposed-convolution decoder with a skip path from every encoder level.
//! The discriminator repeats the encoder with virtual batch normalization and
//! sees the pair `(clean or enhanced, degraded)` stacked as two channels.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::neural::{
    load_graph, lsgan_d_loss, lsgan_g_loss, save_graph, Adam, AdamConfig, GraphSpec, LayerGraph,
    LayerSpec, Mode, Padding, Source, Tensor,
};

const CHECKPOINT_KIND: &str = "segan-generator";

/// Architecture and optimisation settings. [`SeganConfig::default`] is the
/// desk-scale preset; [`SeganConfig::paper`] follows the original recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeganConfig {
    pub chunk_len: usize,
    /// Window step used when cutting training chunks.
    pub hop: usize,
    pub encoder_depth: usize,
    pub filter_width: usize,
    pub stride: usize,
    /// Output channels of each encoder level, shallow to deep.
    pub channels: Vec<usize>,
    pub lambda: f64,
    pub lr: f64,
    pub beta1: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Caps the number of batches per epoch; `None` walks every chunk.
    pub max_batches_per_epoch: Option<usize>,
    /// Number of chunk pairs in the fixed VBN reference batch.
    pub reference_batch: usize,
    /// Predict a correction added to the input instead of the waveform itself.
    pub residual: bool,
    pub sample_rate: u32,
}

impl Default for SeganConfig {
    fn default() -> Self {
        Self {
            chunk_len: 1 << 14,
            hop: 1 << 13,
            encoder_depth: 6,
            filter_width: 31,
            stride: 2,
            channels: vec![8, 16, 16, 32, 32, 64],
            lambda: 100.0,
            lr: 2e-4,
            beta1: 0.5,
            batch: 16,
            epochs: 4,
            max_batches_per_epoch: None,
            reference_batch: 4,
            residual: true,
            sample_rate: 16_000,
        }
    }
}

impl SeganConfig {
    /// Eleven-level encoder, batch 100, 120 epochs.
    pub fn paper() -> Self {
        Self {
            encoder_depth: 11,
            channels: vec![16, 32, 32, 64, 64, 128, 128, 256, 256, 512, 1024],
            batch: 100,
            epochs: 120,
            residual: false,
            reference_batch: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("segan: {m}")));
        if self.encoder_depth == 0 || self.stride < 2 || self.filter_width == 0 {
            return bad("depth, stride and filter width must be positive (stride ≥ 2)".into());
        }
        if self.channels.len() != self.encoder_depth || self.channels.contains(&0) {
            return bad(format!(
                "channel schedule {:?} must list {} positive widths",
                self.channels, self.encoder_depth
            ));
        }
        let factor = (self.stride as u64).checked_pow(self.encoder_depth as u32);
        match factor {
            Some(f) if self.chunk_len > 0 && self.chunk_len as u64 % f == 0 => {}
            _ => {
                return bad(format!(
                    "chunk_len {} is not divisible by stride^depth = {}^{}",
                    self.chunk_len, self.stride, self.encoder_depth
                ))
            }
        }
        if self.hop == 0 || self.hop > self.chunk_len {
            return bad(format!(
                "hop {} must lie in 1..={}",
                self.hop, self.chunk_len
            ));
        }
        if !(self.lambda >= 0.0) || !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) {
            return bad("lambda, lr or beta1 out of range".into());
        }
        if self.batch == 0 || self.reference_batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        Ok(())
    }

    /// Time length of the latent code.
    pub fn latent_len(&self) -> usize {
        self.chunk_len / self.stride.pow(self.encoder_depth as u32)
    }

    /// Channel count of the latent code and of the noise input.
    pub fn latent_channels(&self) -> usize {
        *self.channels.last().expect("validated schedule")
    }
}

/// One window of a waveform; `pad` zeros were appended to fill it.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub offset: usize,
    pub samples: Vec<f64>,
    pub pad: usize,
}

/// Windows at offsets `0, hop, 2·hop, …` until one reaches the end of the
/// signal; the last window is zero-padded to `chunk_len`.
pub fn chunk(samples: &[f64], chunk_len: usize, hop: usize) -> Result<Vec<Chunk>> {
    if chunk_len == 0 || hop == 0 || hop > chunk_len {
        return Err(Error::Domain(format!(
            "invalid chunking: chunk_len {chunk_len}, hop {hop}"
        )));
    }
    let mut out = Vec::new();
    let mut offset = 0;
    while offset < samples.len() {
        let end = (offset + chunk_len).min(samples.len());
        let mut window = samples[offset..end].to_vec();
        let pad = chunk_len - window.len();
        window.resize(chunk_len, 0.0);
        out.push(Chunk {
            offset,
            samples: window,
            pad,
        });
        if offset + chunk_len >= samples.len() {
            break;
        }
        offset += hop;
    }
    Ok(out)
}

/// Concatenates equally sized chunks and truncates to `original_len`.
pub fn dechunk(chunks: &[Vec<f64>], original_len: usize) -> Result<Vec<f64>> {
    let Some(first) = chunks.first() else {
        return if original_len == 0 {
            Ok(Vec::new())
        } else {
            Err(Error::Data(format!("no chunks for {original_len} samples")))
        };
    };
    let size = first.len();
    if let Some(c) = chunks.iter().find(|c| c.len() != size) {
        return Err(Error::Data(format!(
            "inconsistent chunk sizes {size} and {}",
            c.len()
        )));
    }
    if size * chunks.len() < original_len {
        return Err(Error::Data(format!(
            "{} chunks of {size} samples cannot cover {original_len}",
            chunks.len()
        )));
    }
    let mut out: Vec<f64> = chunks.concat();
    out.truncate(original_len);
    Ok(out)
}

/// Generator and discriminator of one model.
#[derive(Debug, Clone)]
pub struct Segan {
    pub config: SeganConfig,
    pub generator: LayerGraph,
    pub discriminator: LayerGraph,
}

fn generator_spec(cfg: &SeganConfig) -> GraphSpec {
    let (w, s) = (cfg.filter_width, cfg.stride);
    let mut spec = GraphSpec::new(vec![1, cfg.chunk_len]);
    let z = spec.add_aux(vec![cfg.latent_channels(), cfg.latent_len()]);
    let mut levels = Vec::with_capacity(cfg.encoder_depth);
    let mut in_ch = 1;
    for &ch in &cfg.channels {
        spec.push(LayerSpec::Conv1d {
            in_ch,
            out_ch: ch,
            width: w,
            stride: s,
            padding: Padding::Same,
        });
        levels.push(spec.push(LayerSpec::Prelu { channels: ch }));
        in_ch = ch;
    }
    let mut from = vec![
        Source::Node(*levels.last().expect("depth ≥ 1")),
        Source::Aux(z),
    ];
    let mut in_ch = 2 * cfg.latent_channels();
    for level in (0..cfg.encoder_depth).rev() {
        let out_ch = if level == 0 {
            1
        } else {
            cfg.channels[level - 1]
        };
        let up = spec.push_from(
            LayerSpec::Conv1dTransposed {
                in_ch,
                out_ch,
                width: w,
                stride: s,
            },
            from,
        );
        if level == 0 {
            break;
        }
        let act = spec.push_from(
            LayerSpec::Prelu { channels: out_ch },
            vec![Source::Node(up)],
        );
        from = vec![Source::Node(act), Source::Node(levels[level - 1])];
        in_ch = 2 * out_ch;
    }
    spec
}

fn discriminator_spec(cfg: &SeganConfig) -> GraphSpec {
    let mut spec = GraphSpec::new(vec![2, cfg.chunk_len]);
    let mut in_ch = 2;
    for &ch in &cfg.channels {
        spec.push(LayerSpec::Conv1d {
            in_ch,
            out_ch: ch,
            width: cfg.filter_width,
            stride: cfg.stride,
            padding: Padding::Same,
        });
        spec.push(LayerSpec::Vbn {
            channels: ch,
            eps: 1e-5,
        });
        spec.push(LayerSpec::Prelu { channels: ch });
        in_ch = ch;
    }
    spec.push(LayerSpec::Nin { in_ch, out_ch: 1 });
    spec.push(LayerSpec::FullyConnected {
        in_features: cfg.latent_len(),
        out_features: 1,
    });
    spec
}

/// Builds both networks with Xavier-initialised weights.
pub fn build_segan(cfg: &SeganConfig, seed: u64) -> Result<Segan> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let generator = LayerGraph::build(generator_spec(cfg), rng.random())?;
    let discriminator = LayerGraph::build(discriminator_spec(cfg), rng.random())?;
    Ok(Segan {
        config: cfg.clone(),
        generator,
        discriminator,
    })
}

/// Sample-aligned `(degraded, clean)` waveform pairs.
#[derive(Debug, Clone, Default)]
pub struct PairedCorpus {
    pairs: Vec<(Waveform, Waveform)>,
}

impl PairedCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, degraded: Waveform, clean: Waveform) -> Result<()> {
        if degraded.len() != clean.len() || degraded.sample_rate() != clean.sample_rate() {
            return Err(Error::Data(format!(
                "misaligned pair: {} samples at {} Hz vs {} samples at {} Hz",
                degraded.len(),
                degraded.sample_rate(),
                clean.len(),
                clean.sample_rate()
            )));
        }
        if let Some((d, _)) = self.pairs.first() {
            if d.sample_rate() != degraded.sample_rate() {
                return Err(Error::Data(format!(
                    "sample rate {} differs from corpus rate {}",
                    degraded.sample_rate(),
                    d.sample_rate()
                )));
            }
        }
        self.pairs.push((degraded, clean));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Waveform, Waveform)] {
        &self.pairs
    }

    pub fn sample_rate(&self) -> Option<u32> {
        self.pairs.first().map(|(d, _)| d.sample_rate())
    }
}

/// Per-epoch means of the three training objectives.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTraces {
    pub d_loss: Vec<f64>,
    pub g_adv_loss: Vec<f64>,
    pub l1_loss: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SeganTraining {
    pub model: Segan,
    pub traces: LossTraces,
}

/// Chunk pairs `(degraded, clean)` cut with the training hop.
fn training_chunks(corpus: &PairedCorpus, cfg: &SeganConfig) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut out = Vec::new();
    for (d, c) in corpus.pairs() {
        let dc = chunk(d.samples(), cfg.chunk_len, cfg.hop)?;
        let cc = chunk(c.samples(), cfg.chunk_len, cfg.hop)?;
        out.extend(dc.into_iter().zip(cc).map(|(a, b)| (a.samples, b.samples)));
    }
    Ok(out)
}

fn gaussian(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(shape, data).expect("shape matches data")
}

fn signal_batch(rows: &[&[f64]]) -> Result<Tensor> {
    let len = rows.first().map_or(0, |r| r.len());
    Tensor::new(vec![rows.len(), 1, len], rows.concat())
}

/// Generator forward pass with the optional residual connection. Records the
/// generator tape when `train` is set.
fn generate(model: &mut Segan, x: &Tensor, z: &Tensor, train: bool, seed: u64) -> Result<Tensor> {
    let mut y = if train {
        model.generator.forward(x, &[z], Mode::Train, seed)?
    } else {
        model.generator.infer(x, &[z])?
    };
    if model.config.residual {
        y.add_assign(x);
    }
    Ok(y)
}

struct StepLosses {
    d: f64,
    g_adv: f64,
    l1: f64,
}

/// Discriminator gradients on one batch; `y_hat` is treated as a constant.
fn accumulate_d_grads(
    d: &mut LayerGraph,
    x: &Tensor,
    y: &Tensor,
    y_hat: &Tensor,
    seed: u64,
) -> Result<f64> {
    // VBN normalises each example against the reference only, so real and
    // fake pairs can share one pass
    let b = x.batch();
    let both = Tensor::stack_batch(&[
        Tensor::concat_channels(&[y, x])?,
        Tensor::concat_channels(&[y_hat, x])?,
    ])?;
    let out = d.forward(&both, &[], Mode::Train, seed)?;
    let real = Tensor::new(vec![b, 1], out.data()[..b].to_vec())?;
    let fake = Tensor::new(vec![b, 1], out.data()[b..].to_vec())?;
    let loss = lsgan_d_loss(&real, &fake)?;
    let g = Tensor::stack_batch(&loss.grads)?;
    d.backward(&g)?;
    Ok(loss.value)
}

/// Generator gradients through the discriminator; the discriminator's own
/// parameter gradients from this pass are discarded.
fn accumulate_g_grads(
    model: &mut Segan,
    x: &Tensor,
    y: &Tensor,
    y_hat: &Tensor,
    seed: u64,
) -> Result<(f64, f64)> {
    let fake_in = Tensor::concat_channels(&[y_hat, x])?;
    let d_fake = model
        .discriminator
        .forward(&fake_in, &[], Mode::Train, seed)?;
    let loss = lsgan_g_loss(&d_fake, y_hat, y, model.config.lambda)?;
    let through_d = model.discriminator.backward(&loss.grads[0])?;
    model.discriminator.zero_grad();
    let mut gy = through_d.input.split_channels(&[1, 1])?.swap_remove(0);
    gy.add_assign(&loss.grads[1]);
    model.generator.backward(&gy)?;
    let l1 = y_hat
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / y.numel() as f64;
    let adv = loss.value - model.config.lambda * l1;
    Ok((adv, l1))
}

/// One alternating update: the discriminator on `lsgan_d_loss`, then the
/// generator on `lsgan_g_loss`.
fn train_step(
    model: &mut Segan,
    opt_d: &mut Adam,
    opt_g: &mut Adam,
    x: &Tensor,
    y: &Tensor,
    reference: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<StepLosses> {
    let seed: u64 = rng.random();
    let z = gaussian(
        vec![
            x.batch(),
            model.config.latent_channels(),
            model.config.latent_len(),
        ],
        rng,
    );
    model.discriminator.set_reference(reference, &[])?;
    let y_hat = generate(model, x, &z, true, seed)?;
    let d = accumulate_d_grads(&mut model.discriminator, x, y, &y_hat, seed)?;
    opt_d.step(&mut model.discriminator)?;
    model.discriminator.set_reference(reference, &[])?;
    let (g_adv, l1) = accumulate_g_grads(model, x, y, &y_hat, seed)?;
    opt_g.step(&mut model.generator)?;
    Ok(StepLosses { d, g_adv, l1 })
}

/// Adversarial training on chunk pairs cut with 50% overlap. Deterministic for
/// a given seed; zero epochs return the initial networks.
pub fn segan_train(corpus: &PairedCorpus, cfg: &SeganConfig, seed: u64) -> Result<SeganTraining> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Data("empty paired corpus".into()));
    }
    if corpus.sample_rate() != Some(cfg.sample_rate) {
        return Err(Error::Data(format!(
            "corpus rate {:?} differs from configured {} Hz",
            corpus.sample_rate(),
            cfg.sample_rate
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = build_segan(cfg, rng.random())?;
    let chunks = training_chunks(corpus, cfg)?;
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    order.shuffle(&mut rng);
    let ref_rows: Vec<Vec<f64>> = order
        .iter()
        .cycle()
        .take(cfg.reference_batch)
        .flat_map(|&i| [chunks[i].1.clone(), chunks[i].0.clone()])
        .collect();
    let reference = Tensor::new(
        vec![cfg.reference_batch, 2, cfg.chunk_len],
        ref_rows.concat(),
    )?;

    let adam = |cfg: &SeganConfig| {
        Adam::new(AdamConfig {
            lr: cfg.lr,
            beta1: cfg.beta1,
            ..AdamConfig::default()
        })
    };
    let (mut opt_d, mut opt_g) = (adam(cfg)?, adam(cfg)?);
    let mut traces = LossTraces::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        let mut steps = 0usize;
        for batch in order.chunks(cfg.batch) {
            if cfg.max_batches_per_epoch.is_some_and(|m| steps >= m) {
                break;
            }
            let xs: Vec<&[f64]> = batch.iter().map(|&i| chunks[i].0.as_slice()).collect();
            let ys: Vec<&[f64]> = batch.iter().map(|&i| chunks[i].1.as_slice()).collect();
            let (x, y) = (signal_batch(&xs)?, signal_batch(&ys)?);
            let l = train_step(
                &mut model, &mut opt_d, &mut opt_g, &x, &y, &reference, &mut rng,
            )?;
            sums[0] += l.d;
            sums[1] += l.g_adv;
            sums[2] += l.l1;
            steps += 1;
        }
        let n = steps.max(1) as f64;
        traces.d_loss.push(sums[0] / n);
        traces.g_adv_loss.push(sums[1] / n);
        traces.l1_loss.push(sums[2] / n);
        log::debug!(
            "segan epoch {epoch}: d {:.4}, g_adv {:.4}, l1 {:.5}",
            sums[0] / n,
            sums[1] / n,
            sums[2] / n
        );
    }
    Ok(SeganTraining { model, traces })
}

/// A frozen generator ready for inference.
#[derive(Debug, Clone)]
pub struct Enhancer {
    pub config: SeganConfig,
    pub generator: LayerGraph,
}

impl From<Segan> for Enhancer {
    fn from(m: Segan) -> Self {
        Self {
            config: m.config,
            generator: m.generator,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    kind: String,
    config: SeganConfig,
}

impl Enhancer {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::to_value(CheckpointMeta {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
        })
        .map_err(|e| Error::Parse(format!("checkpoint metadata: {e}")))?;
        save_graph(&self.generator, &meta, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (generator, meta) = load_graph(path)?;
        let meta: CheckpointMeta = serde_json::from_value(meta)
            .map_err(|e| Error::Parse(format!("checkpoint metadata: {e}")))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(Error::Format {
                field: "checkpoint kind",
                value: meta.kind,
            });
        }
        meta.config.validate()?;
        if generator.spec() != &generator_spec(&meta.config) {
            return Err(Error::Parse(
                "checkpoint graph does not match its configuration".into(),
            ));
        }
        Ok(Self {
            config: meta.config,
            generator,
        })
    }

    /// Applies the generator to one chunk with the given noise.
    fn enhance_chunk(&self, samples: &[f64], z: &Tensor) -> Result<Vec<f64>> {
        let x = signal_batch(&[samples])?;
        let mut y = self.generator.infer(&x, &[z])?;
        if self.config.residual {
            y.add_assign(&x);
        }
        Ok(y.into_data())
    }
}

/// Enhances a waveform chunk by chunk with a non-overlapping stride. The
/// noise input is redrawn for each chunk from a stream seeded by `seed`.
pub fn enhance(model: &Enhancer, w: &Waveform, seed: u64) -> Result<Waveform> {
    let cfg = &model.config;
    if w.sample_rate() != cfg.sample_rate {
        return Err(Error::Data(format!(
            "input rate {} Hz differs from the model's {} Hz",
            w.sample_rate(),
            cfg.sample_rate
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chunks = chunk(w.samples(), cfg.chunk_len, cfg.chunk_len)?;
    let mut out = Vec::with_capacity(chunks.len());
    for c in &chunks {
        let z = gaussian(vec![1, cfg.latent_channels(), cfg.latent_len()], &mut rng);
        out.push(model.enhance_chunk(&c.samples, &z)?);
    }
    let y = dechunk(&out, w.len())?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("enhanced waveform is not finite".into()));
    }
    Waveform::new(y, w.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SeganConfig {
        SeganConfig {
            chunk_len: 256,
            hop: 128,
            encoder_depth: 3,
            filter_width: 7,
            channels: vec![4, 4, 8],
            batch: 4,
            epochs: 2,
            reference_batch: 2,
            sample_rate: 8000,
            ..SeganConfig::default()
        }
    }

    fn tone(len: usize, rate: u32, phase: f64) -> Waveform {
        let x = (0..len)
            .map(|n| 0.3 * (0.07 * n as f64 + phase).sin() + 0.1 * (0.31 * n as f64).cos())
            .collect();
        Waveform::new(x, rate).unwrap()
    }

    fn identity_corpus(n: usize, len: usize, rate: u32) -> PairedCorpus {
        let mut c = PairedCorpus::new();
        for i in 0..n {
            let w = tone(len, rate, i as f64);
            c.push(w.clone(), w).unwrap();
        }
        c
    }

    #[test]
    fn chunk_offsets_on_reference_sizes() {
        let x = vec![1.0; 32768];
        let c = chunk(&x, 1 << 14, 1 << 13).unwrap();
        assert_eq!(
            c.iter().map(|c| c.offset).collect::<Vec<_>>(),
            vec![0, 8192, 16384]
        );
        assert!(c.iter().all(|c| c.pad == 0));
        assert_eq!(chunk(&x[..16384], 1 << 14, 1 << 13).unwrap().len(), 1);
        let c = chunk(&x[..20000], 1 << 14, 1 << 13).unwrap();
        assert_eq!(
            c.iter().map(|c| c.offset).collect::<Vec<_>>(),
            vec![0, 8192]
        );
        assert_eq!(c[1].pad, 4576);
        assert!(c[1].samples[16384 - 4576..].iter().all(|&v| v == 0.0));
        assert!(chunk(&[], 16, 8).unwrap().is_empty());
        assert!(chunk(&x, 16, 32).is_err());
    }

    #[test]
    fn dechunk_round_trip_and_errors() {
        let x: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let parts: Vec<Vec<f64>> = chunk(&x, 256, 256)
            .unwrap()
            .into_iter()
            .map(|c| c.samples)
            .collect();
        assert_eq!(dechunk(&parts, x.len()).unwrap(), x);
        let single = chunk(&x[..100], 256, 256).unwrap();
        assert_eq!(single[0].pad, 156);
        assert_eq!(
            dechunk(&[single[0].samples.clone()], 100).unwrap(),
            x[..100].to_vec()
        );
        let full = vec![vec![1.0; 4], vec![2.0; 4], vec![3.0; 4]];
        assert_eq!(dechunk(&full, 12).unwrap().len(), 12);
        assert!(dechunk(&[vec![0.0; 4], vec![0.0; 3]], 7).is_err());
        assert!(dechunk(&[vec![0.0; 4]], 5).is_err());
    }

    #[test]
    fn config_validation() {
        SeganConfig::default().validate().unwrap();
        SeganConfig::paper().validate().unwrap();
        assert_eq!(SeganConfig::default().latent_len(), 256);
        let bad = SeganConfig {
            chunk_len: 1000,
            ..SeganConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = SeganConfig {
            channels: vec![4, 4],
            ..SeganConfig::default()
        };
        assert!(build_segan(&bad, 0).is_err());
        let bad = SeganConfig {
            hop: 1 << 15,
            ..SeganConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn network_shapes() {
        let cfg = SeganConfig {
            channels: vec![2, 2, 2, 2, 2, 2],
            ..SeganConfig::default()
        };
        let m = build_segan(&cfg, 1).unwrap();
        assert_eq!(m.generator.spec().aux_shapes[0], vec![2, 256]);
        assert_eq!(m.generator.output_shape(), &[1, 1 << 14]);
        assert_eq!(m.discriminator.input_shape(), &[2, 1 << 14]);
        assert_eq!(m.discriminator.output_shape(), &[1]);
        for depth in 1..=4 {
            let cfg = SeganConfig {
                chunk_len: 64,
                encoder_depth: depth,
                hop: 32,
                filter_width: 5,
                channels: (0..depth).map(|i| 2 + i).collect(),
                ..SeganConfig::default()
            };
            let m = build_segan(&cfg, 2).unwrap();
            assert_eq!(m.generator.output_shape(), m.generator.input_shape());
        }
    }

    #[test]
    fn every_trainable_layer_receives_gradient() {
        let cfg = tiny();
        let mut m = build_segan(&cfg, 3).unwrap();
        let corpus = identity_corpus(2, 300, 8000);
        let pairs = training_chunks(&corpus, &cfg).unwrap();
        let xs: Vec<&[f64]> = pairs.iter().map(|p| p.0.as_slice()).collect();
        let x = signal_batch(&xs).unwrap();
        let y = x.clone();
        let reference = Tensor::concat_channels(&[&y, &x]).unwrap();
        m.discriminator.set_reference(&reference, &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = gaussian(vec![x.batch(), 8, 32], &mut rng);
        // a non-residual output so the L1 term is nonzero even on x = y
        m.config.residual = false;
        let y_hat = generate(&mut m, &x, &z, true, 5).unwrap();
        accumulate_d_grads(&mut m.discriminator, &x, &y, &y_hat, 5).unwrap();
        for (i, p) in m.discriminator.params().iter().enumerate() {
            if !p.is_empty() {
                assert!(
                    p.iter().any(|t| t.grad.iter().any(|g| *g != 0.0)),
                    "D node {i}"
                );
            }
        }
        accumulate_g_grads(&mut m, &x, &y, &y_hat, 5).unwrap();
        for (i, p) in m.generator.params().iter().enumerate() {
            if !p.is_empty() {
                assert!(
                    p.iter().any(|t| t.grad.iter().any(|g| *g != 0.0)),
                    "G node {i}"
                );
            }
        }
        assert!(m
            .discriminator
            .params()
            .iter()
            .flatten()
            .all(|t| t.grad.iter().all(|g| *g == 0.0)));
    }

    #[test]
    fn zero_epochs_keep_initialisation() {
        let cfg = SeganConfig {
            epochs: 0,
            ..tiny()
        };
        let corpus = identity_corpus(2, 400, 8000);
        let t = segan_train(&corpus, &cfg, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fresh = build_segan(&cfg, rng.random()).unwrap();
        assert_eq!(
            t.model.generator.flat_values(),
            fresh.generator.flat_values()
        );
        assert!(t.traces.d_loss.is_empty());
    }

    #[test]
    fn training_is_reproducible() {
        let cfg = tiny();
        let corpus = identity_corpus(3, 500, 8000);
        let a = segan_train(&corpus, &cfg, 11).unwrap();
        let b = segan_train(&corpus, &cfg, 11).unwrap();
        assert_eq!(a.traces, b.traces);
        assert_eq!(
            a.model.generator.flat_values(),
            b.model.generator.flat_values()
        );
        assert_eq!(a.traces.l1_loss.len(), 2);
        let c = segan_train(&corpus, &cfg, 12).unwrap();
        assert_ne!(a.traces, c.traces);
    }

    #[test]
    fn l1_dominated_training_approaches_identity() {
        let cfg = SeganConfig {
            lambda: 1e6,
            epochs: 5,
            lr: 1e-3,
            ..tiny()
        };
        let corpus = identity_corpus(4, 512, 8000);
        let t = segan_train(&corpus, &cfg, 21).unwrap();
        let l1 = &t.traces.l1_loss;
        assert!(l1.windows(2).all(|p| p[1] < p[0]), "{l1:?}");

        let enh = Enhancer::from(t.model);
        let held = tone(700, 8000, 10.0);
        let y = enhance(&enh, &held, 1).unwrap();
        assert_eq!(y.len(), held.len());
        let err = y
            .samples()
            .iter()
            .zip(held.samples())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 700.0;
        let first = l1[0];
        assert!(
            err < first,
            "held-out error {err} vs first-epoch L1 {first}"
        );
    }

    #[test]
    fn enhancement_contract() {
        let cfg = tiny();
        let enh = Enhancer::from(build_segan(&cfg, 5).unwrap());
        for len in [1, 255, 256, 257, 1000] {
            let w = tone(len, 8000, 0.0);
            let a = enhance(&enh, &w, 3).unwrap();
            assert_eq!(a.len(), len);
            assert_eq!(a, enhance(&enh, &w, 3).unwrap());
        }
        let w = tone(1000, 8000, 0.0);
        assert_ne!(enhance(&enh, &w, 3).unwrap(), enhance(&enh, &w, 4).unwrap());
        assert!(matches!(
            enhance(&enh, &tone(100, 16000, 0.0), 0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.sknn");
        let enh = Enhancer::from(build_segan(&tiny(), 6).unwrap());
        enh.save(&path).unwrap();
        let back = Enhancer::load(&path).unwrap();
        assert_eq!(back.config, enh.config);
        let w = tone(600, 8000, 0.5);
        assert_eq!(
            enhance(&back, &w, 2).unwrap(),
            enhance(&enh, &w, 2).unwrap()
        );
    }

    #[test]
    fn corpus_rejects_misaligned_pairs() {
        let mut c = PairedCorpus::new();
        assert!(matches!(
            c.push(tone(10, 8000, 0.0), tone(11, 8000, 0.0)),
            Err(Error::Data(_))
        ));
        c.push(tone(10, 8000, 0.0), tone(10, 8000, 0.0)).unwrap();
        assert!(c.push(tone(10, 16000, 0.0), tone(10, 16000, 0.0)).is_err());
        assert!(matches!(
            segan_train(&PairedCorpus::new(), &tiny(), 0),
            Err(Error::Data(_))
        ));
    }
}
