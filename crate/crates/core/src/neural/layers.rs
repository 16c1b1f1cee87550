//! Layer kinds with shape inference, forward and backward passes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    /// Output length `ceil(len / stride)`, extra padding on the right.
    #[default]
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    /// `[B, in_ch, L] → [B, out_ch, L']`, cross-correlation.
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        width: usize,
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    /// Exact adjoint of a same-padded `Conv1d` from `out_ch` to `in_ch`;
    /// `[B, in_ch, L] → [B, out_ch, L·stride]`.
    Conv1dTransposed {
        in_ch: usize,
        out_ch: usize,
        width: usize,
        stride: usize,
    },
    /// `[B, in_ch, H, W] → [B, out_ch, H', W']`.
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        #[serde(default)]
        padding: Padding,
    },
    /// Valid (floor) max pooling over the last two axes.
    MaxPool2d {
        kernel: [usize; 2],
        stride: [usize; 2],
    },
    /// Max-feature-map: `out_c = max(x_c, x_{c + C/2})`.
    Mfm,
    /// Network-in-network: a 1×1 convolution over the channel axis.
    Nin { in_ch: usize, out_ch: usize },
    /// Flattens everything after the batch axis.
    FullyConnected {
        in_features: usize,
        out_features: usize,
    },
    /// Inverted dropout; identity in eval mode.
    Dropout { rate: f64 },
    /// Per-channel parametric ReLU.
    Prelu { channels: usize },
    /// Virtual batch normalization with per-channel scale and shift.
    Vbn {
        channels: usize,
        #[serde(default = "default_vbn_eps")]
        eps: f64,
    },
    /// Softmax over the channel axis of `[B, C]`.
    Softmax,
}

fn default_vbn_eps() -> f64 {
    1e-5
}

pub(crate) fn shape_err(layer: &str, detail: impl Into<String>) -> Error {
    Error::Shape {
        layer: layer.to_string(),
        detail: detail.into(),
    }
}

/// Output length and left padding of a strided window along one axis.
pub fn geometry(len: usize, k: usize, s: usize, pad: Padding) -> Option<(usize, usize)> {
    match pad {
        Padding::Valid => (len >= k).then(|| ((len - k) / s + 1, 0)),
        Padding::Same => {
            if len == 0 {
                return None;
            }
            let out = len.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(len);
            Some((out, total / 2))
        }
    }
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Conv1dTransposed { .. } => "conv1d_transposed",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Mfm => "mfm",
            LayerSpec::Nin { .. } => "nin",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Prelu { .. } => "prelu",
            LayerSpec::Vbn { .. } => "vbn",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(shape_err(self.name(), d));
        match *self {
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                width,
                stride,
                ..
            }
            | LayerSpec::Conv1dTransposed {
                in_ch,
                out_ch,
                width,
                stride,
            } => {
                if in_ch == 0 || out_ch == 0 || width == 0 || stride == 0 {
                    return bad(format!("zero hyperparameter in {self:?}"));
                }
            }
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                ..
            } => {
                if in_ch == 0 || out_ch == 0 || kernel.contains(&0) || stride.contains(&0) {
                    return bad(format!("zero hyperparameter in {self:?}"));
                }
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                if kernel.contains(&0) || stride.contains(&0) {
                    return bad(format!("zero hyperparameter in {self:?}"));
                }
            }
            LayerSpec::Nin { in_ch, out_ch } => {
                if in_ch == 0 || out_ch == 0 {
                    return bad("zero channels".into());
                }
            }
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => {
                if in_features == 0 || out_features == 0 {
                    return bad("zero features".into());
                }
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return bad(format!("rate {rate} outside [0, 1)"));
                }
            }
            LayerSpec::Prelu { channels } | LayerSpec::Vbn { channels, .. } => {
                if channels == 0 {
                    return bad("zero channels".into());
                }
                if let LayerSpec::Vbn { eps, .. } = *self {
                    if !(eps > 0.0) {
                        return bad(format!("eps {eps} must be positive"));
                    }
                }
            }
            LayerSpec::Mfm | LayerSpec::Softmax => {}
        }
        Ok(())
    }

    /// Parameter tensor shapes, weights first.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                width,
                ..
            } => vec![vec![out_ch, in_ch, width], vec![out_ch]],
            LayerSpec::Conv1dTransposed {
                in_ch,
                out_ch,
                width,
                ..
            } => {
                vec![vec![in_ch, out_ch, width], vec![out_ch]]
            }
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => {
                vec![vec![out_ch, in_ch, kernel[0], kernel[1]], vec![out_ch]]
            }
            LayerSpec::Nin { in_ch, out_ch } => vec![vec![out_ch, in_ch], vec![out_ch]],
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => {
                vec![vec![out_features, in_features], vec![out_features]]
            }
            LayerSpec::Prelu { channels } => vec![vec![channels]],
            LayerSpec::Vbn { channels, .. } => vec![vec![channels], vec![channels]],
            _ => vec![],
        }
    }

    /// Fan-in and fan-out of the weight tensor, for layers that have one.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                width,
                ..
            }
            | LayerSpec::Conv1dTransposed {
                in_ch,
                out_ch,
                width,
                ..
            } => Some((in_ch * width, out_ch * width)),
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => {
                let area = kernel[0] * kernel[1];
                Some((in_ch * area, out_ch * area))
            }
            LayerSpec::Nin { in_ch, out_ch } => Some((in_ch, out_ch)),
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => Some((in_features, out_features)),
            _ => None,
        }
    }

    /// Output shape (batch axis excluded) for an input shape (batch axis excluded).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let name = self.name();
        let need_rank = |r: usize| -> Result<()> {
            if input.len() != r {
                return Err(shape_err(
                    name,
                    format!("expects rank {} input, got {input:?}", r + 1),
                ));
            }
            Ok(())
        };
        let need_ch = |c: usize| -> Result<()> {
            if input.first() != Some(&c) {
                return Err(shape_err(
                    name,
                    format!("expects {c} channels, got {input:?}"),
                ));
            }
            Ok(())
        };
        match *self {
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                width,
                stride,
                padding,
            } => {
                need_rank(2)?;
                need_ch(in_ch)?;
                let (l, _) = geometry(input[1], width, stride, padding).ok_or_else(|| {
                    shape_err(
                        name,
                        format!("length {} shorter than width {width}", input[1]),
                    )
                })?;
                Ok(vec![out_ch, l])
            }
            LayerSpec::Conv1dTransposed {
                in_ch,
                out_ch,
                stride,
                ..
            } => {
                need_rank(2)?;
                need_ch(in_ch)?;
                if input[1] == 0 {
                    return Err(shape_err(name, "empty input"));
                }
                Ok(vec![out_ch, input[1] * stride])
            }
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
            } => {
                need_rank(3)?;
                need_ch(in_ch)?;
                let h = geometry(input[1], kernel[0], stride[0], padding);
                let w = geometry(input[2], kernel[1], stride[1], padding);
                match (h, w) {
                    (Some((h, _)), Some((w, _))) => Ok(vec![out_ch, h, w]),
                    _ => Err(shape_err(
                        name,
                        format!("input {input:?} smaller than kernel {kernel:?}"),
                    )),
                }
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                need_rank(3)?;
                let h = geometry(input[1], kernel[0], stride[0], Padding::Valid);
                let w = geometry(input[2], kernel[1], stride[1], Padding::Valid);
                match (h, w) {
                    (Some((h, _)), Some((w, _))) => Ok(vec![input[0], h, w]),
                    _ => Err(shape_err(
                        name,
                        format!("input {input:?} smaller than window {kernel:?}"),
                    )),
                }
            }
            LayerSpec::Mfm => {
                let c = *input
                    .first()
                    .ok_or_else(|| shape_err(name, "missing channel axis"))?;
                if c % 2 != 0 {
                    return Err(shape_err(
                        name,
                        format!("needs an even channel count, got {c}"),
                    ));
                }
                let mut out = input.to_vec();
                out[0] = c / 2;
                Ok(out)
            }
            LayerSpec::Nin { in_ch, out_ch } => {
                if input.is_empty() {
                    return Err(shape_err(name, "missing channel axis"));
                }
                need_ch(in_ch)?;
                let mut out = input.to_vec();
                out[0] = out_ch;
                Ok(out)
            }
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => {
                let n: usize = input.iter().product();
                if n != in_features || input.is_empty() {
                    return Err(shape_err(
                        name,
                        format!("expects {in_features} features, got {input:?}"),
                    ));
                }
                Ok(vec![out_features])
            }
            LayerSpec::Dropout { .. } => Ok(input.to_vec()),
            LayerSpec::Prelu { channels } | LayerSpec::Vbn { channels, .. } => {
                if input.is_empty() {
                    return Err(shape_err(name, "missing channel axis"));
                }
                need_ch(channels)?;
                Ok(input.to_vec())
            }
            LayerSpec::Softmax => {
                need_rank(1)?;
                Ok(input.to_vec())
            }
        }
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(shape: Vec<usize>, value: Vec<f64>) -> Self {
        let n = value.len();
        debug_assert_eq!(n, shape.iter().product::<usize>());
        Self {
            shape,
            value,
            grad: vec![0.0; n],
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Per-element statistics of a fixed reference batch.
#[derive(Debug, Clone, PartialEq)]
pub struct VbnReference {
    pub mean: Vec<f64>,
    pub mean_sq: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub(crate) enum Cache {
    None,
    /// MFM: `true` where the first half won (ties included).
    FirstWins(Vec<bool>),
    /// Max pooling: flat input index of each output's maximum.
    Argmax(Vec<usize>),
    /// Dropout multipliers.
    Scale(Vec<f64>),
    /// Softmax output.
    Output(Tensor),
    Vbn {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        self_weight: f64,
    },
}

pub(crate) struct Ctx<'a> {
    pub mode: Mode,
    pub rng: &'a mut ChaCha8Rng,
    pub vbn: &'a mut Option<VbnReference>,
    /// Reference pass: VBN layers record batch statistics instead of blending.
    pub reference: bool,
}

struct G1 {
    b: usize,
    cin: usize,
    lin: usize,
    cout: usize,
    lout: usize,
    k: usize,
    s: usize,
    pad: usize,
}

impl G1 {
    /// Output positions `j` with `0 <= j·s + kk − pad < lin`.
    fn jrange(&self, kk: usize) -> (usize, usize) {
        let off = kk as isize - self.pad as isize;
        let s = self.s as isize;
        let lo = if off < 0 { (-off + s - 1) / s } else { 0 };
        let last = self.lin as isize - 1 - off;
        let hi = if last < 0 {
            0
        } else {
            (last / s + 1).min(self.lout as isize)
        };
        (lo as usize, (hi as usize).max(lo as usize))
    }

    /// Tap `kk` reads input `j·s + kk − pad = (j + q)·s + p`; returns the
    /// phase `p`, the shift `q` and the valid output range.
    fn tap(&self, kk: usize) -> (usize, usize, usize, usize) {
        let off = kk as isize - self.pad as isize;
        let s = self.s as isize;
        let (lo, hi) = self.jrange(kk);
        let q = off.div_euclid(s);
        // lo + q >= 0 whenever the range is nonempty
        let start = (lo as isize + q).max(0) as usize;
        (off.rem_euclid(s) as usize, start, lo, hi)
    }

    /// Splits a row into its `s` decimated phases, laid out back to back.
    fn phase_len(&self) -> usize {
        self.lin.div_ceil(self.s)
    }

    fn split_phases(&self, row: &[f64], out: &mut [f64]) {
        let pl = self.phase_len();
        for (i, &v) in row.iter().enumerate() {
            out[(i % self.s) * pl + i / self.s] = v;
        }
    }

    fn merge_phases(&self, ph: &[f64], row: &mut [f64]) {
        let pl = self.phase_len();
        for (i, r) in row.iter_mut().enumerate() {
            *r += ph[(i % self.s) * pl + i / self.s];
        }
    }

    fn phased_input(&self, x: &[f64]) -> Vec<f64> {
        let pl = self.phase_len() * self.s;
        let mut out = vec![0.0; self.b * self.cin * pl];
        for (r, o) in x.chunks_exact(self.lin).zip(out.chunks_exact_mut(pl)) {
            self.split_phases(r, o);
        }
        out
    }

    fn fwd(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let xp = self.phased_input(x);
        let pl = self.phase_len();
        let mut y = vec![0.0; self.b * self.cout * self.lout];
        for bi in 0..self.b {
            for co in 0..self.cout {
                let yo = &mut y[(bi * self.cout + co) * self.lout..][..self.lout];
                for ci in 0..self.cin {
                    let xs = &xp[(bi * self.cin + ci) * pl * self.s..][..pl * self.s];
                    for kk in 0..self.k {
                        let wv = w[(co * self.cin + ci) * self.k + kk];
                        let (p, start, lo, hi) = self.tap(kk);
                        if lo == hi {
                            continue;
                        }
                        let src = &xs[p * pl + start..][..hi - lo];
                        for (o, &v) in yo[lo..hi].iter_mut().zip(src) {
                            *o += wv * v;
                        }
                    }
                }
            }
        }
        y
    }

    fn bwd_data(&self, gy: &[f64], w: &[f64]) -> Vec<f64> {
        let pl = self.phase_len();
        let mut gx = vec![0.0; self.b * self.cin * self.lin];
        let mut acc = vec![0.0; pl * self.s];
        for bi in 0..self.b {
            for ci in 0..self.cin {
                acc.iter_mut().for_each(|v| *v = 0.0);
                for co in 0..self.cout {
                    let go = &gy[(bi * self.cout + co) * self.lout..][..self.lout];
                    for kk in 0..self.k {
                        let wv = w[(co * self.cin + ci) * self.k + kk];
                        let (p, start, lo, hi) = self.tap(kk);
                        if lo == hi {
                            continue;
                        }
                        let dst = &mut acc[p * pl + start..][..hi - lo];
                        for (d, &g) in dst.iter_mut().zip(&go[lo..hi]) {
                            *d += wv * g;
                        }
                    }
                }
                self.merge_phases(&acc, &mut gx[(bi * self.cin + ci) * self.lin..][..self.lin]);
            }
        }
        gx
    }

    fn bwd_weight(&self, x: &[f64], gy: &[f64], gw: &mut [f64]) {
        let xp = self.phased_input(x);
        let pl = self.phase_len();
        for bi in 0..self.b {
            for co in 0..self.cout {
                let go = &gy[(bi * self.cout + co) * self.lout..][..self.lout];
                for ci in 0..self.cin {
                    let xs = &xp[(bi * self.cin + ci) * pl * self.s..][..pl * self.s];
                    for kk in 0..self.k {
                        let (p, start, lo, hi) = self.tap(kk);
                        if lo == hi {
                            continue;
                        }
                        gw[(co * self.cin + ci) * self.k + kk] +=
                            dot(&go[lo..hi], &xs[p * pl + start..][..hi - lo]);
                    }
                }
            }
        }
    }
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

struct G2 {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    ho: usize,
    wo: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
}

fn axis_range(k: usize, pad: usize, s: usize, len: usize, out: usize) -> (usize, usize) {
    G1 {
        b: 0,
        cin: 0,
        lin: len,
        cout: 0,
        lout: out,
        k: 0,
        s,
        pad,
    }
    .jrange(k)
}

impl G2 {
    fn fwd(&self, x: &[f64], wt: &[f64]) -> Vec<f64> {
        let (hw, ohw) = (self.h * self.w, self.ho * self.wo);
        let mut y = vec![0.0; self.b * self.cout * ohw];
        for bi in 0..self.b {
            for co in 0..self.cout {
                let yo = &mut y[(bi * self.cout + co) * ohw..][..ohw];
                for ci in 0..self.cin {
                    let xs = &x[(bi * self.cin + ci) * hw..][..hw];
                    for a in 0..self.kh {
                        let (ilo, ihi) = axis_range(a, self.ph, self.sh, self.h, self.ho);
                        for c in 0..self.kw {
                            let wv = wt[((co * self.cin + ci) * self.kh + a) * self.kw + c];
                            let (jlo, jhi) = axis_range(c, self.pw, self.sw, self.w, self.wo);
                            for i in ilo..ihi {
                                let xr = &xs[(i * self.sh + a - self.ph) * self.w..][..self.w];
                                let yr = &mut yo[i * self.wo..][..self.wo];
                                for j in jlo..jhi {
                                    yr[j] += wv * xr[j * self.sw + c - self.pw];
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    fn bwd(&self, x: &[f64], wt: &[f64], gy: &[f64], gw: &mut [f64]) -> Vec<f64> {
        let (hw, ohw) = (self.h * self.w, self.ho * self.wo);
        let mut gx = vec![0.0; x.len()];
        for bi in 0..self.b {
            for co in 0..self.cout {
                let go = &gy[(bi * self.cout + co) * ohw..][..ohw];
                for ci in 0..self.cin {
                    let base = (bi * self.cin + ci) * hw;
                    for a in 0..self.kh {
                        let (ilo, ihi) = axis_range(a, self.ph, self.sh, self.h, self.ho);
                        for c in 0..self.kw {
                            let widx = ((co * self.cin + ci) * self.kh + a) * self.kw + c;
                            let wv = wt[widx];
                            let (jlo, jhi) = axis_range(c, self.pw, self.sw, self.w, self.wo);
                            let mut acc = 0.0;
                            for i in ilo..ihi {
                                let row = base + (i * self.sh + a - self.ph) * self.w;
                                let gr = &go[i * self.wo..][..self.wo];
                                for j in jlo..jhi {
                                    let xi = row + j * self.sw + c - self.pw;
                                    acc += gr[j] * x[xi];
                                    gx[xi] += wv * gr[j];
                                }
                            }
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
        gx
    }
}

fn add_channel_bias(y: &mut [f64], bias: &[f64], b: usize, spatial: usize) {
    let c = bias.len();
    for bi in 0..b {
        for (ci, bv) in bias.iter().enumerate() {
            y[(bi * c + ci) * spatial..][..spatial]
                .iter_mut()
                .for_each(|v| *v += bv);
        }
    }
}

fn channel_sums(gy: &[f64], gb: &mut [f64], b: usize, spatial: usize) {
    let c = gb.len();
    for bi in 0..b {
        for (ci, g) in gb.iter_mut().enumerate() {
            *g += gy[(bi * c + ci) * spatial..][..spatial].iter().sum::<f64>();
        }
    }
}

fn with_batch(b: usize, rest: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(rest.len() + 1);
    s.push(b);
    s.extend_from_slice(rest);
    s
}

impl LayerSpec {
    fn g1(&self, x: &Tensor) -> G1 {
        match *self {
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                width,
                stride,
                padding,
            } => {
                let lin = x.shape()[2];
                let (lout, pad) = geometry(lin, width, stride, padding).expect("shape checked");
                G1 {
                    b: x.batch(),
                    cin: in_ch,
                    lin,
                    cout: out_ch,
                    lout,
                    k: width,
                    s: stride,
                    pad,
                }
            }
            LayerSpec::Conv1dTransposed {
                in_ch,
                out_ch,
                width,
                stride,
            } => {
                // the adjoint conv maps out_ch × (L·s) to in_ch × L
                let lin = x.shape()[2];
                let lout = lin * stride;
                let (_, pad) = geometry(lout, width, stride, Padding::Same).expect("shape checked");
                G1 {
                    b: x.batch(),
                    cin: out_ch,
                    lin: lout,
                    cout: in_ch,
                    lout: lin,
                    k: width,
                    s: stride,
                    pad,
                }
            }
            _ => unreachable!("not a 1-D convolution"),
        }
    }

    fn g2(&self, x: &Tensor) -> G2 {
        let LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        } = *self
        else {
            unreachable!("not a 2-D convolution")
        };
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let (ho, ph) = geometry(h, kernel[0], stride[0], padding).expect("shape checked");
        let (wo, pw) = geometry(w, kernel[1], stride[1], padding).expect("shape checked");
        G2 {
            b: x.batch(),
            cin: in_ch,
            h,
            w,
            cout: out_ch,
            ho,
            wo,
            kh: kernel[0],
            kw: kernel[1],
            sh: stride[0],
            sw: stride[1],
            ph,
            pw,
        }
    }

    pub(crate) fn forward(
        &self,
        params: &[Param],
        x: &Tensor,
        ctx: &mut Ctx,
    ) -> Result<(Tensor, Cache)> {
        if x.shape().is_empty() {
            return Err(shape_err(self.name(), "missing batch axis"));
        }
        let out_rest = self.output_shape(&x.shape()[1..])?;
        let b = x.batch();
        let out_shape = with_batch(b, &out_rest);
        match *self {
            LayerSpec::Conv1d { .. } => {
                let g = self.g1(x);
                let mut y = g.fwd(x.data(), &params[0].value);
                add_channel_bias(&mut y, &params[1].value, b, g.lout);
                Ok((Tensor::new(out_shape, y)?, Cache::None))
            }
            LayerSpec::Conv1dTransposed { .. } => {
                let g = self.g1(x);
                let mut y = g.bwd_data(x.data(), &params[0].value);
                add_channel_bias(&mut y, &params[1].value, b, g.lin);
                Ok((Tensor::new(out_shape, y)?, Cache::None))
            }
            LayerSpec::Conv2d { .. } => {
                let g = self.g2(x);
                let mut y = g.fwd(x.data(), &params[0].value);
                add_channel_bias(&mut y, &params[1].value, b, g.ho * g.wo);
                Ok((Tensor::new(out_shape, y)?, Cache::None))
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                let (c, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
                let (ho, wo) = (out_rest[1], out_rest[2]);
                let mut y = Vec::with_capacity(b * c * ho * wo);
                let mut arg = Vec::with_capacity(y.capacity());
                for plane in 0..b * c {
                    let base = plane * h * w;
                    for i in 0..ho {
                        for j in 0..wo {
                            let mut best = (f64::NEG_INFINITY, base);
                            for a in 0..kernel[0] {
                                for e in 0..kernel[1] {
                                    let idx = base + (i * stride[0] + a) * w + j * stride[1] + e;
                                    if x.data()[idx] > best.0 {
                                        best = (x.data()[idx], idx);
                                    }
                                }
                            }
                            y.push(best.0);
                            arg.push(best.1);
                        }
                    }
                }
                Ok((Tensor::new(out_shape, y)?, Cache::Argmax(arg)))
            }
            LayerSpec::Mfm => {
                let (c, s) = (x.channels(), x.spatial());
                let half = c / 2;
                let mut y = Vec::with_capacity(x.numel() / 2);
                let mut first = Vec::with_capacity(x.numel() / 2);
                for bi in 0..b {
                    let ex = &x.data()[bi * c * s..][..c * s];
                    let (lo, hi) = ex.split_at(half * s);
                    for (p, q) in lo.iter().zip(hi) {
                        let f = p >= q;
                        first.push(f);
                        y.push(if f { *p } else { *q });
                    }
                }
                Ok((Tensor::new(out_shape, y)?, Cache::FirstWins(first)))
            }
            LayerSpec::Nin { in_ch, out_ch } => {
                let s = x.spatial();
                let g = G1 {
                    b,
                    cin: in_ch,
                    lin: s,
                    cout: out_ch,
                    lout: s,
                    k: 1,
                    s: 1,
                    pad: 0,
                };
                let mut y = g.fwd(x.data(), &params[0].value);
                add_channel_bias(&mut y, &params[1].value, b, s);
                Ok((Tensor::new(out_shape, y)?, Cache::None))
            }
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => {
                let (w, bias) = (&params[0].value, &params[1].value);
                let mut y = Vec::with_capacity(b * out_features);
                for bi in 0..b {
                    let xs = &x.data()[bi * in_features..][..in_features];
                    for o in 0..out_features {
                        let row = &w[o * in_features..][..in_features];
                        y.push(bias[o] + row.iter().zip(xs).map(|(a, c)| a * c).sum::<f64>());
                    }
                }
                Ok((Tensor::new(out_shape, y)?, Cache::None))
            }
            LayerSpec::Dropout { rate } => {
                if ctx.mode == Mode::Eval || rate == 0.0 {
                    return Ok((x.clone(), Cache::None));
                }
                let keep = 1.0 - rate;
                let scale: Vec<f64> = (0..x.numel())
                    .map(|_| {
                        if ctx.rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let y = x.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
                Ok((Tensor::new(out_shape, y)?, Cache::Scale(scale)))
            }
            LayerSpec::Prelu { channels } => {
                let s = x.spatial();
                let a = &params[0].value;
                let mut y = x.data().to_vec();
                for bi in 0..b {
                    for (ci, slope) in a.iter().enumerate() {
                        y[(bi * channels + ci) * s..][..s].iter_mut().for_each(|v| {
                            if *v < 0.0 {
                                *v *= slope
                            }
                        });
                    }
                }
                Ok((Tensor::new(out_shape, y)?, Cache::None))
            }
            LayerSpec::Vbn { channels, eps } => {
                let per = x.numel() / b.max(1);
                let s = per / channels;
                let (gamma, beta) = (&params[0].value, &params[1].value);
                let (mean, var, self_weight): (Vec<f64>, Vec<f64>, f64) = if ctx.reference {
                    let mut m = vec![0.0; per];
                    let mut m2 = vec![0.0; per];
                    for bi in 0..b {
                        for (e, v) in x.data()[bi * per..][..per].iter().enumerate() {
                            m[e] += v / b as f64;
                            m2[e] += v * v / b as f64;
                        }
                    }
                    let var = m
                        .iter()
                        .zip(&m2)
                        .map(|(a, q)| (q - a * a).max(0.0))
                        .collect();
                    *ctx.vbn = Some(VbnReference {
                        mean: m.clone(),
                        mean_sq: m2,
                        count: b,
                    });
                    (m, var, 0.0)
                } else {
                    let r = ctx.vbn.as_ref().ok_or_else(|| {
                        Error::State(
                            "virtual batch norm used before a reference batch was set".into(),
                        )
                    })?;
                    if r.mean.len() != per {
                        return Err(shape_err(
                            "vbn",
                            format!("reference has {} elements, input {per}", r.mean.len()),
                        ));
                    }
                    (Vec::new(), Vec::new(), 1.0 / (r.count as f64 + 1.0))
                };
                let mut y = vec![0.0; x.numel()];
                let mut xhat = vec![0.0; x.numel()];
                let mut inv_std = vec![0.0; x.numel()];
                for bi in 0..b {
                    for e in 0..per {
                        let i = bi * per + e;
                        let v = x.data()[i];
                        let (mu, var) = if ctx.reference {
                            (mean[e], var[e])
                        } else {
                            let r = ctx.vbn.as_ref().expect("checked above");
                            let c = self_weight;
                            let mu = (1.0 - c) * r.mean[e] + c * v;
                            let m2 = (1.0 - c) * r.mean_sq[e] + c * v * v;
                            (mu, (m2 - mu * mu).max(0.0))
                        };
                        let is = 1.0 / (var + eps).sqrt();
                        let ch = e / s;
                        xhat[i] = (v - mu) * is;
                        inv_std[i] = is;
                        y[i] = gamma[ch] * xhat[i] + beta[ch];
                    }
                }
                Ok((
                    Tensor::new(out_shape, y)?,
                    Cache::Vbn {
                        xhat,
                        inv_std,
                        self_weight,
                    },
                ))
            }
            LayerSpec::Softmax => {
                let c = out_rest[0];
                let mut y = x.data().to_vec();
                for row in y.chunks_mut(c) {
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    row.iter_mut().for_each(|v| *v = (*v - m).exp());
                    let z: f64 = row.iter().sum();
                    row.iter_mut().for_each(|v| *v /= z);
                }
                let t = Tensor::new(out_shape, y)?;
                Ok((t.clone(), Cache::Output(t)))
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub(crate) fn backward(
        &self,
        params: &mut [Param],
        x: &Tensor,
        cache: &Cache,
        gy: &Tensor,
    ) -> Result<Tensor> {
        let b = x.batch();
        let gx = match (self, cache) {
            (LayerSpec::Conv1d { .. }, _) => {
                let g = self.g1(x);
                channel_sums(gy.data(), &mut params[1].grad, b, g.lout);
                g.bwd_weight(x.data(), gy.data(), &mut params[0].grad);
                g.bwd_data(gy.data(), &params[0].value)
            }
            (LayerSpec::Conv1dTransposed { .. }, _) => {
                let g = self.g1(x);
                channel_sums(gy.data(), &mut params[1].grad, b, g.lin);
                g.bwd_weight(gy.data(), x.data(), &mut params[0].grad);
                g.fwd(gy.data(), &params[0].value)
            }
            (LayerSpec::Conv2d { .. }, _) => {
                let g = self.g2(x);
                channel_sums(gy.data(), &mut params[1].grad, b, g.ho * g.wo);
                let w = &mut params[0];
                g.bwd(x.data(), &w.value, gy.data(), &mut w.grad)
            }
            (LayerSpec::MaxPool2d { .. }, Cache::Argmax(arg)) => {
                let mut gx = vec![0.0; x.numel()];
                for (g, &i) in gy.data().iter().zip(arg) {
                    gx[i] += g;
                }
                gx
            }
            (LayerSpec::Mfm, Cache::FirstWins(first)) => {
                let (c, s) = (x.channels(), x.spatial());
                let half = c / 2;
                let mut gx = vec![0.0; x.numel()];
                for bi in 0..b {
                    for p in 0..half * s {
                        let o = bi * half * s + p;
                        let target = bi * c * s + p + if first[o] { 0 } else { half * s };
                        gx[target] = gy.data()[o];
                    }
                }
                gx
            }
            (LayerSpec::Nin { in_ch, out_ch }, _) => {
                let s = x.spatial();
                let g = G1 {
                    b,
                    cin: *in_ch,
                    lin: s,
                    cout: *out_ch,
                    lout: s,
                    k: 1,
                    s: 1,
                    pad: 0,
                };
                channel_sums(gy.data(), &mut params[1].grad, b, s);
                g.bwd_weight(x.data(), gy.data(), &mut params[0].grad);
                g.bwd_data(gy.data(), &params[0].value)
            }
            (
                LayerSpec::FullyConnected {
                    in_features,
                    out_features,
                },
                _,
            ) => {
                let (n_in, n_out) = (*in_features, *out_features);
                let mut gx = vec![0.0; b * n_in];
                for bi in 0..b {
                    let xs = &x.data()[bi * n_in..][..n_in];
                    let gxs = &mut gx[bi * n_in..][..n_in];
                    for o in 0..n_out {
                        let g = gy.data()[bi * n_out + o];
                        params[1].grad[o] += g;
                        let wrow = &params[0].value[o * n_in..][..n_in];
                        for (gv, w) in gxs.iter_mut().zip(wrow) {
                            *gv += g * w;
                        }
                        let grow = &mut params[0].grad[o * n_in..][..n_in];
                        for (gw, xv) in grow.iter_mut().zip(xs) {
                            *gw += g * xv;
                        }
                    }
                }
                gx
            }
            (LayerSpec::Dropout { .. }, Cache::Scale(scale)) => {
                gy.data().iter().zip(scale).map(|(g, s)| g * s).collect()
            }
            (LayerSpec::Dropout { .. }, _) => gy.data().to_vec(),
            (LayerSpec::Prelu { channels }, _) => {
                let s = x.spatial();
                let mut gx = gy.data().to_vec();
                for bi in 0..b {
                    for ci in 0..*channels {
                        let slope = params[0].value[ci];
                        let base = (bi * channels + ci) * s;
                        let mut ga = 0.0;
                        for p in base..base + s {
                            let v = x.data()[p];
                            if v < 0.0 {
                                ga += gy.data()[p] * v;
                                gx[p] *= slope;
                            }
                        }
                        params[0].grad[ci] += ga;
                    }
                }
                gx
            }
            (
                LayerSpec::Vbn { channels, .. },
                Cache::Vbn {
                    xhat,
                    inv_std,
                    self_weight,
                },
            ) => {
                let per = x.numel() / b.max(1);
                let s = per / channels;
                let c = *self_weight;
                let mut gx = vec![0.0; x.numel()];
                for i in 0..x.numel() {
                    let ch = (i % per) / s;
                    let g = gy.data()[i];
                    params[0].grad[ch] += g * xhat[i];
                    params[1].grad[ch] += g;
                    let d = inv_std[i] * ((1.0 - c) - c * xhat[i] * xhat[i]);
                    gx[i] = g * params[0].value[ch] * d;
                }
                gx
            }
            (LayerSpec::Softmax, Cache::Output(y)) => {
                let c = y.channels();
                let mut gx = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(c).zip(gy.data().chunks(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(a, g)| a * (g - dot)));
                }
                gx
            }
            _ => {
                return Err(Error::State(format!(
                    "{} backward with a mismatched cache",
                    self.name()
                )))
            }
        };
        Tensor::new(x.shape().to_vec(), gx)
    }
}
