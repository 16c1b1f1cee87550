//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::LayerGraph;
use super::layers::Mode;
use super::tensor::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
/// Components smaller than this are compared absolutely rather than relatively.
pub const GRAD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// Which coordinate produced the maximum, for diagnostics.
    pub worst: String,
    pub checked: usize,
}

impl GradReport {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            worst: String::new(),
            checked: 0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, what: impl FnOnce() -> String) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_error || e.is_nan() {
            self.max_rel_error = e;
            self.worst = what();
        }
    }

    pub fn merge(&mut self, other: GradReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
    }
}

/// `|a − n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Central difference of a scalar function at `x` in every coordinate.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn check_scalar_fn(f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> GradReport {
    let numeric = numeric_gradient(f, x);
    let mut r = GradReport::new();
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        r.record(*a, *n, || {
            format!("coordinate {i}: analytic {a}, numeric {n}")
        });
    }
    r
}

/// Checks input, auxiliary and parameter gradients of `L = Σ r ⊙ g(x)` for a
/// random projection `r`. The forward pass runs in train mode with a fixed
/// dropout seed so the function is deterministic.
pub fn check_graph(
    graph: &LayerGraph,
    input: &Tensor,
    aux: &[&Tensor],
    seed: u64,
) -> Result<GradReport> {
    let mut g = graph.clone();
    g.zero_grad();
    let y = g.forward(input, aux, Mode::Train, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let r: Vec<f64> = (0..y.numel())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let grads = g.backward(&Tensor::new(y.shape().to_vec(), r.clone())?)?;

    let mut probe = g.clone();
    let loss = |gr: &mut LayerGraph, x: &Tensor, a: &[&Tensor]| -> Result<f64> {
        let y = gr.forward(x, a, Mode::Train, seed)?;
        Ok(y.data().iter().zip(&r).map(|(p, q)| p * q).sum())
    };
    let mut report = GradReport::new();

    let mut x = input.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + FD_STEP;
        let up = loss(&mut probe, &x, aux)?;
        x.data_mut()[i] = orig - FD_STEP;
        let down = loss(&mut probe, &x, aux)?;
        x.data_mut()[i] = orig;
        let a = grads.input.data()[i];
        let n = (up - down) / (2.0 * FD_STEP);
        report.record(a, n, || format!("input[{i}]: analytic {a}, numeric {n}"));
    }

    for k in 0..aux.len() {
        let mut owned: Vec<Tensor> = aux.iter().map(|t| (*t).clone()).collect();
        for i in 0..owned[k].numel() {
            let orig = owned[k].data()[i];
            owned[k].data_mut()[i] = orig + FD_STEP;
            let refs: Vec<&Tensor> = owned.iter().collect();
            let up = loss(&mut probe, input, &refs)?;
            owned[k].data_mut()[i] = orig - FD_STEP;
            let refs: Vec<&Tensor> = owned.iter().collect();
            let down = loss(&mut probe, input, &refs)?;
            owned[k].data_mut()[i] = orig;
            let a = grads.aux[k].data()[i];
            let n = (up - down) / (2.0 * FD_STEP);
            report.record(a, n, || format!("aux{k}[{i}]: analytic {a}, numeric {n}"));
        }
    }

    let layers = g.params().len();
    for node in 0..layers {
        for p in 0..g.params()[node].len() {
            for i in 0..g.params()[node][p].value.len() {
                let orig = probe.params()[node][p].value[i];
                probe.params_mut()[node][p].value[i] = orig + FD_STEP;
                let up = loss(&mut probe, input, aux)?;
                probe.params_mut()[node][p].value[i] = orig - FD_STEP;
                let down = loss(&mut probe, input, aux)?;
                probe.params_mut()[node][p].value[i] = orig;
                let a = g.params()[node][p].grad[i];
                let n = (up - down) / (2.0 * FD_STEP);
                report.record(a, n, || {
                    format!("node {node} param {p}[{i}]: analytic {a}, numeric {n}")
                });
            }
        }
    }
    Ok(report)
}

/// Every layer kind, by its manifest name.
pub const LAYER_KINDS: [&str; 11] = [
    "conv1d",
    "conv1d_transposed",
    "conv2d",
    "maxpool2d",
    "mfm",
    "nin",
    "fully_connected",
    "dropout",
    "prelu",
    "vbn",
    "softmax",
];

/// A random single-layer graph of the named kind with a matching random input
/// (VBN layers get a random reference batch).
pub fn layer_case(kind: &str, seed: u64) -> Result<(LayerGraph, Tensor)> {
    use super::graph::GraphSpec;
    use super::layers::{LayerSpec, Padding};
    use crate::error::Error;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let pad = if rng.random::<bool>() {
        Padding::Same
    } else {
        Padding::Valid
    };
    let (layer, shape): (LayerSpec, Vec<usize>) = match kind {
        "conv1d" => {
            let width = rng.random_range(1..=5);
            let l = rng.random_range(width..=12);
            let out_ch = rng.random_range(1..=3);
            let stride = rng.random_range(1..=3);
            (
                LayerSpec::Conv1d {
                    in_ch: c,
                    out_ch,
                    width,
                    stride,
                    padding: pad,
                },
                vec![c, l],
            )
        }
        "conv1d_transposed" => {
            let l = rng.random_range(1..=6);
            (
                LayerSpec::Conv1dTransposed {
                    in_ch: c,
                    out_ch: rng.random_range(1..=3),
                    width: rng.random_range(1..=5),
                    stride: rng.random_range(1..=3),
                },
                vec![c, l],
            )
        }
        "conv2d" => {
            let kernel = [rng.random_range(1..=3), rng.random_range(1..=3)];
            let h = rng.random_range(kernel[0]..=6);
            let w = rng.random_range(kernel[1]..=6);
            (
                LayerSpec::Conv2d {
                    in_ch: c,
                    out_ch: rng.random_range(1..=3),
                    kernel,
                    stride: [rng.random_range(1..=2), rng.random_range(1..=2)],
                    padding: pad,
                },
                vec![c, h, w],
            )
        }
        "maxpool2d" => {
            let kernel = [rng.random_range(1..=3), rng.random_range(1..=3)];
            let h = rng.random_range(kernel[0]..=7);
            let w = rng.random_range(kernel[1]..=7);
            (
                LayerSpec::MaxPool2d {
                    kernel,
                    stride: [rng.random_range(1..=3), rng.random_range(1..=3)],
                },
                vec![c, h, w],
            )
        }
        "mfm" => (
            LayerSpec::Mfm,
            vec![2 * c, rng.random_range(1..=4), rng.random_range(1..=4)],
        ),
        "nin" => (
            LayerSpec::Nin {
                in_ch: c,
                out_ch: rng.random_range(1..=4),
            },
            vec![c, rng.random_range(1..=4), rng.random_range(1..=3)],
        ),
        "fully_connected" => {
            let l = rng.random_range(1..=4);
            (
                LayerSpec::FullyConnected {
                    in_features: c * l,
                    out_features: rng.random_range(1..=4),
                },
                vec![c, l],
            )
        }
        "dropout" => (
            LayerSpec::Dropout {
                rate: rng.random_range(0.0..0.8),
            },
            vec![c, rng.random_range(1..=8)],
        ),
        "prelu" => (
            LayerSpec::Prelu { channels: c },
            vec![c, rng.random_range(1..=8)],
        ),
        "vbn" => (
            LayerSpec::Vbn {
                channels: c,
                eps: 1e-5,
            },
            vec![c, rng.random_range(1..=5)],
        ),
        "softmax" => (LayerSpec::Softmax, vec![rng.random_range(2..=5)]),
        other => return Err(Error::Domain(format!("unknown layer kind {other:?}"))),
    };
    let mut spec = GraphSpec::new(shape.clone());
    spec.push(layer);
    let mut g = LayerGraph::build(spec, rng.random())?;
    // move PReLU slopes and VBN affine terms off their initial values
    for p in g.params_mut().iter_mut().flatten() {
        if p.value.iter().all(|v| *v == p.value[0]) {
            p.value
                .iter_mut()
                .for_each(|v| *v = rng.random_range(0.1..1.5));
        }
    }
    let full: Vec<usize> = std::iter::once(b).chain(shape.iter().copied()).collect();
    let mut normal = || -> f64 {
        // Box-Muller keeps this free of distribution crates
        let u1: f64 = rng.random_range(1e-12..1.0);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let n: usize = full.iter().product();
    let x = Tensor::new(full.clone(), (0..n).map(|_| normal()).collect())?;
    if g.has_vbn() {
        let mut rshape = full;
        rshape[0] = 4;
        let rn: usize = rshape.iter().product();
        let reference = Tensor::new(rshape, (0..rn).map(|_| 0.5 + normal()).collect())?;
        g.set_reference(&reference, &[])?;
    }
    Ok((g, x))
}
