//! Xavier initialization and the Adam optimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::LayerGraph;
use super::layers::{LayerSpec, Param};
use crate::error::{Error, Result};

pub const PRELU_INIT_SLOPE: f64 = 0.25;

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `n` draws from `U(−b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(fan_in: usize, fan_out: usize, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let b = xavier_bound(fan_in, fan_out);
    (0..n).map(|_| rng.random_range(-b..=b)).collect()
}

pub(crate) fn init_params(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> Vec<Param> {
    let shapes = spec.param_shapes();
    match spec {
        LayerSpec::Prelu { channels } => vec![Param::new(
            shapes[0].clone(),
            vec![PRELU_INIT_SLOPE; *channels],
        )],
        LayerSpec::Vbn { channels, .. } => vec![
            Param::new(shapes[0].clone(), vec![1.0; *channels]),
            Param::new(shapes[1].clone(), vec![0.0; *channels]),
        ],
        _ => match spec.fans() {
            Some((fi, fo)) => {
                let n: usize = shapes[0].iter().product();
                let nb: usize = shapes[1].iter().product();
                vec![
                    Param::new(shapes[0].clone(), xavier_uniform(fi, fo, n, rng)),
                    Param::new(shapes[1].clone(), vec![0.0; nb]),
                ]
            }
            None => Vec::new(),
        },
    }
}

/// Parameters of one layer: Xavier-uniform weights, zero biases, PReLU slopes
/// of 0.25, unit VBN scales.
pub fn xavier_init(spec: &LayerSpec, seed: u64) -> Result<Vec<Param>> {
    spec.validate()?;
    Ok(init_params(spec, &mut ChaCha8Rng::seed_from_u64(seed)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update with ε = 1e-8.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
) -> Result<()> {
    adam_step_eps(params, grads, state, lr, beta1, beta2, 1e-8)
}

fn adam_step_eps(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Domain(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
        return Err(Error::Domain(format!(
            "Adam betas must lie in [0, 1), got {beta1}, {beta2}"
        )));
    }
    if grads.len() != params.len() {
        return Err(Error::DimMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    if state.m.len() != params.len() {
        *state = AdamState::zeros(params.len());
    }
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over every parameter tensor of a graph.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        if !(cfg.lr > 0.0) {
            return Err(Error::Domain(format!(
                "learning rate must be positive, got {}",
                cfg.lr
            )));
        }
        Ok(Self {
            cfg,
            states: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Applies the accumulated gradients, then clears them.
    pub fn step(&mut self, graph: &mut LayerGraph) -> Result<()> {
        let params: Vec<&mut Param> = graph.params_mut().iter_mut().flatten().collect();
        if self.states.len() != params.len() {
            self.states = params
                .iter()
                .map(|p| AdamState::zeros(p.value.len()))
                .collect();
        }
        for (p, s) in params.into_iter().zip(&mut self.states) {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric("non-finite gradient".into()));
            }
            adam_step_eps(
                &mut p.value,
                &p.grad,
                s,
                self.cfg.lr,
                self.cfg.beta1,
                self.cfg.beta2,
                self.cfg.eps,
            )?;
            p.zero_grad();
        }
        Ok(())
    }
}
