//! Ordered layer graphs with channel-concatenating skip and auxiliary inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{shape_err, Cache, Ctx, LayerSpec, Mode, Param, VbnReference};
use super::optim::init_params;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Where a node reads from. A node with several sources sees their
/// concatenation along the channel axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Input,
    Aux(usize),
    Node(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub layer: LayerSpec,
    /// Empty means "the previous node" (the graph input for node 0).
    #[serde(default)]
    pub inputs: Vec<Source>,
}

/// Layer list plus input contracts; shapes exclude the batch axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub input_shape: Vec<usize>,
    #[serde(default)]
    pub aux_shapes: Vec<Vec<usize>>,
    pub nodes: Vec<NodeSpec>,
}

impl GraphSpec {
    pub fn new(input_shape: Vec<usize>) -> Self {
        Self {
            input_shape,
            aux_shapes: Vec::new(),
            nodes: Vec::new(),
        }
    }

    /// Registers an auxiliary input and returns its index.
    pub fn add_aux(&mut self, shape: Vec<usize>) -> usize {
        self.aux_shapes.push(shape);
        self.aux_shapes.len() - 1
    }

    /// Appends a node fed by the previous node; returns its index.
    pub fn push(&mut self, layer: LayerSpec) -> usize {
        self.push_from(layer, Vec::new())
    }

    pub fn push_from(&mut self, layer: LayerSpec, inputs: Vec<Source>) -> usize {
        self.nodes.push(NodeSpec { layer, inputs });
        self.nodes.len() - 1
    }

    fn sources(&self, i: usize) -> Vec<Source> {
        let n = &self.nodes[i];
        if !n.inputs.is_empty() {
            n.inputs.clone()
        } else if i == 0 {
            vec![Source::Input]
        } else {
            vec![Source::Node(i - 1)]
        }
    }

    /// Validates the wiring and returns every node's output shape.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.nodes.is_empty() {
            return Err(shape_err("graph", "no layers"));
        }
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            node.layer.validate()?;
            let srcs = self.sources(i);
            let mut parts = Vec::with_capacity(srcs.len());
            for s in &srcs {
                parts.push(match *s {
                    Source::Input => self.input_shape.clone(),
                    Source::Aux(a) => self.aux_shapes.get(a).cloned().ok_or_else(|| {
                        shape_err(
                            node.layer.name(),
                            format!("node {i} reads missing aux input {a}"),
                        )
                    })?,
                    Source::Node(j) if j < i => shapes[j].clone(),
                    Source::Node(j) => {
                        return Err(shape_err(
                            node.layer.name(),
                            format!("node {i} reads node {j}, which does not precede it"),
                        ))
                    }
                });
            }
            let first = &parts[0];
            for p in &parts[1..] {
                if p.len() != first.len() || p.is_empty() || p[1..] != first[1..] {
                    return Err(shape_err(
                        node.layer.name(),
                        format!("node {i} concatenates incompatible shapes {first:?} and {p:?}"),
                    ));
                }
            }
            let mut input = first.clone();
            if !input.is_empty() {
                input[0] = parts.iter().map(|p| p[0]).sum();
            }
            let out = node
                .layer
                .output_shape(&input)
                .map_err(|e| annotate(e, i))?;
            shapes.push(out);
        }
        Ok(shapes)
    }
}

fn annotate(e: Error, node: usize) -> Error {
    match e {
        Error::Shape { layer, detail } => Error::Shape {
            layer: format!("{layer} (node {node})"),
            detail,
        },
        other => other,
    }
}

#[derive(Debug, Clone)]
struct Tape {
    inputs: Vec<Tensor>,
    caches: Vec<Cache>,
    batch: usize,
}

/// Gradients with respect to the graph input and each auxiliary input.
#[derive(Debug, Clone)]
pub struct InputGrads {
    pub input: Tensor,
    pub aux: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct LayerGraph {
    spec: GraphSpec,
    shapes: Vec<Vec<usize>>,
    params: Vec<Vec<Param>>,
    vbn: Vec<Option<VbnReference>>,
    tape: Option<Tape>,
}

impl PartialEq for LayerGraph {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params
    }
}

impl LayerGraph {
    /// Builds the graph and draws Xavier-uniform weights from `seed`.
    pub fn build(spec: GraphSpec, seed: u64) -> Result<Self> {
        let shapes = spec.infer_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .nodes
            .iter()
            .map(|n| init_params(&n.layer, &mut rng))
            .collect();
        let n = spec.nodes.len();
        Ok(Self {
            spec,
            shapes,
            params,
            vbn: vec![None; n],
            tape: None,
        })
    }

    /// Rebuilds a graph from a spec and flat parameter values in node order.
    pub fn from_values(spec: GraphSpec, values: &[f64]) -> Result<Self> {
        let mut g = Self::build(spec, 0)?;
        let total = g.num_params();
        if values.len() != total {
            return Err(Error::DimMismatch {
                expected: total,
                got: values.len(),
            });
        }
        let mut off = 0;
        for p in g.params.iter_mut().flatten() {
            let n = p.value.len();
            p.value.copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(g)
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("graphs have at least one node")
    }

    /// Output shape of every node, batch axis excluded.
    pub fn node_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn params(&self) -> &[Vec<Param>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<Param>] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().flatten().map(|p| p.value.len()).sum()
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.params
            .iter()
            .flatten()
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().flatten().for_each(Param::zero_grad);
    }

    pub fn has_vbn(&self) -> bool {
        self.spec
            .nodes
            .iter()
            .any(|n| matches!(n.layer, LayerSpec::Vbn { .. }))
    }

    fn check_inputs(&self, input: &Tensor, aux: &[&Tensor]) -> Result<usize> {
        let b = input.batch();
        let check = |t: &Tensor, want: &[usize], what: &str| -> Result<()> {
            if t.shape().is_empty() || &t.shape()[1..] != want || t.batch() != b || b == 0 {
                return Err(shape_err(
                    "graph",
                    format!(
                        "{what} has shape {:?}, expected [B={b}, {want:?}]",
                        t.shape()
                    ),
                ));
            }
            Ok(())
        };
        check(input, &self.spec.input_shape, "input")?;
        if aux.len() != self.spec.aux_shapes.len() {
            return Err(shape_err(
                "graph",
                format!(
                    "expected {} aux inputs, got {}",
                    self.spec.aux_shapes.len(),
                    aux.len()
                ),
            ));
        }
        for (a, want) in aux.iter().zip(&self.spec.aux_shapes) {
            check(a, want, "aux input")?;
        }
        Ok(b)
    }

    /// Forward pass that records activations for [`LayerGraph::backward`].
    /// Dropout masks are drawn from `seed` in train mode.
    pub fn forward(
        &mut self,
        input: &Tensor,
        aux: &[&Tensor],
        mode: Mode,
        seed: u64,
    ) -> Result<Tensor> {
        self.tape = None;
        let batch = self.check_inputs(input, aux)?;
        let mut tape = Tape {
            inputs: Vec::new(),
            caches: Vec::new(),
            batch,
        };
        let y = execute(
            &self.spec,
            &self.params,
            &mut self.vbn,
            input,
            aux,
            mode,
            seed,
            false,
            Some(&mut tape),
        )?;
        self.tape = Some(tape);
        Ok(y)
    }

    /// Eval-mode forward pass without recording; pure in the parameters.
    pub fn infer(&self, input: &Tensor, aux: &[&Tensor]) -> Result<Tensor> {
        self.check_inputs(input, aux)?;
        let mut vbn = self.vbn.clone();
        execute(
            &self.spec,
            &self.params,
            &mut vbn,
            input,
            aux,
            Mode::Eval,
            0,
            false,
            None,
        )
    }

    /// Records per-element statistics of a fixed reference batch in every VBN layer.
    pub fn set_reference(&mut self, input: &Tensor, aux: &[&Tensor]) -> Result<()> {
        for slot in &mut self.vbn {
            *slot = None;
        }
        self.check_inputs(input, aux)?;
        execute(
            &self.spec,
            &self.params,
            &mut self.vbn,
            input,
            aux,
            Mode::Eval,
            0,
            true,
            None,
        )?;
        Ok(())
    }

    /// Backpropagates `gy` through the last recorded forward pass, accumulating
    /// parameter gradients. The recording is consumed.
    pub fn backward(&mut self, gy: &Tensor) -> Result<InputGrads> {
        let tape = self.tape.take().ok_or_else(|| {
            Error::State("backward called without a preceding forward pass".into())
        })?;
        let b = tape.batch;
        let out_shape = std::iter::once(b)
            .chain(self.output_shape().iter().copied())
            .collect::<Vec<_>>();
        if gy.shape() != out_shape.as_slice() {
            return Err(shape_err(
                "graph",
                format!(
                    "output gradient {:?} does not match output {out_shape:?}",
                    gy.shape()
                ),
            ));
        }
        let n = self.spec.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[n - 1] = Some(gy.clone());
        let with_b = |s: &[usize]| {
            std::iter::once(b)
                .chain(s.iter().copied())
                .collect::<Vec<_>>()
        };
        let mut g_input = Tensor::zeros(&with_b(&self.spec.input_shape));
        let mut g_aux: Vec<Tensor> = self
            .spec
            .aux_shapes
            .iter()
            .map(|s| Tensor::zeros(&with_b(s)))
            .collect();
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let gx = self.spec.nodes[i]
                .layer
                .backward(&mut self.params[i], &tape.inputs[i], &tape.caches[i], &g)
                .map_err(|e| annotate(e, i))?;
            let srcs = self.spec.sources(i);
            let sizes: Vec<usize> = srcs
                .iter()
                .map(|s| match *s {
                    Source::Input => self.spec.input_shape[0],
                    Source::Aux(a) => self.spec.aux_shapes[a][0],
                    Source::Node(j) => self.shapes[j][0],
                })
                .collect();
            let pieces = if srcs.len() == 1 {
                vec![gx]
            } else {
                gx.split_channels(&sizes)?
            };
            for (s, piece) in srcs.iter().zip(pieces) {
                match *s {
                    Source::Input => g_input.add_assign(&piece.reshape(g_input.shape().to_vec())?),
                    Source::Aux(a) => {
                        let shape = g_aux[a].shape().to_vec();
                        g_aux[a].add_assign(&piece.reshape(shape)?)
                    }
                    Source::Node(j) => match grads[j].as_mut() {
                        Some(acc) => acc.add_assign(&piece.reshape(with_b(&self.shapes[j]))?),
                        None => grads[j] = Some(piece.reshape(with_b(&self.shapes[j]))?),
                    },
                }
            }
        }
        Ok(InputGrads {
            input: g_input,
            aux: g_aux,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn execute(
    spec: &GraphSpec,
    params: &[Vec<Param>],
    vbn: &mut [Option<VbnReference>],
    input: &Tensor,
    aux: &[&Tensor],
    mode: Mode,
    seed: u64,
    reference: bool,
    mut tape: Option<&mut Tape>,
) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.nodes.len();
    let mut outputs: Vec<Tensor> = Vec::with_capacity(n);
    for i in 0..n {
        let parts: Vec<&Tensor> = spec
            .sources(i)
            .iter()
            .map(|s| match *s {
                Source::Input => input,
                Source::Aux(a) => aux[a],
                Source::Node(j) => &outputs[j],
            })
            .collect();
        let x = Tensor::concat_channels(&parts)?;
        let mut ctx = Ctx {
            mode,
            rng: &mut rng,
            vbn: &mut vbn[i],
            reference,
        };
        let layer = &spec.nodes[i].layer;
        let (y, cache) = layer
            .forward(&params[i], &x, &mut ctx)
            .map_err(|e| annotate(e, i))?;
        if !y.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite activation in {} (node {i})",
                layer.name()
            )));
        }
        if let Some(t) = tape.as_deref_mut() {
            t.inputs.push(x);
            t.caches.push(cache);
        }
        outputs.push(y);
    }
    Ok(outputs.pop().expect("nonempty"))
}
