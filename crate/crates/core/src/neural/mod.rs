//! A small differentiable-layer kernel: tensors, layer graphs with skip
//! connections, LSGAN and cross-entropy losses, Adam, Xavier initialization
//! and finite-difference gradient checking. Everything runs in `f64` on the CPU.

pub mod gradcheck;
mod graph;
mod io;
mod layers;
mod loss;
mod optim;
mod tensor;

pub use graph::{GraphSpec, InputGrads, LayerGraph, NodeSpec, Source};
pub use io::{decode_graph, encode_graph, load_graph, save_graph};
pub use layers::{geometry, LayerSpec, Mode, Padding, Param, VbnReference};
pub use loss::{lsgan_d_loss, lsgan_g_loss, softmax_ce_loss, Loss};
pub use optim::{
    adam_step, xavier_bound, xavier_init, xavier_uniform, Adam, AdamConfig, AdamState,
    PRELU_INIT_SLOPE,
};
pub use tensor::Tensor;
