//! Minimal f64 neural-network stack: dense tensors, a reverse-mode tape,
//! layer builders, and Adam. Everything is deterministic given a seed.

pub mod adam;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use layers::{
    bernoulli_st, fd_max_rel_err, gumbel_softmax_soft, gumbel_softmax_st, hard_bits, hard_onehot,
    sigmoid_plain, softmax_plain, Act, GruCell, Linear, Mlp,
};
pub use params::{ParamId, Params};
pub use tape::{sigmoid, Tape, Var};
pub use tensor::Tensor;
