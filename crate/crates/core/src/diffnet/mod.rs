//! A small reverse-mode gradient engine and the layers the classifier
//! needs: linear, GRU cell and a two-layer MLP, plus Adam and a
//! finite-difference checker.

pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;

pub use gradcheck::{finite_diff_check, FdReport};
pub use layers::{GruCell, LayerSpec, Linear, Mlp2};
pub use params::{AdamConfig, Gradients, ParamId, ParamStore, TensorMap};
pub use tape::{softmax, NodeId, Tape};
