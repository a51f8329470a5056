//! Sequential 1D convolutional networks in `f64`: convolution, transposed
//! convolution, batch normalization, activations, binary cross-entropy, momentum SGD
//! and finite-difference gradient checking.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod tensor;

pub use layers::{Layer, LayerSpec, Mode, ParamGrads};
pub use network::{Grads, Sequential, Tape};
pub use tensor::Tensor;
