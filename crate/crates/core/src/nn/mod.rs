//! Reverse-mode autodiff, Adam, and a small Transformer encoder-decoder.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod transformer;

pub use checkpoint::Checkpoint;
pub use gradcheck::grad_check;
pub use optim::{Adam, AdamConfig};
pub use params::{Gradients, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use transformer::{Seq2Seq, TransformerConfig};
