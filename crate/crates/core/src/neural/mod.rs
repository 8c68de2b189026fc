//! Minimal 64-bit neural network kernel with hand-written backward passes.
//!
//! Layers are immutable during a forward pass: caches are returned by value
//! and handed back to `backward`, so one set of parameters can serve several
//! threads. Gradients are accumulated (`+=`) into caller-owned tensors laid
//! out in the same order as the layer's `params()`.

mod adam;
mod conv;
mod gradcheck;
mod layers;
mod loss;
mod lstm;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use conv::{Conv2d, ConvCache};
pub use gradcheck::{gradient_check, relative_error, Parameterized};
pub use layers::{Dense, Layer, ResidualBlock, Sequential, Trace};
pub use loss::{softmax, softmax_cross_entropy};
pub use lstm::{Lstm, LstmState, StepCache};
pub use tensor::{zeros_like, Tensor};
