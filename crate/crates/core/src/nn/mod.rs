//! Minimal neural-network toolkit: tensors, a named parameter registry,
//! primitives with hand-written backward passes, BCE loss and Adam.

pub mod adam;
pub mod attention;
pub mod channel_attention;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
pub mod ops;
mod registry;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use attention::{EncoderCache, EncoderLayer, EncoderSpec};
pub use channel_attention::ChannelAttention;
pub use gradcheck::{check_gradient, check_gradient_guarded, GradCheckReport};
pub use layers::{Conv2d, Linear};
pub use registry::{Grads, ParamId, Parameter, Registry};
pub use tensor::{Scalar, Tensor};
