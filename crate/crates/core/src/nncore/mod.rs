//! Dense kernels with hand-written backward passes, a parameter store and
//! the Adam optimizer.

pub mod adam;
pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod real;
pub mod tensor;

pub use adam::{AdamConfig, AdamState, DEFAULT_LR};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use params::{ParamId, ParamStore};
pub use real::{Dtype, Real};
pub use tensor::Tensor;
