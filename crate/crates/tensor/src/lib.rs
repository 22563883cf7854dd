//! Dense tensor arithmetic with reverse-mode automatic differentiation.
//!
//! The numerical foundation for the dcg sketch model: tensors are plain
//! row-major buffers, gradients come from a per-forward recording tape, and
//! every primitive's backward pass is validated against central finite
//! differences (see [`check::finite_difference_check`] and the gradcheck
//! integration tests).
//!
//! Precision policy: training runs at f32, gradient checks at f64. Both are
//! instances of [`Scalar`].

pub mod check;
mod conv;
mod error;
pub mod optim;
pub mod params;
mod scalar;
mod snapshot;
mod tape;
mod tensor;

pub use check::{finite_difference_check, relative_error, FdReport};
pub use conv::update_running_stats;
pub use error::{Result, TensorError};
pub use optim::Adam;
pub use params::{Bindings, ParamId, ParamSet};
pub use scalar::{DType, Scalar};
pub use snapshot::{read_tensor, write_tensor, AnyTensor};
pub use tape::{GradStore, Tape, Var};
pub use tensor::{standard_normal, Tensor};
