//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations on tensors attached to a [`Tape`] are recorded; [`backward`]
//! walks the recording in reverse. Gradients can themselves be recorded
//! (`create_graph = true`), which gives exact second-order derivatives such
//! as the meta-gradient through an inner gradient step.
//!
//! There is no implicit broadcasting. Bias rows are spread over a batch with
//! an explicit `ones @ bias` product, and scalars with [`Tensor::expand`].

mod backward;
mod ops;
mod optim;
mod params;
mod tensor;

pub use backward::{backward, Gradients};
pub use ops::{Padding, UnfoldSpec};
pub use optim::{adam_step, sgd_step, sgd_tensors, AdamState};
pub use params::{Checkpoint, Param, ParamSet, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use tensor::{Tape, Tensor};
