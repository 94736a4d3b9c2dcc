//! Dense `f64` tensors with define-by-run reverse-mode automatic
//! differentiation, the neural building blocks used by the trajectory
//! models, and the Adam optimizer.
//!
//! Values live in [`Tensor`]s. A forward pass records operations on a
//! [`Graph`] tape, addressed through [`Var`] handles; [`Graph::backward`]
//! walks the tape in reverse and returns [`Gradients`]. Parameters are kept
//! in a [`ParamStore`] that is bound onto a fresh graph for every pass.

mod adam;
mod error;
pub mod gradcheck;
mod graph;
pub mod nn;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::TensorError;
pub use graph::{ConvGeometry, Gradients, Graph, Var};
pub use params::{Bound, Checkpoint, ParamId, ParamStore, CHECKPOINT_FORMAT};
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
