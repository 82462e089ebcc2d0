//! Minimal reverse-mode differentiation: 2-D `f64` tensors, a recording
//! [`Graph`], a [`ParameterStore`] with Adam, and a finite-difference checker.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use graph::{sigmoid, Gradients, Graph, Var};
pub use params::{
    AdamConfig, ParamId, ParameterStore, StoreCheckpoint, StoredMoments, StoredTensor, CHECKPOINT_VERSION,
};
pub use tensor::{order_free_sum, Tensor};
