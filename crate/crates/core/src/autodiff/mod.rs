//! Dense-matrix computation graph with reverse-mode gradients, a finite
//! difference checker and SGD/Adam optimizers.

mod gradcheck;
mod graph;
mod matrix;
mod optim;
mod params;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, TensorCheck, FD_STEP, REL_ERROR_FLOOR};
pub use graph::{sigmoid, Activation, Gradients, Graph, NodeId, Op, LAYER_NORM_EPS, MASK_SENTINEL};
pub(crate) use graph::layer_norm_row;
pub use matrix::Matrix;
pub use optim::{OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::{ParamId, ParamStore, TensorDocument};
