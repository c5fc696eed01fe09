//! Dense `f64` tensors with a reverse-mode gradient tape.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{grad_check, relative_error, sample_coords, GradCheckReport, ParamCheck};
pub use graph::{CustomOp, Graph, Var, LAYER_NORM_EPS, MASK_VALUE};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::Tensor;
