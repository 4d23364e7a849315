//! Dense `f64` tensors with a reverse-mode tape, MLP layers, AdamW and
//! binary checkpoints.

mod checkpoint;
mod gradcheck;
mod graph;
mod nn;
mod optim;
mod params;
mod value;

pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use gradcheck::{check_param_grads, relative_error, GradCheck};
pub use graph::{Axis, Graph, Var};
pub use nn::{mlp_forward, Activation, Init, Linear, Mlp};
pub use optim::{AdamW, AdamWConfig};
pub use params::{ParamId, ParamStore};
pub use value::Tensor;

pub(crate) use graph::{matmul_raw, rotate_pairs, softmax_row};
