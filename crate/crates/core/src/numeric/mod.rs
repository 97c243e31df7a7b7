//! Dense tensors, the reverse-mode graph for MLP stacks, AdamW, and the
//! warm-restart cosine schedule.

mod graph;
mod init;
mod optim;
mod schedule;
mod tensor;

pub use graph::{Gradients, Graph, MarginMode, NodeId};
pub use init::{init_linear, seeded_rng};
pub use optim::{adamw_step, zero_grads, AdamW, ParamId, ParamSet, Parameter};
pub use schedule::{lr_at, LrSchedule};
pub use tensor::{Real, Tensor};
