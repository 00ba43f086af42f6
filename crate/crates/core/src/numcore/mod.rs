//! Dense tensors, reverse-mode differentiation, Adam and the warmup schedule.

mod adam;
mod gradcheck;
mod graph;
pub mod kernels;
mod real;
mod schedule;
mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use gradcheck::{finite_difference_check, GradCheckConfig, GradCheckReport};
pub use graph::{AttentionLayout, Gate, Gradients, Graph, Span, Var};
pub use real::Real;
pub use schedule::{noam_lr, ScheduleConfig};
pub use tensor::{ParamId, ParamStore, Tensor};
