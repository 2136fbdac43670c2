//! Dense-tensor math with reverse-mode automatic differentiation and Adam.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{
    finite_difference_audit, GradCheckReport, GroupResult, DEFAULT_STEP, DEFAULT_TOLERANCE,
};
pub use params::{xavier_matrix, BoundParams, LinearParams, MlpParams, ParamId, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
