//! Numeric substrate: dense row-major arrays, the handful of differentiable
//! kernels the head is built from, and a central-difference gradient checker.
//!
//! Everything is generic over [`Real`] so the same code runs in `f32` for
//! training and `f64` for gradient verification.

mod array;
mod gradcheck;
mod ops;

pub use array::{Real, RealArray};
pub use gradcheck::{check_gradients, CoordCheck, GradCheckConfig, GradCheckReport, GradSlot};
pub use ops::{
    axpy, dot, l2_normalize, l2_normalize_vjp, log_sigmoid, matmul, matmul_vjp, norm, sigmoid,
    softmax_temp, softmax_temp_vjp, softplus, NORM_EPS,
};
