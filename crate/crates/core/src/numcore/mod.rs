//! Dense linear algebra, activations, a reverse-mode tape and the
//! finite-difference gradient checker.

pub mod gradcheck;
pub mod matrix;
pub mod ops;
pub mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, NamedTensors, ParamBlock, ParamSet};
pub use matrix::{DenseMatrix, DenseVector};
pub use ops::{cosine_sim, leaky_relu, softmax, LEAKY_SLOPE};
pub use tape::{Gradients, Segment, Tape, Var, View};
