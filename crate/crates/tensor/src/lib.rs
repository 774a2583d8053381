//! Reverse-mode automatic differentiation over dense `f32`/`f64` arrays.
//!
//! The engine is deliberately small: row-major arrays, a dynamically
//! recorded graph of [`Var`] nodes, the layers needed by convolutional
//! video interpolation networks and an AdaMax optimiser.

pub mod array;
pub mod gradcheck;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod param;
pub mod scalar;
pub mod var;

pub use array::Array;
pub use ops::{AxisMap, Border, ConvSpec};
pub use param::{Graph, Param, ParamBuilder, ParamStore};
pub use scalar::{lit, Scalar};
pub use var::{Gradients, Var};
