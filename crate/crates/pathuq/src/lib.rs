//! Goal-oriented relative-entropy uncertainty bounds for path-space
//! quantities of interest.

// `!(x > 0.0)` deliberately rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cgf;
pub mod linear_gaussian;
pub mod mc;
pub mod numerics;
pub mod relent;
pub mod scenarios;
