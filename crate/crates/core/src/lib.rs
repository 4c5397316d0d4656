// NaN must fail bound checks, so `!(a <= b)` is used on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod density;
pub mod dual_algebra;
pub mod energy;
pub mod error;
pub mod numerics;
pub mod oracle;
pub mod potential;
pub mod sweep;
pub mod test_functions;
