#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately catches NaN
pub mod analytic;
pub mod cli;
pub mod functionals;
pub mod measure;
pub mod numfmt;
pub mod solver;
pub mod transport;
