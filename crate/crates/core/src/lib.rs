// negated comparisons are deliberate: NaN must fail every range check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classes;
pub mod error;
pub mod harness;
pub mod losses;
pub mod lqr;
pub mod minimax;
pub mod morel;
pub mod ope;
pub mod planner;
pub mod ci;
pub mod mdp;
pub mod rkhs;
pub mod rng;

pub use error::{Error, Result};
