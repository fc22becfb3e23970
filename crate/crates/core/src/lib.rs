// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod counterfactual;
pub mod dataset;
pub mod dist;
pub mod error;
pub mod estimate;
pub mod ident;
pub mod likelihood;
pub mod optim;
pub mod order_stats;
pub mod quadrature;
pub mod sieve;
pub mod study;

pub use error::{Error, Result};
