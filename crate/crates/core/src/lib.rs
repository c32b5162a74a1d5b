//! Simulation and numerical toolkit for Λ-coalescents: block-counting chains,
//! the drifted-subordinator approximation of `log N_t`, and the asymptotic
//! constants governing absorption times.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod binomial;
pub mod coalescent;
pub mod envelope;
pub mod error;
pub mod harness;
pub mod measure;
pub mod quadrature;
pub mod rates;
pub mod rng;
pub mod stats;
pub mod subordinator;

pub use error::{Error, Result};
pub use measure::{parse_measure, LambdaMeasure};
