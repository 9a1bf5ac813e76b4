//! Physics-driven synthetic data engine for magnetic resonance.
//!
//! The crate evolves magnetization under the Bloch equation, evaluates
//! closed-form MR signal models, generates parametric phantoms and
//! imperfection fields, degrades signals the way real acquisitions do and
//! writes deterministic paired training datasets. Two quantification
//! consumers (dictionary matching and a small trainable regressor) close the
//! loop against the generating ground truth.

// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod bloch;
pub mod cli;
pub mod datasets;
pub mod degrade;
pub mod error;
pub mod grid;
pub mod phantoms;
pub mod quantify;
pub mod rng;
pub mod sequences;

pub use error::{Error, Result};
pub use num_complex::Complex64;
