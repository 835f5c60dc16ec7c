//! Monte Carlo checks of symmetries of neural network ensembles.
//!
//! Networks are sampled in parameter space ([`ensembles`]); their n-point
//! correlation functions are estimated ([`correlators`]) and tested for
//! invariance under group actions ([`symmetry`]). [`training`] covers
//! symmetry-breaking initializations, the neural tangent kernel and
//! invariance-preserving gradient descent.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correlators;
pub mod ensembles;
pub mod error;
pub mod linalg;
pub mod mc;
pub mod rng;
pub mod stats;
pub mod symmetry;
pub mod training;

pub use error::{Error, Result};
