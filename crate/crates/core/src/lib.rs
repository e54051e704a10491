//! Common mechanism regression (CMR).
//!
//! Multitask linear regression where every task `i` maps a matrix-valued
//! input `X ∈ R^{B×P}` to `y = tr(Wᵀ X V_i)`: a shared "common mechanism"
//! `W` acts on the band dimension and a task-local `V_i` on the spatial one.
//!
//! The crate is `no_std` (it needs `alloc`) and holds only pure numerics:
//!
//! * [`linalg`]: symmetric eigendecomposition, PSD roots, subspace distance
//! * [`model`]: ground truth, matrix-variate normal sampling, closed-form moments
//! * [`estimator`]: the spectral estimator, local fits, gradient refinement
//! * [`experiment`]: phase diagrams, sweeps and concentration harnesses
//! * [`vision`]: block reshaping, random ReLU uplift, pairwise digit tasks
//!
//! File formats, threading and the command line live in the `cmr` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod estimator;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod vision;

pub use error::{Error, Result};
