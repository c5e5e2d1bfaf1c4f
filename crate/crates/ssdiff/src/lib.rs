//! Numerical toolkit for steady-state diffusion approximation of kNN random
//! walks on the flat torus.
//!
//! The pipeline samples a point cloud from a smooth density `f`, builds the
//! k-nearest-neighbour Markov kernel, computes its invariant measure and
//! compares it against the diffusion target proportional to `f^{2+2/d}`, both
//! through the Stein-type bound terms ([`stein`]) and through exact
//! Wasserstein-2 distances ([`transport`]).
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`tensor`] | tensor powers and metric inner products |
//! | [`torus`] | torus geometry, density family, sampling, conformal geodesics |
//! | [`knn`] | radius function, kNN kernel, jump moments |
//! | [`stationary`] | invariant measures and communicating classes |
//! | [`stein`] | `f_k(t)`, scaling, discrepancy terms, tail series |
//! | [`transport`] | exact and entropic W2 |
//! | [`semigroup`] | 1-D semigroup laboratory |
//! | [`experiments`] | sweeps, fits, reports, acceptance checks |

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod geodesic;
pub mod knn;
pub mod semigroup;
pub mod stationary;
pub mod stein;
pub mod tensor;
pub mod torus;
pub mod transport;

mod numeric;

pub use error::{Error, Result};

/// Version of every emitted JSON document.
pub const SCHEMA_VERSION: u32 = 1;
