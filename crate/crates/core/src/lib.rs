//! Spectral-Galerkin laboratory for boundary observability, HUM control and
//! change-of-regularity experiments on systems of `N` coupled wave equations
//! `u_tt = u_xx - X u_x - q u` on the unit interval with Dirichlet conditions.
//!
//! Everything is finite dimensional: states live in the span of the first `M`
//! Dirichlet modes, time evolution uses a single matrix exponential per run,
//! and Sobolev norms are `(1 + lambda)^s` weighted spectral sums.

// NaN must fail the `!(x >= floor)` guards; mode loops index several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod quadrature;
pub mod spectral;
pub mod operators;
pub mod window;
pub mod evolution;
pub mod control;
pub mod symbols;
pub mod experiments;

pub use error::{Error, Result};
pub use spectral::{ks_norm, ks_pair_norm, laplacian_spectrum, SpectralGrid, VectorState, C64};
