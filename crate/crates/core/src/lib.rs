//! Discretized nonlocal fractional parabolic operators on box grids.
//!
//! The crate samples a divergence-form heat operator `H = ∂_t + L_σ` on a
//! one- or two-dimensional box, builds its fractional power `H^s` through
//! the spectral multiplier and through a causal semigroup quadrature, and
//! provides the solvers and diagnostics used to study exterior-data
//! inverse problems for `H^s`.

pub mod error;
pub mod field;
pub mod grid;
pub mod quad;

pub use error::{Error, Result};
pub use field::{ModalField, SpaceTimeField};
pub mod interp;
pub mod semigroup;
pub mod fractional;
pub mod forward;
pub mod lifted;
pub mod transform;
pub mod extension;
pub mod carleman;
