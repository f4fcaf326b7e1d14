//! Estimation of nonlinear regression models with Berkson measurement error:
//! `Y = g(X; θ) + ε`, `X = Z + δ`, with `δ ⟂ Z` and `ε ⟂ (X, Z)`.
//!
//! The estimators match the first two conditional moments of `Y` given the
//! observed `Z`, either in closed form, by Gauss–Hermite quadrature, or by
//! importance-sampling simulation.

pub mod builtin;
pub mod config;
pub mod datagen;
pub mod error;
pub mod estimator;
pub mod fd;
pub mod inference;
pub mod io;
pub mod model;
pub mod moments;
pub mod objective;
pub mod optimize;
pub mod quadrature;
pub mod simulated;
pub mod study;

pub use error::{Error, Result};
pub use model::{Dataset, Dims, ModelSpec, MomentPair, ParamSpace, ParamVector};
