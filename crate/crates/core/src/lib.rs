//! Differentiable reservoir proxy simulation and history matching.
//!
//! The crate bundles:
//! - a self-contained reverse-mode autodiff engine ([`autodiff`]),
//! - a reservoir data model with an on-disk format ([`model`]),
//! - a two-phase finite-difference simulator used as the ground-truth
//!   generator ([`oracle`]),
//! - scenario randomization and dataset assembly ([`datagen`]),
//! - a latent-ODE convolutional surrogate ([`surrogate`]),
//! - analytic well inflow built on connection productivity indices
//!   ([`rates`]),
//! - supervised surrogate training ([`training`]),
//! - gradient-based history matching over rock and connectivity
//!   corrections ([`adapt`]).

pub mod adapt;
#[cfg(test)]
mod adapt_tests;
pub mod autodiff;
pub mod datagen;
#[cfg(test)]
mod datagen_tests;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod rates;
pub mod surrogate;
pub mod training;
#[cfg(test)]
mod rates_tests;
pub mod error;
pub mod rng;
pub mod twin;
pub mod units;

pub use error::{Error, Result};
