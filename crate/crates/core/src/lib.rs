//! Predefined-time stabilization of stochastic Itô systems.
//!
//! Signed-power algebra, system models and the infinitesimal generator,
//! closed-form and backstepping controllers, Euler–Maruyama simulation with
//! absorbing settling detection, grid-based Lyapunov certificates, and Monte
//! Carlo settling-time estimation.

// `!(x > 0.0)` guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod cli;
pub mod config;
pub mod controller;
pub mod error;
pub mod fuzzing;
pub mod mc;
pub mod output;
pub mod presets;
pub mod quadrature;
pub mod sigpow;
pub mod sim;
pub mod system;

pub use error::{Error, Result};
