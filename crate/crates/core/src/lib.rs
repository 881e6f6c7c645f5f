//! Forecasting of vector sequences with periodically stationary generalized
//! multiple (GM) seasonal increments observed with stationary noise.
//!
//! Modules are layered bottom-up: coefficient algebra ([`increments`]),
//! spectral densities and quadrature ([`spectra`]), spectral factorization
//! ([`factorize`]), truncated block operators ([`operators`]), classical
//! estimates ([`forecast`], [`cointegrate`]), robust estimates ([`minimax`])
//! and synthetic data ([`simulate`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cointegrate;
pub mod error;
pub mod factorize;
pub mod forecast;
pub mod increments;
pub mod linalg;
pub mod minimax;
pub mod operators;
pub mod simulate;
pub mod spectra;

pub use error::{GmiError, Result};
pub use num_complex::Complex64;
