//! Numerical toolkit for stochastic delay differential equations without
//! dissipativity: characteristic-root location, fundamental solutions,
//! variation-of-constants evaluation, path simulation (Brownian and Levy
//! noise, retarded and neutral form), and empirical stationarity
//! diagnostics.

pub mod config;
pub mod error;
pub mod experiments;
pub mod fundsol;
pub mod measures;
pub mod simulate;
pub mod spectrum;
pub mod stationarity;
pub mod voc;

pub use error::Error;
pub use measures::{DensityPiece, Segment, SignedMeasure};
