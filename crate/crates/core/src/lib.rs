//! Numerical lab for the defocusing quintic wave equation `P u = u^5` on
//! small, decaying perturbations of Minkowski space.

pub mod error;
pub mod fft;
pub mod field;
pub mod grid;
pub mod jet;
pub mod cli;
pub mod config;
pub mod data;
pub mod dispersive;
pub mod evolve;
pub mod metric;
pub mod morawetz;
pub mod norms;
pub mod quadrature;
pub mod snapshot;

pub use error::{Error, Result};
pub use grid::{Grid3, ScalarField, StateSlice};
