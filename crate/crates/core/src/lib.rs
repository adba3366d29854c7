#![allow(clippy::needless_range_loop)]

pub mod action_gradient;
pub mod bvp;
pub mod chain_algebra;
pub mod config;
pub mod conley_zehnder;
pub mod error;
pub mod floer_solver;
pub mod hamiltonian;
pub mod hybrid_iso;
pub mod loopspace;
pub mod morse_complex;
pub mod numfmt;
pub mod orbits;
pub mod pipeline;

pub use error::{Error, Result};
pub use nalgebra;
pub use loopspace::{FourierLoop, GalerkinSpace};
