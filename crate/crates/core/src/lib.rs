//! Electromigration aging simulation for on-chip power grids.

pub mod engine;
pub mod error;
pub mod failure;
pub mod irdrop;
pub mod krylov;
pub mod linalg;
pub mod montecarlo;
pub mod netlist;
pub mod params;
pub mod report;
pub mod stress;
pub mod synth;
pub mod thermal;

pub use error::{Error, Result};
