//! Numerical laboratory for the wave operator
//! □_κ = -∂_tt + Δ + κ(1-κ)/(1-|x|)^2 on the unit ball, -1/2 < κ < 0.

pub mod config;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod grid;
pub mod report;
pub mod solver;
pub mod stencil;
pub mod tolerance;
pub mod verification;
pub mod weights;

pub use error::{Error, Result};
