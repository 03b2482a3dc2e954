//! Desk-scale spectral laboratory for intermittent convex-integration
//! constructions: concentrated-oscillated shear building blocks, ideal and
//! resistive defect-reduction steps for the mean-field dynamo system, the
//! same machinery for the geometric transport equation on k-currents, and
//! the magnetostatic eigenfield basis on the unit ball.

pub mod error;
pub mod grid;
pub mod blocks;
pub mod exterior;
pub mod dynamo;
pub mod diffusive;
pub mod gte;
pub mod ball;

pub use error::{Error, Result};
pub use grid::{GridSpec, ScalarField, VectorField};
