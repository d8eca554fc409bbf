//! State estimation for radial distribution grids under partial observability.
//!
//! The crate reconstructs all bus voltage phasors at a time step where only a
//! subset of power/voltage phasors is reported, given a short fully observable
//! history. Two estimators are provided:
//!
//! - a neural estimator (LSTM history encoder + FC encoder for the partial
//!   frame + scale/shift regressor) trained with a loss that penalizes
//!   violations of the AC power-flow equations, and
//! - a weighted-least-squares baseline that completes missing power phasors by
//!   persistence and minimizes the weighted power-flow residual with a
//!   Levenberg-Marquardt solver.
//!
//! Supporting machinery: admittance-matrix assembly, a Newton-Raphson AC
//! power-flow solver used to synthesize ground-truth voltage trajectories, a
//! synthetic household/PV load generator, dataset windowing/standardization,
//! and polar-space MSE evaluation with CSV/SVG reporting.

pub mod cases;
mod error;
pub mod eval;
pub mod grid;
pub mod lm;
pub mod nn;
pub mod pipeline;
pub mod powerflow;
pub mod profiles;
pub mod standardize;
pub mod svg;
pub mod wls;

pub use error::{Error, Result};
pub use grid::{BranchList, ComplexVec, GridModel, ObservabilityMask};
