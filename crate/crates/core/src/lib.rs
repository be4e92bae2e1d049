//! Two-stage variable selection for high-dimensional binary regression:
//! Lasso screening with a convex loss, then Generalized Information
//! Criterion minimization over the Lasso-ordered nested family.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod data;
pub mod error;
pub mod experiment;
pub mod family;
pub mod gic;
pub mod loss;
pub mod metrics;
pub mod quadrature;
pub mod sim;
pub mod solver;
pub mod theory;

pub use data::{Dataset, PredictorSet};
pub use error::{Error, Result};
pub use family::{FamilySource, NestedFamily};
pub use gic::{GicPenalty, Procedure, SelectionOutcome};
pub use loss::LossSpec;
pub use sim::{GroundTruth, SimModel, SimModelSpec};
pub use solver::{PathResult, PenalizedFit, SolverConfig};
