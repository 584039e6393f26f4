//! Counterfactual removal of label bias and context bias from multimodal
//! sentiment regressors.
//!
//! The pipeline: [`dataset`] generates corpora with planted biases, [`model`]
//! trains a small fusion regressor on them, [`counterfactual`] produces the
//! two counterfactual outcomes, [`debias`] subtracts them with weights
//! calibrated by a coarse-to-fine grid search, and [`eval`] scores the result.

pub mod counterfactual;
pub mod dataset;
pub mod debias;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod predictions;

pub use error::{Error, Result};
pub use numerics::{Matrix, Vector};
