//! Deep factor models: a per-firm neural network scores firms from lagged
//! characteristics and macro predictors, security sorting turns the scores
//! into value-weighted long-short factors, and a linear (optionally
//! ReLU-conditional) pricing head explains test-portfolio returns with the
//! deep factors on top of benchmark factors. Training minimizes the mean
//! squared pricing error by mini-batch SGD through a logistic relaxation of
//! the sort.

pub mod conditional;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod net;
pub mod pipeline;
pub mod pricing;
pub mod report;
pub mod sorting;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
pub use linalg::Matrix;
