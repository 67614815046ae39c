//! Robust VIF streamwise regression.
//!
//! A single pass over candidate covariates decides, one at a time, whether
//! each should enter a linear model. The robust selector downweights
//! outlying observations with Tukey biweights built from coordinate-wise
//! Huber fits; the classical VIF selector is included as a baseline.
//! Around the selectors sit a simulation harness for contaminated linear
//! models and a cross-validation pipeline for CSV data.

pub mod cv;
pub mod data;
pub mod error;
pub mod linalg;
pub mod report;
pub mod robust;
pub mod selection;
pub mod sim;

pub use data::{Dataset, StandardizeMode};
pub use error::{Error, Result};
pub use robust::RobustnessConfig;
pub use selection::{select, select_classical, select_robust, Method, Selection, SelectorConfig};
