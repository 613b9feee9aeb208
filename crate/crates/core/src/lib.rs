//! Parametric g-formula for static interventions on binary exposures.
//!
//! Two estimators share the same model and standardization machinery:
//! maximum likelihood with a subject-level nonparametric bootstrap, and a
//! Bayesian version that standardizes every posterior draw of the outcome and
//! covariate model parameters. [`simgen`] and [`harness`] reproduce the
//! correlated-exposure and time-varying-confounding simulation studies.

pub mod config;
pub mod error;
pub mod gformula;
pub mod glm;
pub mod harness;
pub mod linalg;
pub mod mcmc;
pub mod model;
pub mod panel;
pub mod rng;
pub mod simgen;
pub mod terms;

pub use error::{Error, Result};
pub use model::{Family, ModelSpec, Prior, PriorSpec, Regime};
pub use panel::{ColumnKind, Panel, PanelBuilder};
pub use terms::{Term, TermList};
