//! Clustered network information criterion (NICc) for linear and logistic
//! regression on clustered data, with AIC, BIC and unclustered NIC for
//! comparison, cluster-based cross-validated deviance as the reference, and
//! forward stepwise selection driven by any of them.

pub mod cli;
pub mod criteria;
pub mod cv;
pub mod data;
pub mod error;
pub mod experiment;
pub mod glm;
pub mod io;
pub mod linalg;
pub mod selection;
pub mod simulation;

pub use criteria::{CriterionName, CriterionValue};
pub use cv::CvResult;
pub use data::{Dataset, Family};
pub use error::{Error, Result};
pub use glm::{fit_glm, GlmFit};
pub use selection::{forward_path, select, Criterion, Evaluator, ModelChoice, Rule, SelectionPath};
pub use simulation::{generate, SimConfig, SimTruth};
