//! Semiparametric estimation of average structural functions (ASF) and
//! average partial effects (APE) in binary response panels under an index
//! sufficiency restriction on the unobserved heterogeneity.
//!
//! The pipeline has three steps: estimate the common coefficients (CMLE for
//! logistic errors, smoothed maximum score in general), run a local
//! polynomial regression of the outcome on the generated index and the
//! sufficiency index, then average the fitted conditional mean (or its
//! derivative) over the empirical index distribution. Parametric random
//! effects and correlated random effects baselines, a cluster bootstrap, and
//! a simulation harness round out the toolkit.

pub mod baselines;
pub mod beta;
pub mod bootstrap;
pub mod cli;
pub mod effects;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod localpoly;
pub mod mc;
pub mod optim;
pub mod panel;
pub mod quad;
pub mod rng;

pub use error::{Error, Result};
