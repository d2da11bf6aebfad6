//! Normalized augmented inverse probability weighting (nAIPW) and the general
//! doubly robust (GDR) family of average treatment effect estimators.
//!
//! The crate covers the whole two-step workflow:
//!
//! - [`dgp`]: synthetic data with AR(1) Gaussian covariates in four role blocks
//!   (confounders, instruments, outcome predictors, noise), randomly drawn
//!   bivariate nonlinear links, logistic treatment and a linear treatment effect.
//! - [`firststage`]: two independent ReLU networks (outcome and propensity)
//!   trained from scratch with Adam and an L1 penalty.
//! - [`crossfit`]: K-fold out-of-fold nuisance prediction.
//! - [`estimators`]: nATE, SR, IPW, nIPW and the GDR family (AIPW, nAIPW and a
//!   thresholded hybrid weighting).
//! - [`variance`]: influence-function variances plus an M-estimation sandwich
//!   used as an independent numeric check.
//! - [`mc`]: Monte Carlo studies, positivity stress tests and a numeric
//!   orthogonality probe.
//! - [`cli`]: the `naipw` command-line driver.
//!
//! ```
//! use naipw::data::Dataset;
//! use naipw::estimators::{gdr, WeightScheme};
//! use naipw::firststage::NuisanceEstimates;
//! use ndarray::Array2;
//!
//! let data = Dataset::new(
//!     Array2::zeros((4, 1)),
//!     vec![1, 1, 0, 0],
//!     vec![2.0, 0.0, 1.0, -1.0],
//! )
//! .unwrap();
//! let nuis = NuisanceEstimates::new(vec![1.0; 4], vec![0.0; 4], vec![0.5; 4]).unwrap();
//! let fit = gdr(&data, &nuis, WeightScheme::Naipw).unwrap();
//! assert!((fit.beta_hat - 1.0).abs() < 1e-12);
//! ```

// `!(x < bound)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod crossfit;
pub mod data;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod firststage;
pub mod mc;
pub mod seed;
pub mod variance;

pub use error::{Error, Result};
