//! Latent Gaussian models with GMRF imputation effects for missing covariates.

pub mod categorical;
pub mod cholesky;
pub mod error;
pub mod explore;
pub mod gmrf;
pub mod imputation;
pub mod laplace;
pub mod marginal;
pub mod mcmc;
pub mod missingness;
pub mod model;
pub mod optim;
pub mod ordering;
pub mod sparse;

pub use error::{GmrfError, Result};
