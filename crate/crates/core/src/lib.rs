//! Performative gradient descent and its baselines: distribution maps,
//! estimators, drivers, closed-form oracles and population-limit sweeps.
#![no_std]
// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;

pub mod batch;
pub mod env;
pub mod error;
pub mod estim;
pub mod grad;
pub mod linalg;
pub mod opt;
pub mod oracle;
pub mod seed;
pub mod theory;

pub use batch::{Batch, Point};
pub use env::{BoxDomain, EnvSpec, Family, MixtureComponent, Params};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use seed::RngSeed;
