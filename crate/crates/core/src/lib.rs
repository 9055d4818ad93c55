//! Teacher value-added estimation from incomplete longitudinal score
//! panels, under ignorable and nonignorable missingness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod compare;
pub mod diagnostics;
pub mod error;
pub mod gls;
pub mod linkage;
pub mod mcmc;
pub mod model;
pub mod panel;
pub mod simgen;

pub use error::{Error, Result};
