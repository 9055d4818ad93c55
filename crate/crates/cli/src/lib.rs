//! Run configuration and subcommand bodies behind the `vamnar` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
