//! Posterior simulation.

pub mod archive;
pub mod blocks;
pub mod loglik;
pub mod sampler;
pub mod selection;
pub mod state;
pub mod variance;

pub use archive::{ChainArchive, ChainDraws, ChainStats};
pub use loglik::{conditional_loglik, LoglikParts};
pub use sampler::{fit, grouping_for, run_chain, FitInputs};
pub use selection::{Observation, SelectionParams};
pub use state::{Layout, ParameterState};
