//! Log-likelihood of the observed data given every unknown, including the
//! teacher and student effects.

use std::f64::consts::PI;

use crate::linkage::Design;
use crate::mcmc::selection::selection_loglik;
use crate::mcmc::state::{Layout, ParameterState};
use crate::model::SelectionParameterization;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LoglikParts {
    pub scores: f64,
    pub selection: f64,
}

impl LoglikParts {
    pub fn total(&self) -> f64 {
        self.scores + self.selection
    }
}

/// Mean of the observed score `row` under `state`, excluding the student
/// effect.
pub(crate) fn row_location(
    state: &ParameterState,
    layout: &Layout,
    design: &Design,
    row: usize,
) -> f64 {
    let r = &design.rows()[row];
    let links = &design.links()[r.student];
    let mut m = state.mu[layout.row_mean_slot[row]];
    for ts in 0..=r.year {
        if let Some(j) = links[ts] {
            m += state.alpha(r.year, ts) * state.theta[ts][j];
        }
    }
    m
}

/// Gaussian log density of every observed score plus, when the layout
/// carries an observation model, its log probability for every student.
/// Students without a separate effect (single-score pattern mixture
/// groups) are scored with their collapsed residual SD.
pub fn conditional_loglik(
    state: &ParameterState,
    layout: &Layout,
    design: &Design,
    parameterization: SelectionParameterization,
) -> LoglikParts {
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    let mut scores = 0.0;
    for (o, row) in design.rows().iter().enumerate() {
        let sd = state.sigma[layout.row_sigma_slot[o]];
        let resid = row.score - row_location(state, layout, design, o) - state.delta[row.student];
        scores += -half_log_2pi - sd.ln() - 0.5 * (resid / sd).powi(2);
    }
    let selection = match &state.selection {
        Some(params) => layout
            .observations
            .iter()
            .zip(&state.delta)
            .map(|(&obs, &d)| selection_loglik(obs, d, params, parameterization))
            .sum(),
        None => 0.0,
    };
    LoglikParts { scores, selection }
}
