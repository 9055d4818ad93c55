//! Observation models linking missingness to the latent student effect.

use crate::model::{SelectionFamily, SelectionParameterization};
use crate::panel::YEARS;

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionParams {
    pub family: SelectionFamily,
    /// `a_1..a_4` (count) or `a_1..a_5` (yearly).
    pub intercepts: Vec<f64>,
    /// `beta` (count) or `beta_1..beta_5` (yearly).
    pub slopes: Vec<f64>,
}

impl SelectionParams {
    pub fn zeros(family: SelectionFamily) -> Self {
        SelectionParams {
            family,
            intercepts: vec![0.0; family.intercepts()],
            slopes: vec![0.0; family.slopes()],
        }
    }

    pub fn count(a: [f64; YEARS - 1], beta: f64) -> Self {
        SelectionParams {
            family: SelectionFamily::Count,
            intercepts: a.to_vec(),
            slopes: vec![beta],
        }
    }

    pub fn yearly(a: [f64; YEARS], beta: [f64; YEARS]) -> Self {
        SelectionParams {
            family: SelectionFamily::Yearly,
            intercepts: a.to_vec(),
            slopes: beta.to_vec(),
        }
    }
}

/// What the observation model sees of a student.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    pub n_observed: usize,
    pub flags: [bool; YEARS],
}

impl Observation {
    pub fn from_flags(flags: [bool; YEARS]) -> Self {
        Observation {
            n_observed: flags.iter().filter(|&&f| f).count(),
            flags,
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log logistic(x)`.
pub fn log_logistic(x: f64) -> f64 {
    -softplus(-x)
}

/// `log(1 - logistic(x))`.
pub fn log1m_logistic(x: f64) -> f64 {
    -softplus(x)
}

/// Distribution of the number of observed scores under the continuation
/// ratio model: `Pr(n = k) = h_k * prod_{j<k} (1 - h_j)`, `h_5 = 1`.
pub fn hazard_probabilities(a: &[f64], beta: f64, delta: f64) -> [f64; YEARS] {
    let mut probs = [0.0; YEARS];
    let mut survive = 1.0;
    for k in 0..YEARS - 1 {
        let h = logistic(a[k] + beta * delta);
        probs[k] = survive * h;
        survive *= 1.0 - h;
    }
    probs[YEARS - 1] = survive;
    probs
}

/// Cell probabilities from `Pr(n <= k) = logistic(a_k + beta*delta)`.
/// Entries may be nonpositive when the intercepts are not increasing.
pub fn cumulative_probabilities(a: &[f64], beta: f64, delta: f64) -> [f64; YEARS] {
    let mut probs = [0.0; YEARS];
    let mut prev = 0.0;
    for k in 0..YEARS {
        let cdf = if k == YEARS - 1 {
            1.0
        } else {
            logistic(a[k] + beta * delta)
        };
        probs[k] = cdf - prev;
        prev = cdf;
    }
    probs
}

/// Log probability of one student's observation indicators given `delta`.
/// Returns `-inf` for invalid cumulative states.
pub fn selection_loglik(
    obs: Observation,
    delta: f64,
    params: &SelectionParams,
    parameterization: SelectionParameterization,
) -> f64 {
    match params.family {
        SelectionFamily::Count => {
            let k = obs.n_observed;
            debug_assert!((1..=YEARS).contains(&k));
            let beta = params.slopes[0];
            match parameterization {
                SelectionParameterization::Hazard => {
                    let mut ll = 0.0;
                    for j in 0..k.min(YEARS - 1) {
                        let eta = params.intercepts[j] + beta * delta;
                        ll += if j + 1 == k {
                            log_logistic(eta)
                        } else {
                            log1m_logistic(eta)
                        };
                    }
                    ll
                }
                SelectionParameterization::Cumulative => {
                    let p = cumulative_probabilities(&params.intercepts, beta, delta)[k - 1];
                    if p > 0.0 {
                        p.ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                }
            }
        }
        SelectionFamily::Yearly => (0..YEARS)
            .map(|t| {
                let eta = params.intercepts[t] + params.slopes[t] * delta;
                if obs.flags[t] {
                    log_logistic(eta)
                } else {
                    log1m_logistic(eta)
                }
            })
            .sum(),
    }
}
