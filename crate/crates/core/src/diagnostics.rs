//! Convergence and model-comparison statistics.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linkage::Design;
use crate::mcmc::archive::ChainArchive;
use crate::mcmc::loglik::conditional_loglik;
use crate::mcmc::state::{Layout, ParameterState};
use crate::model::{ModelKind, ModelSpec};
use crate::panel::{PatternGrouping, ScorePanel};

/// Default convergence threshold for the potential scale reduction factor.
pub const RHAT_THRESHOLD: f64 = 1.05;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Classical (non-split) potential scale reduction factor. `Ok(None)` when
/// the within-chain variance is zero.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<Option<f64>> {
    if chains.len() < 2 {
        return Err(Error::Diagnostic("needs at least 2 chains".into()));
    }
    let n = chains[0].len();
    if n < 2 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::Diagnostic(
            "chains must share a length of at least 2".into(),
        ));
    }
    let w = mean(
        &chains
            .iter()
            .map(|c| sample_variance(c))
            .collect::<Vec<_>>(),
    );
    if !(w > 0.0) {
        return Ok(None);
    }
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b = n as f64 * sample_variance(&chain_means);
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Ok(Some((var_plus / w).sqrt()))
}

/// PSRF on chains split into halves (odd trailing draws dropped).
pub fn gelman_rubin_split(chains: &[Vec<f64>]) -> Result<Option<f64>> {
    let half = chains.first().map_or(0, |c| c.len() / 2);
    let split: Vec<Vec<f64>> = chains
        .iter()
        .flat_map(|c| [c[..half].to_vec(), c[half..2 * half].to_vec()])
        .collect();
    gelman_rubin(&split)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RhatRow {
    pub parameter: String,
    pub rhat: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConvergenceStatus {
    Available(Vec<RhatRow>),
    Unavailable(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub threshold: f64,
    pub split: bool,
    pub status: ConvergenceStatus,
}

impl ConvergenceReport {
    /// Rows at or above the threshold, or with undefined R-hat.
    pub fn failures(&self) -> Vec<&RhatRow> {
        match &self.status {
            ConvergenceStatus::Available(rows) => rows
                .iter()
                .filter(|r| r.rhat.is_none_or(|v| !(v < self.threshold)))
                .collect(),
            ConvergenceStatus::Unavailable(_) => Vec::new(),
        }
    }

    /// True when diagnostics were computed and every parameter passes.
    pub fn passed(&self) -> bool {
        matches!(self.status, ConvergenceStatus::Available(_)) && self.failures().is_empty()
    }

    pub fn max_rhat(&self) -> Option<f64> {
        match &self.status {
            ConvergenceStatus::Available(rows) => {
                rows.iter().filter_map(|r| r.rhat).reduce(f64::max)
            }
            ConvergenceStatus::Unavailable(_) => None,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["parameter", "rhat", "pass"])?;
        if let ConvergenceStatus::Available(rows) = &self.status {
            for r in rows {
                let (value, pass) = match r.rhat {
                    Some(v) => (format!("{v:.6}"), v < self.threshold),
                    None => ("undefined".to_string(), false),
                };
                w.write_record([
                    r.parameter.as_str(),
                    &value,
                    if pass { "true" } else { "false" },
                ])?;
            }
        }
        w.flush()
            .map_err(|e| Error::io("<convergence writer>", e))?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        match &self.status {
            ConvergenceStatus::Unavailable(reason) => {
                format!("convergence: unavailable ({reason})\n")
            }
            ConvergenceStatus::Available(rows) => {
                let fails = self.failures();
                let mut s = format!(
                    "convergence: {} of {} parameters below {} (max R-hat {}){}\n",
                    rows.len() - fails.len(),
                    rows.len(),
                    self.threshold,
                    self.max_rhat()
                        .map_or("undefined".to_string(), |v| format!("{v:.4}")),
                    if self.split { ", split chains" } else { "" }
                );
                for f in fails.iter().take(20) {
                    let v = f
                        .rhat
                        .map_or("undefined".to_string(), |v| format!("{v:.4}"));
                    s.push_str(&format!("  FAIL {} R-hat {v}\n", f.parameter));
                }
                if fails.len() > 20 {
                    s.push_str(&format!("  ... {} more\n", fails.len() - 20));
                }
                s
            }
        }
    }
}

/// R-hat for every stored parameter.
pub fn convergence_report(
    archive: &ChainArchive,
    threshold: f64,
    split: bool,
) -> ConvergenceReport {
    let min_len = if split { 4 } else { 2 };
    let status = if archive.chains.len() < 2 {
        ConvergenceStatus::Unavailable("needs ≥ 2 chains".into())
    } else if archive.chains.iter().any(|c| c.len() < min_len) {
        ConvergenceStatus::Unavailable(format!("needs ≥ {min_len} draws per chain"))
    } else {
        let rows = (0..archive.n_params())
            .map(|k| {
                let chains = archive.param_chains(k);
                let rhat = if split {
                    gelman_rubin_split(&chains)
                } else {
                    gelman_rubin(&chains)
                };
                RhatRow {
                    parameter: archive.names[k].clone(),
                    rhat: rhat.ok().flatten(),
                }
            })
            .collect();
        ConvergenceStatus::Available(rows)
    };
    ConvergenceReport {
        threshold,
        split,
        status,
    }
}

/// One deviance information criterion and its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DicResult {
    pub dic: f64,
    /// Posterior mean log-likelihood.
    pub lbar: f64,
    /// Log-likelihood at the posterior mean of every unknown.
    pub l_at_mean: f64,
}

impl DicResult {
    pub fn from_parts(lbar: f64, l_at_mean: f64) -> Self {
        DicResult {
            dic: -4.0 * lbar + 2.0 * l_at_mean,
            lbar,
            l_at_mean,
        }
    }

    /// Effective number of parameters.
    pub fn p_d(&self) -> f64 {
        2.0 * (self.l_at_mean - self.lbar)
    }
}

/// DIC for the full likelihood (scores and observation indicators) and for
/// the scores alone, both conditional on classroom and student effects.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DicReport {
    pub joint: DicResult,
    pub scores: DicResult,
}

pub fn dic(
    archive: &ChainArchive,
    panel: &ScorePanel,
    design: &Design,
    grouping: Option<&PatternGrouping>,
) -> Result<DicReport> {
    let total = archive.total_draws();
    if total == 0 || archive.chains.iter().any(|c| c.loglik.len() != c.len()) {
        return Err(Error::Diagnostic(
            "archive has no log-likelihood trace".into(),
        ));
    }
    let layout = Layout::new(&archive.spec, panel, design, grouping)?;
    if layout.parameter_names() != archive.names {
        return Err(Error::Consistency(
            "archive parameters do not match the panel".into(),
        ));
    }
    let (mut s, mut j) = (0.0, 0.0);
    for c in &archive.chains {
        for l in &c.loglik {
            s += l.scores;
            j += l.total();
        }
    }
    let (lbar_scores, lbar_joint) = (s / total as f64, j / total as f64);
    let state = ParameterState::unflatten(&layout, &archive.posterior_means())?;
    let at_mean = conditional_loglik(&state, &layout, design, archive.spec.parameterization);
    Ok(DicReport {
        joint: DicResult::from_parts(lbar_joint, at_mean.total()),
        scores: DicResult::from_parts(lbar_scores, at_mean.scores),
    })
}

/// Refuses DIC comparisons between models that describe different data or
/// different student-effect structures.
pub fn check_dic_comparable(a: &ModelSpec, b: &ModelSpec) -> Result<()> {
    if a.kind == ModelKind::Pmix || b.kind == ModelKind::Pmix {
        return Err(Error::Comparison(format!(
            "DIC of {} is not comparable to DIC of {}: student-effect structures differ",
            a.kind.name(),
            b.kind.name()
        )));
    }
    let fa = a.selection().map(|(f, _)| f);
    let fb = b.selection().map(|(f, _)| f);
    if fa != fb {
        return Err(Error::Comparison(format!(
            "DIC of {} and {} cover different observation-indicator data",
            a.kind.name(),
            b.kind.name()
        )));
    }
    Ok(())
}

pub fn write_dic<W: Write>(report: &DicReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["focus", "dic", "lbar", "l_at_mean", "p_d"])?;
    for (name, r) in [("joint", report.joint), ("scores", report.scores)] {
        w.write_record([
            name.to_string(),
            format!("{:.4}", r.dic),
            format!("{:.4}", r.lbar),
            format!("{:.4}", r.l_at_mean),
            format!("{:.4}", r.p_d()),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<dic writer>", e))?;
    Ok(())
}
