//! Closed-form teacher effects and score weights with every variance
//! component and mean held fixed.
//!
//! Marginalizing the student effect leaves each student's adjusted scores
//! `e_i` with covariance `R_i = nu^2 * 1 1^T + diag(sigma_t^2)`. The weight of
//! a score is the matching diagonal entry of `R_i^{-1}`, and the teacher
//! effects solve `(Z^T R^{-1} Z + diag(1/tau^2)) theta = Z^T R^{-1} e`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linkage::{alpha_index, classroom_rosters, Design, WeightSlot, OUT_YEAR_WEIGHTS};
use crate::mcmc::state::{Layout, ParameterState};
use crate::panel::{pattern_of, ResponsePattern, ScorePanel, YEARS};

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceProfile {
    pub nu2: f64,
    pub sigma2: [f64; YEARS],
    pub tau2: [f64; YEARS],
    pub alpha: [f64; OUT_YEAR_WEIGHTS],
}

impl VarianceProfile {
    /// Profile from standard deviations, as reported in posterior tables.
    pub fn from_sds(
        nu: f64,
        sigma: [f64; YEARS],
        tau: [f64; YEARS],
        alpha: [f64; OUT_YEAR_WEIGHTS],
    ) -> Self {
        VarianceProfile {
            nu2: nu * nu,
            sigma2: sigma.map(|s| s * s),
            tau2: tau.map(|s| s * s),
            alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(self.nu2 >= 0.0 && self.nu2.is_finite()) {
            return Err(Error::Config(format!(
                "student-effect variance must be nonnegative, got {}",
                self.nu2
            )));
        }
        if let Some(v) = self.sigma2.iter().chain(&self.tau2).find(|&&v| !ok(v)) {
            return Err(Error::Config(format!(
                "variances must be positive, got {v}"
            )));
        }
        if self.alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("out-year weights must be finite".into()));
        }
        Ok(())
    }
}

/// Diagonal of `R^{-1}` for `R = nu2 * 1 1^T + diag(sigma2)`, by
/// Sherman-Morrison.
pub fn inverse_diagonal(nu2: f64, sigma2: &[f64]) -> Vec<f64> {
    let s: f64 = sigma2.iter().map(|v| 1.0 / v).sum();
    let denom = 1.0 + nu2 * s;
    sigma2
        .iter()
        .map(|v| 1.0 / v - nu2 / (v * v) / denom)
        .collect()
}

/// Weight of each observed score of `pattern`, in year order.
pub fn leverage_weights(
    pattern: ResponsePattern,
    nu2: f64,
    sigma2: &[f64; YEARS],
) -> Result<Vec<f64>> {
    let s: Vec<f64> = pattern.years().map(|t| sigma2[t]).collect();
    if nu2 < 0.0 || s.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Invariant(
            "residual covariance is not positive definite".into(),
        ));
    }
    Ok(inverse_diagonal(nu2, &s))
}

/// Mean score weight for students with `n = 1..=5` scores: each pattern's
/// mean weight, averaged with equal weight over the patterns with `n`
/// scores.
pub fn average_weights_by_count(nu2: f64, sigma2: &[f64; YEARS]) -> Result<[f64; YEARS]> {
    let mut sums = [0.0; YEARS];
    let mut counts = [0usize; YEARS];
    for p in ResponsePattern::all() {
        let w = leverage_weights(p, nu2, sigma2)?;
        let n = w.len();
        sums[n - 1] += w.iter().sum::<f64>() / n as f64;
        counts[n - 1] += 1;
    }
    Ok(std::array::from_fn(|k| sums[k] / counts[k] as f64))
}

/// Posterior means of classroom effects, indexed `[year][teacher slot]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherEffects(pub [Vec<f64>; YEARS]);

impl TeacherEffects {
    pub fn write<W: Write>(&self, panel: &ScorePanel, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["year", "tchid", "theta"])?;
        for (t, effects) in self.0.iter().enumerate() {
            for (j, v) in effects.iter().enumerate() {
                w.write_record([
                    (t + 1).to_string(),
                    panel.teachers(t)[j].0.clone(),
                    format!("{v:.6}"),
                ])?;
            }
        }
        w.flush()
            .map_err(|e| Error::io("<teacher effects writer>", e))?;
        Ok(())
    }
}

struct Fixed<'a> {
    mean: &'a dyn Fn(usize) -> f64,
    sigma2: &'a dyn Fn(usize) -> f64,
    nu2: &'a dyn Fn(usize) -> f64,
    tau2: [f64; YEARS],
    alpha: [f64; OUT_YEAR_WEIGHTS],
}

fn solve(design: &Design, fixed: &Fixed<'_>) -> Result<TeacherEffects> {
    let per_year = design.teachers_per_year();
    let mut offsets = [0usize; YEARS];
    for t in 1..YEARS {
        offsets[t] = offsets[t - 1] + per_year[t - 1];
    }
    let n = design.total_teachers();
    let mut p = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for t in 0..YEARS {
        for j in 0..per_year[t] {
            p[(offsets[t] + j, offsets[t] + j)] = 1.0 / fixed.tau2[t];
        }
    }
    let coef = |slot: WeightSlot| match slot {
        WeightSlot::Unit => 1.0,
        WeightSlot::OutYear { year, prior_year } => fixed.alpha[alpha_index(year, prior_year)],
    };
    for (i, range) in design.student_rows().iter().enumerate() {
        if range.is_empty() {
            continue;
        }
        let rows: Vec<usize> = range.clone().collect();
        let s2: Vec<f64> = rows.iter().map(|&o| (fixed.sigma2)(o)).collect();
        let e: Vec<f64> = rows
            .iter()
            .map(|&o| design.rows()[o].score - (fixed.mean)(o))
            .collect();
        let nu2 = (fixed.nu2)(i);
        // R^{-1} = D^{-1} - c u u^T with u = D^{-1} 1.
        let u: Vec<f64> = s2.iter().map(|v| 1.0 / v).collect();
        let c = nu2 / (1.0 + nu2 * u.iter().sum::<f64>());
        let ue: f64 = u.iter().zip(&e).map(|(a, b)| a * b).sum();
        let rinv_e: Vec<f64> = (0..rows.len())
            .map(|k| u[k] * e[k] - c * u[k] * ue)
            .collect();
        // Z_i as (row, global teacher, coefficient) triples.
        let mut z: Vec<(usize, usize, f64)> = Vec::new();
        for (k, &o) in rows.iter().enumerate() {
            for &(idx, slot) in &design.rows()[o].contributions {
                z.push((k, offsets[idx.year] + idx.teacher_slot, coef(slot)));
            }
        }
        for &(k, g, v) in &z {
            b[g] += v * rinv_e[k];
        }
        for &(k1, g1, v1) in &z {
            for &(k2, g2, v2) in &z {
                let r = if k1 == k2 { u[k1] } else { 0.0 } - c * u[k1] * u[k2];
                p[(g1, g2)] += v1 * v2 * r;
            }
        }
    }
    let sol = if n == 0 {
        DVector::zeros(0)
    } else {
        p.cholesky()
            .ok_or_else(|| {
                Error::Invariant("teacher normal equations are not positive definite".into())
            })?
            .solve(&b)
    };
    Ok(TeacherEffects(std::array::from_fn(|t| {
        (0..per_year[t]).map(|j| sol[offsets[t] + j]).collect()
    })))
}

/// Teacher effects under one set of annual means and variances.
pub fn gls_teacher_effects(
    design: &Design,
    profile: &VarianceProfile,
    means: &[f64; YEARS],
) -> Result<TeacherEffects> {
    profile.validate()?;
    let rows = design.rows();
    solve(
        design,
        &Fixed {
            mean: &|o| means[rows[o].year],
            sigma2: &|o| profile.sigma2[rows[o].year],
            nu2: &|_| profile.nu2,
            tau2: profile.tau2,
            alpha: profile.alpha,
        },
    )
}

/// Teacher effects under an arbitrary layout (including the pattern
/// mixture), taking means and variances from `state`.
pub fn gls_teacher_effects_layout(
    design: &Design,
    layout: &Layout,
    state: &ParameterState,
) -> Result<TeacherEffects> {
    if state.tau.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Config("teacher SDs must be positive".into()));
    }
    solve(
        design,
        &Fixed {
            mean: &|o| state.mu[layout.row_mean_slot[o]],
            sigma2: &|o| state.sigma[layout.row_sigma_slot[o]].powi(2),
            nu2: &|i| layout.student_nu_slot[i].map_or(0.0, |k| state.nu[k].powi(2)),
            tau2: state.tau.map(|v| v * v),
            alpha: state.alpha,
        },
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreWeight {
    pub student: usize,
    pub year: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassroomWeight {
    pub year: usize,
    pub teacher: String,
    pub students: usize,
    /// Mean over linked students of each student's mean score weight.
    pub mean_weight: f64,
    pub complete_proportion: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightReport {
    pub scores: Vec<ScoreWeight>,
    pub student_mean: Vec<f64>,
    pub classrooms: Vec<ClassroomWeight>,
}

pub fn weight_report(panel: &ScorePanel, nu2: f64, sigma2: &[f64; YEARS]) -> Result<WeightReport> {
    let mut scores = Vec::with_capacity(panel.observed_count());
    let mut student_mean = Vec::with_capacity(panel.len());
    for (i, s) in panel.students().iter().enumerate() {
        let p = pattern_of(s);
        let w = leverage_weights(p, nu2, sigma2)?;
        student_mean.push(w.iter().sum::<f64>() / w.len() as f64);
        for (t, v) in p.years().zip(w) {
            scores.push(ScoreWeight {
                student: i,
                year: t,
                weight: v,
            });
        }
    }
    let classrooms = classroom_rosters(panel)
        .into_iter()
        .map(|r| ClassroomWeight {
            year: r.year,
            teacher: r.teacher.0.clone(),
            students: r.students.len(),
            mean_weight: if r.students.is_empty() {
                0.0
            } else {
                r.students.iter().map(|&i| student_mean[i]).sum::<f64>() / r.students.len() as f64
            },
            complete_proportion: r.complete_proportion(),
        })
        .collect();
    Ok(WeightReport {
        scores,
        student_mean,
        classrooms,
    })
}

impl WeightReport {
    pub fn write_scores<W: Write>(&self, panel: &ScorePanel, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["stuid", "grade", "n_observed", "weight"])?;
        for s in &self.scores {
            let rec = &panel.students()[s.student];
            w.write_record([
                rec.student_id.clone(),
                (s.year + 1).to_string(),
                rec.n_observed().to_string(),
                format!("{:.6}", s.weight),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<weights writer>", e))?;
        Ok(())
    }

    pub fn write_classrooms<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "grade",
            "tchid",
            "students",
            "mean_weight",
            "complete_proportion",
        ])?;
        for c in &self.classrooms {
            w.write_record([
                (c.year + 1).to_string(),
                c.teacher.clone(),
                c.students.to_string(),
                format!("{:.6}", c.mean_weight),
                format!("{:.6}", c.complete_proportion),
            ])?;
        }
        w.flush()
            .map_err(|e| Error::io("<classroom weights writer>", e))?;
        Ok(())
    }
}

pub fn write_average_weights<W: Write>(averages: &[f64; YEARS], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["n_observed", "mean_weight"])?;
    for (k, v) in averages.iter().enumerate() {
        w.write_record([(k + 1).to_string(), format!("{v:.6}")])?;
    }
    w.flush()
        .map_err(|e| Error::io("<average weights writer>", e))?;
    Ok(())
}
