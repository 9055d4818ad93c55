//! Parameter layout and state.
//!
//! The layout maps each observed score to its mean slot and residual slot,
//! and each student to its student-effect slot. MAR and the selection
//! models use one slot per year (one student-effect slot); the pattern
//! mixture model uses one slot per (group, observed year) and one
//! student-effect slot per group with student effects.

use crate::error::{Error, Result};
use crate::linkage::{alpha_years, Design, OUT_YEAR_WEIGHTS};
use crate::mcmc::selection::{Observation, SelectionParams};
use crate::model::{ModelKind, ModelSpec, SelectionFamily};
use crate::panel::{pattern_of, PatternGrouping, ScorePanel, YEARS};

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub kind: ModelKind,
    pub mean_names: Vec<String>,
    pub sigma_names: Vec<String>,
    pub nu_names: Vec<String>,
    /// Per design row.
    pub row_mean_slot: Vec<usize>,
    /// Per design row.
    pub row_sigma_slot: Vec<usize>,
    /// Per student; `None` when the student has no separate effect.
    pub student_nu_slot: Vec<Option<usize>>,
    /// PMIX group label per mean slot (empty otherwise).
    pub mean_group: Vec<Option<String>>,
    pub mean_year: Vec<usize>,
    pub selection: Option<(SelectionFamily, bool)>,
    pub observations: Vec<Observation>,
    pub teacher_names: [Vec<String>; YEARS],
    pub student_names: Vec<String>,
}

impl Layout {
    pub fn new(
        spec: &ModelSpec,
        panel: &ScorePanel,
        design: &Design,
        grouping: Option<&PatternGrouping>,
    ) -> Result<Self> {
        let rows = design.rows();
        let mut layout = Layout {
            kind: spec.kind,
            mean_names: Vec::new(),
            sigma_names: Vec::new(),
            nu_names: Vec::new(),
            row_mean_slot: Vec::with_capacity(rows.len()),
            row_sigma_slot: Vec::with_capacity(rows.len()),
            student_nu_slot: Vec::with_capacity(panel.len()),
            mean_group: Vec::new(),
            mean_year: Vec::new(),
            selection: spec.selection(),
            observations: panel
                .students()
                .iter()
                .map(|s| Observation::from_flags(s.response_flags()))
                .collect(),
            teacher_names: std::array::from_fn(|t| {
                panel.teachers(t).iter().map(|id| id.0.clone()).collect()
            }),
            student_names: panel
                .students()
                .iter()
                .map(|s| s.student_id.clone())
                .collect(),
        };
        if spec.kind == ModelKind::Pmix {
            let grouping = grouping.ok_or_else(|| {
                Error::Config("the pattern mixture model needs a pattern grouping".into())
            })?;
            let mut slot_of = vec![[usize::MAX; YEARS]; grouping.groups().len()];
            let mut nu_of = vec![None; grouping.groups().len()];
            for (g, group) in grouping.groups().iter().enumerate() {
                if group.students == 0 {
                    continue;
                }
                for t in group.years() {
                    slot_of[g][t] = layout.mean_names.len();
                    layout
                        .mean_names
                        .push(format!("mu[{},{}]", group.label, t + 1));
                    layout
                        .sigma_names
                        .push(format!("sigma[{},{}]", group.label, t + 1));
                    layout.mean_group.push(Some(group.label.clone()));
                    layout.mean_year.push(t);
                }
                if group.has_student_effects() {
                    nu_of[g] = Some(layout.nu_names.len());
                    layout.nu_names.push(format!("nu[{}]", group.label));
                }
            }
            let student_group: Vec<usize> = panel
                .students()
                .iter()
                .map(|s| grouping.group_of(pattern_of(s)))
                .collect();
            for row in rows {
                let slot = slot_of[student_group[row.student]][row.year];
                if slot == usize::MAX {
                    return Err(Error::Consistency(format!(
                        "grouping does not match the panel (student {})",
                        layout.student_names[row.student]
                    )));
                }
                layout.row_mean_slot.push(slot);
                layout.row_sigma_slot.push(slot);
            }
            layout.student_nu_slot = student_group.iter().map(|&g| nu_of[g]).collect();
        } else {
            for t in 0..YEARS {
                layout.mean_names.push(format!("mu[{}]", t + 1));
                layout.sigma_names.push(format!("sigma[{}]", t + 1));
                layout.mean_group.push(None);
                layout.mean_year.push(t);
            }
            layout.nu_names.push("nu".to_string());
            for row in rows {
                layout.row_mean_slot.push(row.year);
                layout.row_sigma_slot.push(row.year);
            }
            layout.student_nu_slot = vec![Some(0); panel.len()];
        }
        Ok(layout)
    }

    pub fn mean_slots(&self) -> usize {
        self.mean_names.len()
    }

    pub fn sigma_slots(&self) -> usize {
        self.sigma_names.len()
    }

    pub fn nu_slots(&self) -> usize {
        self.nu_names.len()
    }

    fn selection_names(&self) -> Vec<String> {
        let Some((family, sampled_slopes)) = self.selection else {
            return Vec::new();
        };
        let mut names: Vec<String> = (1..=family.intercepts())
            .map(|k| format!("a[{k}]"))
            .collect();
        if sampled_slopes {
            match family {
                SelectionFamily::Count => names.push("beta".to_string()),
                SelectionFamily::Yearly => names.extend((1..=YEARS).map(|t| format!("beta[{t}]"))),
            }
        }
        names
    }

    /// Names of every stored parameter, in flattening order: means,
    /// out-year weights, teacher SDs, student SDs, residual SDs, selection
    /// coefficients, teacher effects, student effects.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = self.mean_names.clone();
        names.extend((0..OUT_YEAR_WEIGHTS).map(|k| {
            let (t, ts) = alpha_years(k);
            format!("alpha[{},{}]", t + 1, ts + 1)
        }));
        names.extend((1..=YEARS).map(|t| format!("tau[{t}]")));
        names.extend(self.nu_names.iter().cloned());
        names.extend(self.sigma_names.iter().cloned());
        names.extend(self.selection_names());
        for t in 0..YEARS {
            names.extend(
                self.teacher_names[t]
                    .iter()
                    .map(|id| format!("theta[{},{}]", t + 1, id)),
            );
        }
        names.extend(self.student_names.iter().map(|id| format!("delta[{id}]")));
        names
    }

    pub fn parameter_count(&self) -> usize {
        let sel = self.selection_names().len();
        self.mean_slots()
            + OUT_YEAR_WEIGHTS
            + YEARS
            + self.nu_slots()
            + self.sigma_slots()
            + sel
            + self.teacher_names.iter().map(Vec::len).sum::<usize>()
            + self.student_names.len()
    }
}

/// One full set of model unknowns.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterState {
    pub mu: Vec<f64>,
    /// Packed `alpha[t, t*]`, `t* < t`; the current-year weight is always 1.
    pub alpha: [f64; OUT_YEAR_WEIGHTS],
    pub theta: [Vec<f64>; YEARS],
    pub delta: Vec<f64>,
    pub tau: [f64; YEARS],
    pub nu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub selection: Option<SelectionParams>,
}

impl ParameterState {
    /// Fixed starting rule: means at the observed slot averages, effects and
    /// coefficients at zero, SDs at the midpoint of their prior support.
    pub fn initial(layout: &Layout, design: &Design, spec: &ModelSpec) -> Self {
        let mut sums = vec![0.0; layout.mean_slots()];
        let mut counts = vec![0usize; layout.mean_slots()];
        for (row, &slot) in design.rows().iter().zip(&layout.row_mean_slot) {
            sums[slot] += row.score;
            counts[slot] += 1;
        }
        let mut mu: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
            .collect();
        let p = &spec.prior;
        let mut state = ParameterState {
            mu: Vec::new(),
            alpha: [0.0; OUT_YEAR_WEIGHTS],
            theta: std::array::from_fn(|t| vec![0.0; layout.teacher_names[t].len()]),
            delta: vec![0.0; layout.student_names.len()],
            tau: [p.tau_upper / 2.0; YEARS],
            nu: vec![p.nu_upper / 2.0; layout.nu_slots()],
            sigma: vec![p.sigma_upper / 2.0; layout.sigma_slots()],
            selection: layout.selection.map(|(f, _)| SelectionParams::zeros(f)),
        };
        let f = &spec.fixed;
        if let Some(v) = &f.mu {
            mu = v.clone();
        }
        state.mu = mu;
        if let Some(v) = f.alpha {
            state.alpha = v;
        }
        if let Some(v) = f.tau {
            state.tau = v;
        }
        if let Some(v) = &f.nu {
            state.nu = v.clone();
        }
        if let Some(v) = &f.sigma {
            state.sigma = v.clone();
        }
        state
    }

    pub fn alpha(&self, year: usize, effect_year: usize) -> f64 {
        if year == effect_year {
            1.0
        } else {
            self.alpha[crate::linkage::alpha_index(year, effect_year)]
        }
    }

    /// Values in [`Layout::parameter_names`] order.
    pub fn flatten(&self, layout: &Layout) -> Vec<f64> {
        let mut out = Vec::with_capacity(layout.parameter_count());
        self.flatten_into(layout, &mut out);
        out
    }

    pub fn flatten_into(&self, layout: &Layout, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.mu);
        out.extend_from_slice(&self.alpha);
        out.extend_from_slice(&self.tau);
        out.extend_from_slice(&self.nu);
        out.extend_from_slice(&self.sigma);
        if let (Some(sel), Some((_, sampled))) = (&self.selection, layout.selection) {
            out.extend_from_slice(&sel.intercepts);
            if sampled {
                out.extend_from_slice(&sel.slopes);
            }
        }
        for t in 0..YEARS {
            out.extend_from_slice(&self.theta[t]);
        }
        out.extend_from_slice(&self.delta);
    }

    /// Inverse of [`flatten`](Self::flatten). Pinned slopes come back as zero.
    pub fn unflatten(layout: &Layout, values: &[f64]) -> Result<Self> {
        if values.len() != layout.parameter_count() {
            return Err(Error::Invariant(format!(
                "expected {} parameter values, got {}",
                layout.parameter_count(),
                values.len()
            )));
        }
        let mut rest = values;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        let mu = take(layout.mean_slots());
        let alpha = take(OUT_YEAR_WEIGHTS).try_into().unwrap();
        let tau = take(YEARS).try_into().unwrap();
        let nu = take(layout.nu_slots());
        let sigma = take(layout.sigma_slots());
        let selection = layout.selection.map(|(family, sampled)| {
            let intercepts = take(family.intercepts());
            let slopes = if sampled {
                take(family.slopes())
            } else {
                vec![0.0; family.slopes()]
            };
            SelectionParams {
                family,
                intercepts,
                slopes,
            }
        });
        let theta = std::array::from_fn(|t| take(layout.teacher_names[t].len()));
        let delta = take(layout.student_names.len());
        Ok(ParameterState {
            mu,
            alpha,
            theta,
            delta,
            tau,
            nu,
            sigma,
            selection,
        })
    }
}
