//! Model families, priors and sampler settings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkage::OUT_YEAR_WEIGHTS;
use crate::panel::YEARS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Scores missing at random.
    Mar,
    /// Number of observed scores depends on the student effect.
    Sel,
    /// Each year's observation indicator depends on the student effect.
    Sel2,
    /// Means and variances stratified by response pattern group.
    Pmix,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mar => "MAR",
            ModelKind::Sel => "SEL",
            ModelKind::Sel2 => "SEL2",
            ModelKind::Pmix => "PMIX",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mar" => Ok(ModelKind::Mar),
            "sel" => Ok(ModelKind::Sel),
            "sel2" => Ok(ModelKind::Sel2),
            "pmix" => Ok(ModelKind::Pmix),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }

    /// Family of the observation model attached to the scores, if any.
    pub fn selection_family(self) -> Option<SelectionFamily> {
        match self {
            ModelKind::Sel => Some(SelectionFamily::Count),
            ModelKind::Sel2 => Some(SelectionFamily::Yearly),
            ModelKind::Mar | ModelKind::Pmix => None,
        }
    }
}

/// Observation model for the missingness indicators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionFamily {
    /// Ordinal model for the number of observed scores `n_i`.
    Count,
    /// Independent logistic model per year for `r_it`.
    Yearly,
}

impl SelectionFamily {
    pub fn intercepts(self) -> usize {
        match self {
            SelectionFamily::Count => YEARS - 1,
            SelectionFamily::Yearly => YEARS,
        }
    }

    pub fn slopes(self) -> usize {
        match self {
            SelectionFamily::Count => 1,
            SelectionFamily::Yearly => YEARS,
        }
    }
}

/// How `a_k + beta * delta` maps to probabilities for the count model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionParameterization {
    /// Continuation ratio: `logistic(a_k + beta*delta)` is `Pr(n = k | n >= k)`.
    #[default]
    Hazard,
    /// `logistic(a_k + beta*delta)` is `Pr(n <= k)` directly; invalid
    /// (non-monotone) states have zero likelihood.
    Cumulative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSpec {
    /// Prior SD of the means and out-year weights.
    pub mean_sd: f64,
    pub tau_upper: f64,
    pub nu_upper: f64,
    pub sigma_upper: f64,
    /// Prior variance of count-model coefficients.
    pub sel_coef_var: f64,
    /// Prior variance of yearly-model coefficients.
    pub sel2_coef_var: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            mean_sd: 1e3,
            tau_upper: 0.7,
            nu_upper: 2.0,
            sigma_upper: 1.0,
            sel_coef_var: 100.0,
            sel2_coef_var: 10.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("mean_sd", self.mean_sd),
            ("tau_upper", self.tau_upper),
            ("nu_upper", self.nu_upper),
            ("sigma_upper", self.sigma_upper),
            ("sel_coef_var", self.sel_coef_var),
            ("sel2_coef_var", self.sel2_coef_var),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "prior {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn coef_var(&self, family: SelectionFamily) -> f64 {
        match family {
            SelectionFamily::Count => self.sel_coef_var,
            SelectionFamily::Yearly => self.sel2_coef_var,
        }
    }
}

/// Components held at given values instead of being sampled.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedComponents {
    /// One value per mean slot.
    pub mu: Option<Vec<f64>>,
    pub alpha: Option<[f64; OUT_YEAR_WEIGHTS]>,
    pub tau: Option<[f64; YEARS]>,
    /// One value per student-effect slot.
    pub nu: Option<Vec<f64>>,
    /// One value per residual slot.
    pub sigma: Option<Vec<f64>>,
    /// Pin every selection slope at zero.
    pub zero_slopes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSettings {
    pub chains: usize,
    pub burn_in: usize,
    pub retained: usize,
    pub thin: usize,
    /// Burn-in batch length between random-walk step-size adjustments.
    pub adapt_interval: usize,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings {
            chains: 3,
            burn_in: 5000,
            retained: 5000,
            thin: 1,
            adapt_interval: 50,
        }
    }
}

impl SamplerSettings {
    pub fn stored_draws(&self) -> usize {
        self.retained / self.thin
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::Config("chain count must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.retained < self.thin {
            return Err(Error::Config(
                "retained iterations must be at least thin".into(),
            ));
        }
        if self.adapt_interval == 0 {
            return Err(Error::Config("adapt_interval must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub parameterization: SelectionParameterization,
    /// Observation model carried along by MAR and PMIX fits with all slopes
    /// pinned at zero, so their likelihood covers the same data as a
    /// selection model's. `None` models the scores only.
    #[serde(with = "companion_serde")]
    pub companion: Option<SelectionFamily>,
    pub prior: PriorSpec,
    pub fixed: FixedComponents,
    pub sampler: SamplerSettings,
    /// Minimum students for a response pattern to get its own PMIX group.
    pub pattern_threshold: usize,
}

// Spelled out as "none" so a written config reads back unchanged.
mod companion_serde {
    use super::SelectionFamily;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(rename_all = "lowercase")]
    enum Companion {
        None,
        Count,
        Yearly,
    }

    pub fn serialize<S: Serializer>(v: &Option<SelectionFamily>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => Companion::None,
            Some(SelectionFamily::Count) => Companion::Count,
            Some(SelectionFamily::Yearly) => Companion::Yearly,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Option<SelectionFamily>, D::Error> {
        Ok(match Companion::deserialize(d)? {
            Companion::None => None,
            Companion::Count => Some(SelectionFamily::Count),
            Companion::Yearly => Some(SelectionFamily::Yearly),
        })
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::Mar,
            parameterization: SelectionParameterization::Hazard,
            companion: Some(SelectionFamily::Count),
            prior: PriorSpec::default(),
            fixed: FixedComponents::default(),
            sampler: SamplerSettings::default(),
            pattern_threshold: 25,
        }
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec {
            kind,
            ..Default::default()
        }
    }

    /// Family of the observation model in the likelihood, and whether its
    /// slopes are sampled.
    pub fn selection(&self) -> Option<(SelectionFamily, bool)> {
        match self.kind.selection_family() {
            Some(f) => Some((f, !self.fixed.zero_slopes)),
            None => self.companion.map(|f| (f, false)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        self.sampler.validate()?;
        let p = &self.prior;
        if let Some(tau) = &self.fixed.tau {
            if tau.iter().any(|&v| !(v > 0.0 && v < p.tau_upper)) {
                return Err(Error::Config(format!(
                    "fixed tau must lie in (0, {})",
                    p.tau_upper
                )));
            }
        }
        if let Some(nu) = &self.fixed.nu {
            if nu.iter().any(|&v| !(v > 0.0 && v < p.nu_upper)) {
                return Err(Error::Config(format!(
                    "fixed nu must lie in (0, {})",
                    p.nu_upper
                )));
            }
        }
        if let Some(sigma) = &self.fixed.sigma {
            if sigma.iter().any(|&v| !(v > 0.0 && v < p.sigma_upper)) {
                return Err(Error::Config(format!(
                    "fixed sigma must lie in (0, {})",
                    p.sigma_upper
                )));
            }
        }
        Ok(())
    }
}
