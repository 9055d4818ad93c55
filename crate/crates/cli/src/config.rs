//! Run configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vamnar::diagnostics::RHAT_THRESHOLD;
use vamnar::model::ModelSpec;
use vamnar::panel::YEARS;
use vamnar::simgen::{GeneratorConfig, MissingnessKind, MissingnessMechanism};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Root seed for simulation and every chain.
    pub seed: u64,
    pub panel: Option<PathBuf>,
    /// `Y` holds raw scale scores to be standardized on load.
    pub raw_scores: bool,
    /// Abort on the first malformed panel row.
    pub strict: bool,
    pub rhat_threshold: f64,
    pub split_rhat: bool,
    pub model: ModelSpec,
    pub simulate: SimulateConfig,
    pub weights: WeightsConfig,
    pub compare: CompareConfig,
    pub summarize: SummarizeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("out"),
            seed: 1,
            panel: None,
            raw_scores: false,
            strict: false,
            rhat_threshold: RHAT_THRESHOLD,
            split_rhat: false,
            model: ModelSpec::default(),
            simulate: SimulateConfig::default(),
            weights: WeightsConfig::default(),
            compare: CompareConfig::default(),
            summarize: SummarizeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub students: usize,
    pub teachers_per_year: usize,
    pub truth: vamnar::simgen::TrueParameters,
    pub assignment: vamnar::simgen::Assignment,
    pub missingness: MissingnessKind,
    /// Remove the classroom link along with a deleted score.
    pub co_delete: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        SimulateConfig {
            students: g.students,
            teachers_per_year: g.teachers_per_year,
            truth: g.truth,
            assignment: g.assignment,
            missingness: MissingnessKind::None,
            co_delete: true,
        }
    }
}

impl SimulateConfig {
    pub fn generator(&self, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            students: self.students,
            teachers_per_year: self.teachers_per_year,
            truth: self.truth.clone(),
            assignment: self.assignment,
            seed,
        }
    }

    pub fn mechanism(&self) -> MissingnessMechanism {
        MissingnessMechanism {
            kind: self.missingness.clone(),
            co_delete: self.co_delete,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsConfig {
    pub nu: Option<f64>,
    pub sigma: Option<[f64; YEARS]>,
    /// Summary file to take posterior means of `nu` and `sigma[t]` from.
    pub summary: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    /// Fit output directories; the first is the baseline.
    pub runs: Vec<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SummarizeConfig {
    pub draws: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| vamnar::Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    /// SHA-256 of the resolved configuration text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        if !(self.rhat_threshold > 1.0) {
            return Err(CliError::Config("rhat_threshold must exceed 1".into()));
        }
        self.simulate.generator(self.seed).validate()?;
        self.simulate.mechanism().validate()?;
        let w = &self.weights;
        if let Some(nu) = w.nu {
            if !(nu >= 0.0 && nu.is_finite()) {
                return Err(CliError::Config("weights.nu must be nonnegative".into()));
            }
        }
        if let Some(s) = w.sigma {
            if s.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(CliError::Config(
                    "weights.sigma entries must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("sede = 3\n").is_err());
        assert!(RunConfig::parse("[model]\nkind = \"mar\"\nchains = 2\n").is_err());
    }

    #[test]
    fn mechanism_table() {
        let c = RunConfig::parse(
            "[simulate]\nmissingness = { kind = \"sel_hazard\", a = [-1.2, -1.2, -1.2, -1.2], beta = -0.8 }\n",
        )
        .unwrap();
        assert_eq!(
            c.simulate.missingness,
            MissingnessKind::SelHazard {
                a: [-1.2; 4],
                beta: -0.8
            }
        );
        let back = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
