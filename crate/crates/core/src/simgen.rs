//! Synthetic panels with known effects, and missingness mechanisms.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkage::{alpha_index, alpha_years, OUT_YEAR_WEIGHTS};
use crate::mcmc::sampler::chain_rng;
use crate::mcmc::selection::{hazard_probabilities, logistic};
use crate::panel::{ScorePanel, Standardization, StudentRecord, TeacherId, YEARS};

/// Generating values for the scores model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrueParameters {
    pub mu: [f64; YEARS],
    pub alpha: [f64; OUT_YEAR_WEIGHTS],
    pub tau: [f64; YEARS],
    pub nu: f64,
    pub sigma: [f64; YEARS],
}

impl Default for TrueParameters {
    /// Values near the published MAR posterior means.
    fn default() -> Self {
        TrueParameters {
            mu: [3.39, 3.98, 4.70, 5.29, 6.00],
            alpha: [0.16, 0.15, 0.20, 0.12, 0.11, 0.14, 0.11, 0.14, 0.09, 0.34],
            tau: [0.65, 0.57, 0.55, 0.43, 0.42],
            nu: 0.71,
            sigma: [0.58, 0.47, 0.45, 0.37, 0.37],
        }
    }
}

impl TrueParameters {
    pub fn validate(&self) -> Result<()> {
        let finite = self.mu.iter().chain(&self.alpha).all(|v| v.is_finite());
        let sds = self
            .tau
            .iter()
            .chain(&self.sigma)
            .chain(std::iter::once(&self.nu));
        if !finite || sds.clone().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Config(
                "generating values must be finite with nonnegative SDs".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum Assignment {
    Random,
    /// Classes filled from students ranked by
    /// `sqrt(1 - mixing) * delta / nu + sqrt(mixing) * noise`; `mixing = 1`
    /// is random assignment.
    Sorted {
        mixing: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub students: usize,
    pub teachers_per_year: usize,
    pub truth: TrueParameters,
    pub assignment: Assignment,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            students: 2000,
            teachers_per_year: 20,
            truth: TrueParameters::default(),
            assignment: Assignment::Random,
            seed: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.students == 0 || self.teachers_per_year == 0 {
            return Err(Error::Config(
                "student and teacher counts must be positive".into(),
            ));
        }
        if let Assignment::Sorted { mixing } = self.assignment {
            if !(0.0..=1.0).contains(&mixing) {
                return Err(Error::Config(format!(
                    "mixing must lie in [0, 1], got {mixing}"
                )));
            }
        }
        self.truth.validate()
    }
}

/// Generating parameters and realized effects. `delta` follows panel order.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthRecord {
    pub parameters: TrueParameters,
    /// Observation-model coefficients, when a mechanism with named
    /// coefficients was applied.
    pub selection: Vec<(String, f64)>,
    pub teacher_ids: [Vec<String>; YEARS],
    pub theta: [Vec<f64>; YEARS],
    pub student_ids: Vec<String>,
    pub delta: Vec<f64>,
}

impl TruthRecord {
    /// `(name, value)` pairs using the fitted-parameter naming scheme.
    pub fn named_values(&self) -> Vec<(String, f64)> {
        let p = &self.parameters;
        let mut out = Vec::new();
        out.extend((0..YEARS).map(|t| (format!("mu[{}]", t + 1), p.mu[t])));
        out.extend((0..OUT_YEAR_WEIGHTS).map(|k| {
            let (t, ts) = alpha_years(k);
            (format!("alpha[{},{}]", t + 1, ts + 1), p.alpha[k])
        }));
        out.extend((0..YEARS).map(|t| (format!("tau[{}]", t + 1), p.tau[t])));
        out.push(("nu".to_string(), p.nu));
        out.extend((0..YEARS).map(|t| (format!("sigma[{}]", t + 1), p.sigma[t])));
        out.extend(self.selection.iter().cloned());
        for t in 0..YEARS {
            for (id, v) in self.teacher_ids[t].iter().zip(&self.theta[t]) {
                out.push((format!("theta[{},{}]", t + 1, id), *v));
            }
        }
        for (id, v) in self.student_ids.iter().zip(&self.delta) {
            out.push((format!("delta[{id}]"), *v));
        }
        out
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.named_values()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        write_truth(&self.named_values(), writer)
    }
}

pub fn write_truth<W: Write>(values: &[(String, f64)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["parameter", "value"])?;
    for (name, v) in values {
        w.write_record([name.as_str(), &format!("{v:?}")])?;
    }
    w.flush().map_err(|e| Error::io("<truth writer>", e))?;
    Ok(())
}

/// Reads a `parameter,value` truth file.
pub fn read_truth<R: Read>(reader: R) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() != 2 || &header[0] != "parameter" || &header[1] != "value" {
        return Err(Error::MalformedRow {
            row: 0,
            message: "truth header must be parameter,value".into(),
        });
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        if rec.len() != 2 || rec[0].is_empty() {
            return Err(Error::MalformedRow {
                row,
                message: "expected parameter,value".into(),
            });
        }
        let v: f64 = rec[1].parse().map_err(|_| Error::MalformedRow {
            row,
            message: format!("invalid value {:?}", &rec[1]),
        })?;
        out.push((rec[0].to_string(), v));
    }
    Ok(out)
}

fn normal<R: Rng + ?Sized>(rng: &mut R, sd: f64) -> f64 {
    sd * rng.sample::<f64, _>(StandardNormal)
}

/// Complete five-year panel drawn from the scores model.
pub fn simulate_panel(config: &GeneratorConfig) -> Result<(ScorePanel, TruthRecord)> {
    config.validate()?;
    let mut rng = chain_rng(config.seed, 0);
    let p = &config.truth;
    let n = config.students;
    let j = config.teachers_per_year;
    let teacher_ids: [Vec<String>; YEARS] =
        std::array::from_fn(|t| (0..j).map(|k| format!("g{}t{:03}", t + 1, k + 1)).collect());
    let theta: [Vec<f64>; YEARS] =
        std::array::from_fn(|t| (0..j).map(|_| normal(&mut rng, p.tau[t])).collect());
    let student_ids: Vec<String> = (0..n).map(|i| format!("s{:05}", i + 1)).collect();
    let delta: Vec<f64> = (0..n).map(|_| normal(&mut rng, p.nu)).collect();

    let mut class_of = vec![[0usize; YEARS]; n];
    let mut order: Vec<usize> = (0..n).collect();
    for t in 0..YEARS {
        match config.assignment {
            Assignment::Random => order.shuffle(&mut rng),
            Assignment::Sorted { mixing } => {
                let scale = if p.nu > 0.0 { 1.0 / p.nu } else { 0.0 };
                let keys: Vec<f64> = delta
                    .iter()
                    .map(|d| {
                        (1.0 - mixing).sqrt() * d * scale + mixing.sqrt() * normal(&mut rng, 1.0)
                    })
                    .collect();
                order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
            }
        }
        // contiguous blocks of near-equal size
        for (rank, &i) in order.iter().enumerate() {
            class_of[i][t] = rank * j / n;
        }
    }

    let mut students = Vec::with_capacity(n);
    for i in 0..n {
        let mut rec = StudentRecord::new(student_ids[i].clone());
        for t in 0..YEARS {
            let mut y = p.mu[t] + delta[i] + normal(&mut rng, p.sigma[t]);
            for ts in 0..=t {
                let w = if ts == t {
                    1.0
                } else {
                    p.alpha[alpha_index(t, ts)]
                };
                y += w * theta[ts][class_of[i][ts]];
            }
            rec.scores[t] = Some(y);
            rec.teacher_links[t] = Some(TeacherId(teacher_ids[t][class_of[i][t]].clone()));
        }
        students.push(rec);
    }
    let panel = ScorePanel::new(students, Standardization::DISTRICT)?;
    let truth = TruthRecord {
        parameters: p.clone(),
        selection: Vec::new(),
        teacher_ids,
        theta,
        student_ids,
        delta,
    };
    Ok((panel, truth))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum MissingnessKind {
    None,
    /// Each score deleted independently with probability `rate`.
    Mcar {
        rate: f64,
    },
    /// Number of scores from the continuation-ratio model given the true
    /// student effect; which years are observed is uniform among subsets of
    /// that size.
    SelHazard {
        a: [f64; YEARS - 1],
        beta: f64,
    },
    /// Year `t` observed with probability `logistic(a_t + beta_t * delta)`.
    Sel2 {
        a: [f64; YEARS],
        beta: [f64; YEARS],
    },
    /// Year `t` observed with probability
    /// `logistic(intercept + coefficient * Y_t)`.
    ScoreDependent {
        intercept: f64,
        coefficient: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingnessMechanism {
    #[serde(flatten)]
    pub kind: MissingnessKind,
    /// Also remove the classroom link of a deleted score.
    #[serde(default = "yes")]
    pub co_delete: bool,
}

fn yes() -> bool {
    true
}

/// Attempts per student before a mechanism is declared degenerate.
const MAX_RESAMPLES: usize = 10_000;

impl MissingnessMechanism {
    pub fn new(kind: MissingnessKind) -> Self {
        MissingnessMechanism {
            kind,
            co_delete: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let ok = match &self.kind {
            MissingnessKind::None => true,
            MissingnessKind::Mcar { rate } => (0.0..1.0).contains(rate),
            MissingnessKind::SelHazard { a, beta } => finite(a) && beta.is_finite(),
            MissingnessKind::Sel2 { a, beta } => finite(a) && finite(beta),
            MissingnessKind::ScoreDependent {
                intercept,
                coefficient,
            } => intercept.is_finite() && coefficient.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid missingness parameters: {:?}",
                self.kind
            )))
        }
    }

    /// Coefficients under fitted-parameter names.
    pub fn named_coefficients(&self) -> Vec<(String, f64)> {
        match &self.kind {
            MissingnessKind::SelHazard { a, beta } => {
                let mut v: Vec<_> = a
                    .iter()
                    .enumerate()
                    .map(|(k, x)| (format!("a[{}]", k + 1), *x))
                    .collect();
                v.push(("beta".to_string(), *beta));
                v
            }
            MissingnessKind::Sel2 { a, beta } => a
                .iter()
                .enumerate()
                .map(|(k, x)| (format!("a[{}]", k + 1), *x))
                .chain(
                    beta.iter()
                        .enumerate()
                        .map(|(k, x)| (format!("beta[{}]", k + 1), *x)),
                )
                .collect(),
            _ => Vec::new(),
        }
    }

    fn draw_flags<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        delta: f64,
        scores: &[f64; YEARS],
    ) -> [bool; YEARS] {
        let bernoulli = |rng: &mut R, p: f64| rng.random::<f64>() < p;
        match &self.kind {
            MissingnessKind::None => [true; YEARS],
            MissingnessKind::Mcar { rate } => std::array::from_fn(|_| !bernoulli(rng, *rate)),
            MissingnessKind::SelHazard { a, beta } => {
                let probs = hazard_probabilities(a, *beta, delta);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut n = YEARS;
                for (k, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        n = k + 1;
                        break;
                    }
                }
                let mut years: Vec<usize> = (0..YEARS).collect();
                years.shuffle(rng);
                let mut flags = [false; YEARS];
                for &t in &years[..n] {
                    flags[t] = true;
                }
                flags
            }
            MissingnessKind::Sel2 { a, beta } => {
                std::array::from_fn(|t| bernoulli(rng, logistic(a[t] + beta[t] * delta)))
            }
            MissingnessKind::ScoreDependent {
                intercept,
                coefficient,
            } => std::array::from_fn(|t| {
                bernoulli(rng, logistic(intercept + coefficient * scores[t]))
            }),
        }
    }
}

/// Deletes scores from a complete panel. Students whose draw removes every
/// score are redrawn. Score values are never changed.
pub fn apply_missingness(
    panel: &ScorePanel,
    truth: &TruthRecord,
    mechanism: &MissingnessMechanism,
    seed: u64,
) -> Result<ScorePanel> {
    mechanism.validate()?;
    if truth.delta.len() != panel.len() {
        return Err(Error::Consistency(
            "truth record does not match the panel".into(),
        ));
    }
    let mut rng = chain_rng(seed, 1);
    let mut students = Vec::with_capacity(panel.len());
    for (rec, &delta) in panel.students().iter().zip(&truth.delta) {
        if !rec.is_complete() {
            return Err(Error::Validation(format!(
                "student {} is not complete",
                rec.student_id
            )));
        }
        let scores = rec.scores.map(|s| s.expect("complete record"));
        let mut flags = [false; YEARS];
        for attempt in 0.. {
            if attempt == MAX_RESAMPLES {
                return Err(Error::Config(format!(
                    "missingness mechanism deletes every score of student {}",
                    rec.student_id
                )));
            }
            flags = mechanism.draw_flags(&mut rng, delta, &scores);
            if flags.iter().any(|&f| f) {
                break;
            }
        }
        let mut out = rec.clone();
        for t in 0..YEARS {
            if !flags[t] {
                out.scores[t] = None;
                if mechanism.co_delete {
                    out.teacher_links[t] = None;
                }
            }
        }
        students.push(out);
    }
    ScorePanel::new(students, panel.standardization())
}

/// Complete panel, then missingness, with the mechanism's coefficients
/// recorded in the truth.
pub fn simulate_with_missingness(
    config: &GeneratorConfig,
    mechanism: &MissingnessMechanism,
) -> Result<(ScorePanel, TruthRecord)> {
    let (complete, mut truth) = simulate_panel(config)?;
    let panel = apply_missingness(&complete, &truth, mechanism, config.seed)?;
    truth.selection = mechanism.named_coefficients();
    Ok((panel, truth))
}
