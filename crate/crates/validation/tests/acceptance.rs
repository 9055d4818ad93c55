//! One line per acceptance criterion; exits nonzero when any criterion fails.
//!
//! Criterion 9 runs only when `VAMNAR_SUPPLEMENT_CSV` names the study panel
//! (set `VAMNAR_SUPPLEMENT_RAW=1` when its `Y` column holds raw scale scores).

use std::fs::File;
use std::time::Instant;

use statrs::distribution::{ContinuousCDF, Normal, Uniform};

use vamnar::compare::{
    completeness_gradient, student_effect_shift, teacher_correlations, PosteriorSummary,
    StudentShift,
};
use vamnar::diagnostics::{convergence_report, dic, DicReport, RHAT_THRESHOLD};
use vamnar::gls::{average_weights_by_count, gls_teacher_effects, VarianceProfile};
use vamnar::linkage::{build_design, classroom_rosters};
use vamnar::mcmc::{fit, ChainArchive};
use vamnar::model::{ModelKind, ModelSpec};
use vamnar::panel::{load_panel, LoadOptions, ScorePanel, Standardization, YEARS};
use vamnar::simgen::{
    simulate_panel, simulate_with_missingness, GeneratorConfig, MissingnessKind,
    MissingnessMechanism, TrueParameters, TruthRecord,
};

const PUBLISHED_WEIGHTS: [f64; YEARS] = [1.41, 2.99, 3.69, 4.08, 4.33];
const WEIGHT_TOLERANCE: f64 = 0.02;
const GLS_TOLERANCE: f64 = 0.05;
const RECOVERY_SDS: f64 = 3.0;
const RECOVERY_SHARE: f64 = 0.90;
const CORRELATION_MIN: f64 = 0.95;
const DIC_GAP: f64 = 10.0;
const REDUCTION_MCSE: f64 = 3.0;
const PRIOR_KS: f64 = 0.05;

const HAZARD_A: [f64; YEARS - 1] = [-1.2; YEARS - 1];
const HAZARD_BETA: f64 = -0.8;
const MCAR_RATE: f64 = 0.2;
const SEL2_A: [f64; YEARS] = [1.4, 1.2, 1.0, 0.8, 0.6];
const SEL2_BETA: [f64; YEARS] = [-0.6, -0.5, -0.7, -0.4, -0.6];

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: String) -> Self {
        Outcome {
            pass: Some(pass),
            detail,
        }
    }

    fn skip(detail: &str) -> Self {
        Outcome {
            pass: None,
            detail: detail.to_string(),
        }
    }
}

fn report(n: usize, title: &str, started: Instant, o: &Outcome) {
    let status = match o.pass {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "SKIP",
    };
    println!(
        "criterion {n} [{status}] {title}: {} ({:.0}s)",
        o.detail,
        started.elapsed().as_secs_f64()
    );
}

fn hyperparameter(name: &str) -> bool {
    ["mu[", "alpha[", "tau[", "nu", "sigma["]
        .iter()
        .any(|p| name.starts_with(p))
}

fn pooled(archive: &ChainArchive, name: &str) -> Vec<f64> {
    archive
        .param_chains(archive.param_index(name).expect("parameter present"))
        .concat()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn batch_mcse(x: &[f64], batches: usize) -> f64 {
    let len = x.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| mean(&x[b * len..(b + 1) * len]))
        .collect();
    let m = mean(&means);
    (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / ((batches - 1) * batches) as f64).sqrt()
}

fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let sigma2 = [0.58f64, 0.47, 0.45, 0.37, 0.37].map(|v| v * v);
    let got = average_weights_by_count(0.71 * 0.71, &sigma2).expect("valid profile");
    let worst = got
        .iter()
        .zip(PUBLISHED_WEIGHTS)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Outcome::check(
        worst <= WEIGHT_TOLERANCE,
        format!(
            "computed {:.4?} vs published {PUBLISHED_WEIGHTS:?}, max |diff| {worst:.4}",
            got
        ),
    )
}

fn criterion_2() -> Outcome {
    let truth = TrueParameters::default();
    let config = GeneratorConfig {
        students: 60,
        teachers_per_year: 2,
        seed: 5,
        ..Default::default()
    };
    let (full, _) = simulate_panel(&config).expect("simulation");
    let records = full
        .students()
        .iter()
        .map(|s| {
            let mut r = s.clone();
            for t in 2..YEARS {
                r.scores[t] = None;
                r.teacher_links[t] = None;
            }
            r
        })
        .collect();
    let panel = ScorePanel::new(records, full.standardization()).expect("panel");
    let mut spec = ModelSpec::new(ModelKind::Mar);
    spec.companion = None;
    spec.fixed.mu = Some(truth.mu.to_vec());
    spec.fixed.alpha = Some(truth.alpha);
    spec.fixed.tau = Some(truth.tau);
    spec.fixed.nu = Some(vec![truth.nu]);
    spec.fixed.sigma = Some(truth.sigma.to_vec());
    spec.sampler.burn_in = 1000;
    spec.sampler.retained = 10_000;
    let archive = fit(&spec, &panel, None, 17).expect("fit");
    let design = build_design(&panel).expect("design");
    let profile = VarianceProfile::from_sds(truth.nu, truth.sigma, truth.tau, truth.alpha);
    let gls = gls_teacher_effects(&design, &profile, &truth.mu).expect("gls");
    let mut worst = 0.0f64;
    let mut teachers = 0;
    for t in 0..2 {
        for (j, id) in panel.teachers(t).iter().enumerate() {
            let m = mean(&pooled(
                &archive,
                &format!("theta[{},{}]", t + 1, id.as_str()),
            ));
            worst = worst.max((m - gls.0[t][j]).abs());
            teachers += 1;
        }
    }
    Outcome::check(
        worst < GLS_TOLERANCE && teachers == 4,
        format!("{teachers} teachers, max |MCMC - GLS| {worst:.4} (tolerance {GLS_TOLERANCE})"),
    )
}

/// Share of truth-named parameters inside `RECOVERY_SDS` posterior SDs.
fn recovery(
    summary: &PosteriorSummary,
    truth: &TruthRecord,
    include: impl Fn(&str) -> bool,
) -> (usize, usize, Vec<String>) {
    let mut hits = 0;
    let mut total = 0;
    let mut misses = Vec::new();
    for (name, value) in truth.named_values() {
        if !include(&name) {
            continue;
        }
        let row = summary
            .get(&name)
            .expect("fitted parameter for every truth entry");
        total += 1;
        if (row.mean - value).abs() <= RECOVERY_SDS * row.sd {
            hits += 1;
        } else {
            misses.push(format!("{name} {:.3} vs {value}", row.mean));
        }
    }
    (hits, total, misses)
}

struct Fitted {
    label: &'static str,
    archive: ChainArchive,
    summary: PosteriorSummary,
}

fn run(label: &'static str, kind: ModelKind, panel: &ScorePanel, seed: u64) -> Fitted {
    let started = Instant::now();
    let archive = fit(&ModelSpec::new(kind), panel, None, seed).expect("fit");
    eprintln!(
        "  {label}: {} parameters, {:.0}s",
        archive.n_params(),
        started.elapsed().as_secs_f64()
    );
    let summary = PosteriorSummary::from_archive(&archive).expect("summary");
    Fitted {
        label,
        archive,
        summary,
    }
}

fn criterion_3() -> (Outcome, Vec<Fitted>) {
    let mcar = MissingnessMechanism::new(MissingnessKind::Mcar { rate: MCAR_RATE });
    let config = GeneratorConfig {
        seed: 31,
        ..Default::default()
    };
    let (panel, truth) = simulate_with_missingness(&config, &mcar).expect("simulation");
    let mar = run("recovery MAR", ModelKind::Mar, &panel, 3);
    let (h1, n1, m1) = recovery(&mar.summary, &truth, hyperparameter);

    let mech = MissingnessMechanism::new(MissingnessKind::Sel2 {
        a: SEL2_A,
        beta: SEL2_BETA,
    });
    let config = GeneratorConfig {
        seed: 32,
        ..Default::default()
    };
    let (panel2, truth2) = simulate_with_missingness(&config, &mech).expect("simulation");
    let sel2 = run("recovery SEL2", ModelKind::Sel2, &panel2, 3);
    let (h2, n2, m2) = recovery(&sel2.summary, &truth2, |n| {
        hyperparameter(n) || n.starts_with("a[") || n.starts_with("beta[")
    });

    let share = |h: usize, n: usize| h as f64 / n as f64;
    let pass =
        n1 == 26 && n2 == 36 && share(h1, n1) >= RECOVERY_SHARE && share(h2, n2) >= RECOVERY_SHARE;
    let misses: Vec<String> = m1.into_iter().chain(m2).collect();
    (
        Outcome::check(
            pass,
            format!(
                "MAR {h1}/{n1}, SEL2 {h2}/{n2} within {RECOVERY_SDS} SD (need {:.0}%){}",
                RECOVERY_SHARE * 100.0,
                if misses.is_empty() {
                    String::new()
                } else {
                    format!("; outside: {}", misses.join(", "))
                }
            ),
        ),
        vec![mar, sel2],
    )
}

struct MnarRun {
    panel: ScorePanel,
    mar: Fitted,
    sel: Fitted,
    shift: StudentShift,
    dic_mar: DicReport,
    dic_sel: DicReport,
}

fn mnar_run() -> MnarRun {
    let mech = MissingnessMechanism::new(MissingnessKind::SelHazard {
        a: HAZARD_A,
        beta: HAZARD_BETA,
    });
    let config = GeneratorConfig {
        seed: 21,
        ..Default::default()
    };
    let (panel, _) = simulate_with_missingness(&config, &mech).expect("simulation");
    let mar = run("MNAR panel, MAR", ModelKind::Mar, &panel, 5);
    let sel = run("MNAR panel, SEL", ModelKind::Sel, &panel, 5);
    let design = build_design(&panel).expect("design");
    let dic_mar = dic(&mar.archive, &panel, &design, None).expect("dic");
    let dic_sel = dic(&sel.archive, &panel, &design, None).expect("dic");
    let shift = student_effect_shift(&mar.summary, &sel.summary, &panel).expect("shift");
    MnarRun {
        panel,
        mar,
        sel,
        shift,
        dic_mar,
        dic_sel,
    }
}

fn criterion_4(r: &MnarRun) -> Outcome {
    let corr = teacher_correlations(&r.mar.summary, &r.sel.summary).expect("correlations");
    let gradient =
        completeness_gradient(&r.mar.summary, &r.sel.summary, &classroom_rosters(&r.panel))
            .expect("gradient");
    let min_corr = corr
        .iter()
        .map(|c| c.unwrap_or(f64::NAN))
        .fold(f64::INFINITY, f64::min);
    let slope = gradient.pooled.map_or(f64::NAN, |s| s.slope);
    let se = gradient.pooled.map_or(f64::NAN, |s| s.se);
    Outcome::check(
        min_corr >= CORRELATION_MIN && slope < 0.0,
        format!(
            "per-grade correlations {:.4?} (min {CORRELATION_MIN}), completeness slope {slope:.4} (se {se:.4})",
            corr.map(|c| c.unwrap_or(f64::NAN))
        ),
    )
}

fn criterion_5(r: &MnarRun) -> Outcome {
    let medians: Vec<(usize, f64)> = r
        .shift
        .bands
        .iter()
        .map(|b| (b.n_observed, b.median))
        .collect();
    let nondecreasing = medians.windows(2).all(|w| w[1].1 >= w[0].1);
    let at = |n: usize| {
        medians
            .iter()
            .find(|(k, _)| *k == n)
            .map_or(f64::NAN, |(_, m)| *m)
    };
    Outcome::check(
        medians.len() == YEARS && nondecreasing && at(1) < 0.0 && at(5) > 0.0,
        format!(
            "medians by n_observed {:.4?}",
            medians.iter().map(|(_, m)| *m).collect::<Vec<_>>()
        ),
    )
}

fn criterion_6(r: &MnarRun) -> Outcome {
    let identity = [r.dic_mar, r.dic_sel]
        .iter()
        .flat_map(|d| [d.joint, d.scores])
        .all(|d| d.dic == -4.0 * d.lbar + 2.0 * d.l_at_mean);
    let gap = r.dic_mar.joint.dic - r.dic_sel.joint.dic;
    Outcome::check(
        gap >= DIC_GAP && identity,
        format!(
            "DIC MAR {:.2}, SEL {:.2}, gap {gap:.2} (need {DIC_GAP}); identity exact: {identity}",
            r.dic_mar.joint.dic, r.dic_sel.joint.dic
        ),
    )
}

fn criterion_7(fits: &[&Fitted]) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for f in fits {
        let c = convergence_report(&f.archive, RHAT_THRESHOLD, false);
        pass &= c.passed() && f.archive.chains.len() == 3 && f.archive.chains[0].len() == 5000;
        parts.push(format!(
            "{} max {:.4} ({} of {} failing)",
            f.label,
            c.max_rhat().unwrap_or(f64::NAN),
            c.failures().len(),
            f.archive.n_params()
        ));
    }
    Outcome::check(pass, parts.join("; "))
}

fn criterion_8() -> Outcome {
    let mech = MissingnessMechanism::new(MissingnessKind::SelHazard {
        a: HAZARD_A,
        beta: HAZARD_BETA,
    });
    let config = GeneratorConfig {
        students: 300,
        teachers_per_year: 8,
        seed: 41,
        ..Default::default()
    };
    let (panel, _) = simulate_with_missingness(&config, &mech).expect("simulation");
    let mut mar_spec = ModelSpec::new(ModelKind::Mar);
    mar_spec.sampler.burn_in = 1000;
    mar_spec.sampler.retained = 10_000;
    let mut sel_spec = mar_spec.clone();
    sel_spec.kind = ModelKind::Sel;
    sel_spec.fixed.zero_slopes = true;
    let mar = fit(&mar_spec, &panel, None, 43).expect("fit");
    let sel = fit(&sel_spec, &panel, None, 44).expect("fit");
    let twin = fit(&sel_spec, &panel, None, 43).expect("fit");
    let identical = mar.names.iter().enumerate().all(|(k, n)| {
        twin.param_index(n)
            .is_some_and(|j| twin.param_chains(j) == mar.param_chains(k))
    });
    let names: Vec<&String> = mar
        .names
        .iter()
        .filter(|n| hyperparameter(n) || n.starts_with("a["))
        .collect();
    let mut worst = 0.0f64;
    for name in &names {
        let (a, b) = (pooled(&mar, name), pooled(&sel, name));
        let se = (batch_mcse(&a, 50).powi(2) + batch_mcse(&b, 50).powi(2)).sqrt();
        worst = worst.max((mean(&a) - mean(&b)).abs() / se);
    }

    let mut empty = ModelSpec::new(ModelKind::Sel);
    empty.sampler.chains = 1;
    empty.sampler.retained = 50_000;
    empty.sampler.thin = 10;
    let prior = fit(&empty, &ScorePanel::empty(), None, 45).expect("fit");
    let p = &empty.prior;
    let mean_prior = Normal::new(0.0, p.mean_sd).expect("valid prior");
    let coef_prior = Normal::new(0.0, p.sel_coef_var.sqrt()).expect("valid prior");
    let mut ks_worst = (0.0f64, String::new());
    for (k, name) in prior.names.iter().enumerate() {
        let draws = prior.param_chains(k).concat();
        let d = if name.starts_with("mu[") || name.starts_with("alpha[") {
            ks_distance(&draws, |x| mean_prior.cdf(x))
        } else if name.starts_with("a[") || name == "beta" {
            ks_distance(&draws, |x| coef_prior.cdf(x))
        } else {
            let upper = match &name[..2] {
                "ta" => p.tau_upper,
                "nu" => p.nu_upper,
                _ => p.sigma_upper,
            };
            let u = Uniform::new(0.0, upper).expect("valid prior");
            ks_distance(&draws, |x| u.cdf(x))
        };
        if d > ks_worst.0 {
            ks_worst = (d, name.clone());
        }
    }
    Outcome::check(
        identical && worst < REDUCTION_MCSE && ks_worst.0 < PRIOR_KS && prior.total_draws() == 5000,
        format!(
            "zero-slope SEL vs MAR: same-seed draws identical {identical}, independent seeds max |diff| {worst:.2} MCSE over {} parameters; empty-data max KS {:.4} ({}) on {} draws",
            names.len(),
            ks_worst.0,
            ks_worst.1,
            prior.total_draws()
        ),
    )
}

const TABLE1: [(&str, f64, f64, f64, f64); 31] = [
    ("mu[1]", 3.39, 0.03, 3.44, 0.03),
    ("mu[2]", 3.98, 0.03, 4.01, 0.03),
    ("mu[3]", 4.70, 0.03, 4.69, 0.02),
    ("mu[4]", 5.29, 0.02, 5.26, 0.02),
    ("mu[5]", 6.00, 0.03, 5.96, 0.03),
    ("tau[1]", 0.65, 0.03, 0.63, 0.03),
    ("tau[2]", 0.57, 0.03, 0.56, 0.03),
    ("tau[3]", 0.55, 0.03, 0.54, 0.03),
    ("tau[4]", 0.43, 0.02, 0.42, 0.02),
    ("tau[5]", 0.42, 0.02, 0.42, 0.02),
    ("alpha[2,1]", 0.16, 0.02, 0.14, 0.03),
    ("alpha[3,1]", 0.15, 0.02, 0.13, 0.03),
    ("alpha[3,2]", 0.20, 0.02, 0.19, 0.02),
    ("alpha[4,1]", 0.12, 0.02, 0.09, 0.02),
    ("alpha[4,2]", 0.11, 0.02, 0.10, 0.02),
    ("alpha[4,3]", 0.14, 0.02, 0.11, 0.02),
    ("alpha[5,1]", 0.11, 0.02, 0.08, 0.03),
    ("alpha[5,2]", 0.14, 0.02, 0.13, 0.02),
    ("alpha[5,3]", 0.09, 0.02, 0.06, 0.02),
    ("alpha[5,4]", 0.34, 0.03, 0.34, 0.03),
    ("nu", 0.71, 0.01, 0.73, 0.01),
    ("sigma[1]", 0.58, 0.01, 0.57, 0.01),
    ("sigma[2]", 0.47, 0.01, 0.47, 0.01),
    ("sigma[3]", 0.45, 0.01, 0.45, 0.01),
    ("sigma[4]", 0.37, 0.01, 0.37, 0.01),
    ("sigma[5]", 0.37, 0.01, 0.37, 0.01),
    ("a[1]", f64::NAN, f64::NAN, -1.00, 0.02),
    ("a[2]", f64::NAN, f64::NAN, 0.90, 0.02),
    ("a[3]", f64::NAN, f64::NAN, 0.71, 0.02),
    ("a[4]", f64::NAN, f64::NAN, 0.79, 0.02),
    ("beta", f64::NAN, f64::NAN, -0.83, 0.03),
];

fn criterion_9() -> Outcome {
    let Ok(path) = std::env::var("VAMNAR_SUPPLEMENT_CSV") else {
        return Outcome::skip("VAMNAR_SUPPLEMENT_CSV not set");
    };
    let raw = std::env::var("VAMNAR_SUPPLEMENT_RAW").is_ok_and(|v| v == "1");
    let options = LoadOptions {
        raw_scores: raw.then_some(Standardization::DISTRICT),
        ..Default::default()
    };
    let file = match File::open(&path) {
        Ok(f) => f,
        Err(e) => return Outcome::check(false, format!("cannot open {path}: {e}")),
    };
    let panel = match load_panel(std::io::BufReader::new(file), options) {
        Ok((p, _)) => p,
        Err(e) => return Outcome::check(false, format!("cannot load {path}: {e}")),
    };
    let mar = run("study MAR", ModelKind::Mar, &panel, 1);
    let sel = run("study SEL", ModelKind::Sel, &panel, 1);
    let mut misses = Vec::new();
    for (name, m_mean, m_sd, s_mean, s_sd) in TABLE1 {
        for (fitted, want, sd) in [(&mar, m_mean, m_sd), (&sel, s_mean, s_sd)] {
            if want.is_nan() {
                continue;
            }
            let row = fitted.summary.get(name).expect("parameter present");
            let tol = if name == "beta" {
                0.05
            } else if name.starts_with("alpha[") || name.starts_with("a[") {
                3.0 * (row.sd.powi(2) + sd.powi(2)).sqrt()
            } else {
                0.05
            };
            if (row.mean - want).abs() > tol {
                misses.push(format!("{} {name} {:.3} vs {want}", fitted.label, row.mean));
            }
        }
    }
    let corr = teacher_correlations(&mar.summary, &sel.summary).expect("correlations");
    let min_corr = corr
        .iter()
        .map(|c| c.unwrap_or(f64::NAN))
        .fold(f64::INFINITY, f64::min);
    let design = build_design(&panel).expect("design");
    let d_mar = dic(&mar.archive, &panel, &design, None)
        .expect("dic")
        .joint
        .dic;
    let d_sel = dic(&sel.archive, &panel, &design, None)
        .expect("dic")
        .joint
        .dic;
    let dic_ok = (d_mar - 40_824.0).abs() <= 50.0 && (d_sel - 40_658.0).abs() <= 50.0;
    Outcome::check(
        misses.is_empty() && min_corr >= 0.98 && dic_ok,
        format!(
            "{} Table 1 entries off; min correlation {min_corr:.4}; DIC MAR {d_mar:.1}, SEL {d_sel:.1}{}",
            misses.len(),
            if misses.is_empty() { String::new() } else { format!("; {}", misses.join(", ")) }
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut tally = |n: usize, title: &str, started: Instant, o: Outcome| {
        report(n, title, started, &o);
        if o.pass == Some(false) {
            failed += 1;
        }
    };

    let t = Instant::now();
    tally(1, "weight table", t, criterion_1());
    let t = Instant::now();
    tally(2, "GLS-MCMC equivalence", t, criterion_2());
    let t = Instant::now();
    let (outcome, recovery_fits) = criterion_3();
    tally(3, "parameter recovery", t, outcome);
    let t = Instant::now();
    let mnar = mnar_run();
    tally(4, "MNAR robustness", t, criterion_4(&mnar));
    let t = Instant::now();
    tally(5, "student-effect shift", t, criterion_5(&mnar));
    tally(6, "DIC preference", t, criterion_6(&mnar));
    let t = Instant::now();
    let monitored: Vec<&Fitted> = recovery_fits.iter().chain([&mnar.mar, &mnar.sel]).collect();
    tally(7, "convergence protocol", t, criterion_7(&monitored));
    let t = Instant::now();
    tally(8, "reduction and prior recovery", t, criterion_8());
    let t = Instant::now();
    tally(9, "study data reproduction", t, criterion_9());

    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
