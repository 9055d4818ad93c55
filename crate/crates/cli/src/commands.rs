//! Subcommand bodies. Every command computes its outputs in memory and
//! writes them only once all of them exist.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use vamnar::compare::{
    completeness_gradient, markdown_table, pattern_means_table, student_effect_shift,
    teacher_correlations, write_correlations, write_pattern_means, PosteriorSummary,
};
use vamnar::diagnostics::{
    check_dic_comparable, convergence_report, dic, write_dic, ConvergenceStatus,
};
use vamnar::gls::{average_weights_by_count, weight_report, write_average_weights};
use vamnar::linkage::{build_design, classroom_rosters};
use vamnar::mcmc::{fit, grouping_for, ChainArchive};
use vamnar::model::ModelKind;
use vamnar::panel::{
    group_patterns, load_panel, nobs_summary, write_nobs_summary, write_panel, IngestReport,
    LoadOptions, ScorePanel, Standardization, YEARS,
};
use vamnar::simgen::simulate_with_missingness;
use vamnar::Error;

use crate::config::RunConfig;
use crate::error::CliError;

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

/// Files staged for a single write at the end of a command.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn text(&mut self, name: &str, text: impl Into<String>) {
        self.files
            .push((name.to_string(), text.into().into_bytes()));
    }

    pub fn csv(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> vamnar::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.files.push((name.to_string(), buf));
        Ok(())
    }

    pub fn commit(self) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let mut written = Vec::new();
        for (name, bytes) in self.files {
            let path = self.dir.join(name);
            let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn load(cfg: &RunConfig, path: Option<&Path>) -> Result<(ScorePanel, IngestReport), CliError> {
    let path = path.or(cfg.panel.as_deref()).ok_or_else(|| {
        CliError::Config("no panel file given (set `panel` or pass --panel)".into())
    })?;
    let options = LoadOptions {
        strict: cfg.strict,
        raw_scores: cfg.raw_scores.then_some(Standardization::DISTRICT),
    };
    Ok(load_panel(open(path)?, options)?)
}

fn manifest_header(cfg: &RunConfig, command: &str) -> String {
    format!(
        "command={command}\nversion={}\nconfig_sha256={}\n",
        env!("CARGO_PKG_VERSION"),
        cfg.hash()
    )
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let generator = cfg.simulate.generator(cfg.seed);
    let mechanism = cfg.simulate.mechanism();
    let (panel, truth) = simulate_with_missingness(&generator, &mechanism)?;
    let mut out = Outputs::new(&cfg.output_dir);
    out.csv("panel.csv", |w| write_panel(&panel, w))?;
    out.csv("truth.csv", |w| truth.write(w))?;
    let mut counts = [0usize; YEARS];
    for s in panel.students() {
        counts[s.n_observed() - 1] += 1;
    }
    let mut manifest = manifest_header(cfg, "simulate");
    manifest.push_str(&format!(
        "students={}\nobserved_scores={}\n",
        panel.len(),
        panel.observed_count()
    ));
    for (k, c) in counts.iter().enumerate() {
        manifest.push_str(&format!("n_observed.{}={c}\n", k + 1));
    }
    out.text("manifest.txt", manifest);
    out.text(RESOLVED_CONFIG, cfg.to_toml());
    out.commit()?;
    println!(
        "simulated {} students ({} observed scores) into {}",
        panel.len(),
        panel.observed_count(),
        cfg.output_dir.display()
    );
    Ok(())
}

pub fn fit_command(cfg: &RunConfig) -> Result<(), CliError> {
    let (panel, report) = load(cfg, None)?;
    let spec = &cfg.model;
    let grouping = grouping_for(spec, &panel);
    let archive = fit(spec, &panel, grouping.as_ref(), cfg.seed)?;
    let design = build_design(&panel)?;
    let summary = PosteriorSummary::from_archive(&archive)?;
    let conv = convergence_report(&archive, cfg.rhat_threshold, cfg.split_rhat);
    let dic_report = dic(&archive, &panel, &design, grouping.as_ref())?;

    let mut out = Outputs::new(&cfg.output_dir);
    out.csv("draws.csv", |w| archive.write_draws(w))?;
    out.csv("summary.csv", |w| summary.write(w))?;
    out.csv("convergence.csv", |w| conv.write_csv(w))?;
    out.csv("dic.csv", |w| write_dic(&dic_report, w))?;
    if let Some(g) = &grouping {
        out.csv("pattern_groups.csv", |w| g.write(&panel, w))?;
    }
    let mut manifest = manifest_header(cfg, "fit");
    manifest.push_str(&archive.manifest());
    out.text("manifest.txt", manifest);
    out.text("ingest_report.txt", report.to_text());
    out.text("convergence.txt", conv.summary());
    out.text(RESOLVED_CONFIG, cfg.to_toml());
    out.commit()?;

    print!("{}", conv.summary());
    println!(
        "DIC {:.2} (mean log-likelihood {:.2}, at posterior mean {:.2}, pD {:.2})",
        dic_report.joint.dic,
        dic_report.joint.lbar,
        dic_report.joint.l_at_mean,
        dic_report.joint.p_d()
    );
    match conv.status {
        ConvergenceStatus::Available(_) if !conv.passed() => Err(CliError::Convergence(format!(
            "{} parameters at or above R-hat {}",
            conv.failures().len(),
            cfg.rhat_threshold
        ))),
        _ => Ok(()),
    }
}

pub fn weights(cfg: &RunConfig) -> Result<(), CliError> {
    let w = &cfg.weights;
    let (nu, sigma) = match (&w.summary, w.nu, w.sigma) {
        (Some(path), None, None) => {
            let s = PosteriorSummary::read(open(path)?)?;
            let sigma: Vec<f64> = (1..=YEARS)
                .map(|t| s.mean_of(&format!("sigma[{t}]")))
                .collect::<vamnar::Result<_>>()?;
            (s.mean_of("nu")?, sigma.try_into().expect("five years"))
        }
        (None, Some(nu), Some(sigma)) => (nu, sigma),
        _ => {
            return Err(CliError::Config(
                "weights need either a summary file or both nu and sigma".into(),
            ))
        }
    };
    if !(nu >= 0.0) || sigma.iter().any(|&v| !(v > 0.0)) {
        return Err(CliError::Config(
            "weights need nonnegative nu and positive sigma".into(),
        ));
    }
    let sigma2 = sigma.map(|v| v * v);
    let averages = average_weights_by_count(nu * nu, &sigma2)?;
    let panel = match &cfg.panel {
        Some(p) => Some(load(cfg, Some(p))?.0),
        None => None,
    };
    let mut out = Outputs::new(&cfg.output_dir);
    out.csv("average_weights.csv", |w| {
        write_average_weights(&averages, w)
    })?;
    if let Some(panel) = &panel {
        let report = weight_report(panel, nu * nu, &sigma2)?;
        out.csv("score_weights.csv", |w| report.write_scores(panel, w))?;
        out.csv("classroom_weights.csv", |w| report.write_classrooms(w))?;
    }
    out.text("manifest.txt", manifest_header(cfg, "weights"));
    out.text(RESOLVED_CONFIG, cfg.to_toml());
    out.commit()?;
    println!("n_observed  mean_weight");
    for (k, v) in averages.iter().enumerate() {
        println!("{:>10}  {v:.4}", k + 1);
    }
    Ok(())
}

struct Run {
    label: String,
    config: RunConfig,
    summary: PosteriorSummary,
    dic: Option<f64>,
}

fn read_run(dir: &Path, position: usize) -> Result<Run, CliError> {
    let config = RunConfig::load(&dir.join(RESOLVED_CONFIG))?;
    let summary = PosteriorSummary::read(open(&dir.join("summary.csv"))?)?;
    let dic_path = dir.join("dic.csv");
    let dic = if dic_path.exists() {
        read_joint_dic(&dic_path)?
    } else {
        None
    };
    let label = format!(
        "{}{}",
        position + 1,
        config.model.kind.name().to_lowercase()
    );
    Ok(Run {
        label,
        config,
        summary,
        dic,
    })
}

fn read_joint_dic(path: &Path) -> Result<Option<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for line in text.lines().skip(1) {
        let mut fields = line.split(',');
        if fields.next() == Some("joint") {
            return Ok(fields.next().and_then(|v| v.parse().ok()));
        }
    }
    Ok(None)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("NA".to_string(), |x| format!("{x:.4}"))
}

pub fn compare(cfg: &RunConfig) -> Result<(), CliError> {
    let dirs = &cfg.compare.runs;
    if dirs.len() < 2 {
        return Err(CliError::Config(
            "compare needs at least two fit output directories".into(),
        ));
    }
    let runs: Vec<Run> = dirs
        .iter()
        .enumerate()
        .map(|(k, d)| read_run(d, k))
        .collect::<Result<_, _>>()?;
    let panel_path = cfg.panel.clone().or_else(|| runs[0].config.panel.clone());
    let (panel, _) = load(cfg, panel_path.as_deref())?;
    let rosters = classroom_rosters(&panel);

    let mut out = Outputs::new(&cfg.output_dir);
    let mut report = String::from("# Model comparison\n\n");
    report.push_str(&format!(
        "Panel: {} students, {} observed scores.\n\n",
        panel.len(),
        panel.observed_count()
    ));
    report.push_str(&markdown_table(
        &["run", "model", "directory", "DIC"],
        &runs
            .iter()
            .zip(dirs)
            .map(|(r, d)| {
                vec![
                    r.label.clone(),
                    r.config.model.kind.name().into(),
                    d.display().to_string(),
                    fmt_opt(r.dic),
                ]
            })
            .collect::<Vec<_>>(),
    ));

    let base = &runs[0];
    for other in &runs[1..] {
        let pair = format!("{}_vs_{}", base.label, other.label);
        report.push_str(&format!("\n## {} vs {}\n\n", base.label, other.label));

        let corr = teacher_correlations(&base.summary, &other.summary)?;
        out.csv(&format!("correlations_{pair}.csv"), |w| {
            write_correlations(&corr, w)
        })?;
        report.push_str("Teacher-effect correlations by grade:\n\n");
        report.push_str(&markdown_table(
            &["grade", "correlation"],
            &corr
                .iter()
                .enumerate()
                .map(|(t, c)| vec![(t + 1).to_string(), fmt_opt(*c)])
                .collect::<Vec<_>>(),
        ));

        let gradient = completeness_gradient(&base.summary, &other.summary, &rosters)?;
        out.csv(&format!("gradient_points_{pair}.csv"), |w| {
            gradient.write_points(w)
        })?;
        out.csv(&format!("gradient_slopes_{pair}.csv"), |w| {
            gradient.write_slopes(w)
        })?;
        report.push_str("\nTeacher-effect difference against classroom complete-data share:\n\n");
        let slope_rows: Vec<Vec<String>> = gradient
            .by_grade
            .iter()
            .enumerate()
            .map(|(t, s)| ((t + 1).to_string(), *s))
            .chain(std::iter::once((
                "pooled (within grade)".to_string(),
                gradient.pooled,
            )))
            .map(|(g, s)| vec![g, fmt_opt(s.map(|s| s.slope)), fmt_opt(s.map(|s| s.se))])
            .collect();
        report.push_str(&markdown_table(&["grade", "slope", "se"], &slope_rows));

        let has_nu = |r: &Run| r.summary.get("nu").is_some();
        if has_nu(base) && has_nu(other) {
            let shift = student_effect_shift(&base.summary, &other.summary, &panel)?;
            out.csv(&format!("student_shift_{pair}.csv"), |w| {
                shift.write_bands(w)
            })?;
            report.push_str(
                "\nStandardized student-effect differences by number of observed scores:\n\n",
            );
            report.push_str(&markdown_table(
                &["n_observed", "students", "q25", "median", "q75"],
                &shift
                    .bands
                    .iter()
                    .map(|b| {
                        vec![
                            b.n_observed.to_string(),
                            b.students.to_string(),
                            format!("{:.4}", b.q25),
                            format!("{:.4}", b.median),
                            format!("{:.4}", b.q75),
                        ]
                    })
                    .collect::<Vec<_>>(),
            ));
            report.push_str(&format!(
                "\nStudent-effect posterior SD ratio: {:.4}. Difference variance share: {:.4}.\n",
                shift.sd_ratio, shift.difference_variance_share
            ));
        }

        report.push_str("\nDIC: ");
        match check_dic_comparable(&base.config.model, &other.config.model) {
            Err(e) => report.push_str(&format!("not comparable ({e}).\n")),
            Ok(()) => match (base.dic, other.dic) {
                (Some(a), Some(b)) => {
                    let (better, gap) = if b < a {
                        (&other.label, a - b)
                    } else {
                        (&base.label, b - a)
                    };
                    report.push_str(&format!(
                        "{} {a:.2}, {} {b:.2}; {better} preferred by {gap:.2} points.\n",
                        base.label, other.label
                    ));
                }
                _ => report.push_str("unavailable.\n"),
            },
        }
    }

    for run in runs
        .iter()
        .filter(|r| r.config.model.kind == ModelKind::Pmix)
    {
        let grouping = group_patterns(&panel, run.config.model.pattern_threshold);
        let rows = pattern_means_table(&run.summary, &grouping)?;
        out.csv(&format!("pattern_means_{}.csv", run.label), |w| {
            write_pattern_means(&rows, w)
        })?;
        report.push_str(&format!("\n## Pattern means ({})\n\n", run.label));
        report.push_str(&markdown_table(
            &["group", "patterns", "students", "grade", "mean", "sd"],
            &rows
                .iter()
                .map(|r| {
                    vec![
                        r.group.clone(),
                        r.patterns.clone(),
                        r.students.to_string(),
                        r.grade.to_string(),
                        format!("{:.3}", r.mean),
                        format!("{:.3}", r.sd),
                    ]
                })
                .collect::<Vec<_>>(),
        ));
    }

    out.text("report.md", report.clone());
    out.text("manifest.txt", manifest_header(cfg, "compare"));
    out.text(RESOLVED_CONFIG, cfg.to_toml());
    out.commit()?;
    print!("{report}");
    Ok(())
}

pub fn summarize(cfg: &RunConfig) -> Result<(), CliError> {
    let (panel, ingest) = load(cfg, None)?;
    let cells = nobs_summary(&panel);
    let grouping = group_patterns(&panel, cfg.model.pattern_threshold);
    let mut out = Outputs::new(&cfg.output_dir);
    out.csv("nobs_summary.csv", |w| write_nobs_summary(&cells, w))?;
    out.csv("pattern_groups.csv", |w| grouping.write(&panel, w))?;
    out.text("ingest_report.txt", ingest.to_text());
    let mut text = ingest.to_text();
    if let Some(path) = &cfg.summarize.draws {
        let archive = ChainArchive::read_draws(open(path)?, cfg.model.clone(), cfg.seed)?;
        let summary = PosteriorSummary::from_archive(&archive)?;
        let conv = convergence_report(&archive, cfg.rhat_threshold, cfg.split_rhat);
        out.csv("summary.csv", |w| summary.write(w))?;
        out.csv("convergence.csv", |w| conv.write_csv(w))?;
        text.push_str(&conv.summary());
    }
    out.text("manifest.txt", manifest_header(cfg, "summarize"));
    out.text(RESOLVED_CONFIG, cfg.to_toml());
    out.commit()?;
    print!("{text}");
    Ok(())
}
