#![allow(dead_code)]

use vamnar::mcmc::ChainArchive;
use vamnar::panel::{ScorePanel, StudentRecord, YEARS};
use vamnar::simgen::{simulate_panel, GeneratorConfig};

/// Simulated panel restricted to the first `grades` years.
pub fn truncated_panel(students: usize, teachers: usize, grades: usize, seed: u64) -> ScorePanel {
    let config = GeneratorConfig {
        students,
        teachers_per_year: teachers,
        seed,
        ..Default::default()
    };
    let (panel, _) = simulate_panel(&config).unwrap();
    let records = panel
        .students()
        .iter()
        .map(|s| {
            let mut r = s.clone();
            for t in grades..YEARS {
                r.scores[t] = None;
                r.teacher_links[t] = None;
            }
            r
        })
        .collect();
    ScorePanel::new(records, panel.standardization()).unwrap()
}

pub fn map_scores(panel: &ScorePanel, f: impl Fn(usize, f64) -> f64) -> ScorePanel {
    let records: Vec<StudentRecord> = panel
        .students()
        .iter()
        .map(|s| {
            let mut r = s.clone();
            for t in 0..YEARS {
                r.scores[t] = r.scores[t].map(|y| f(t, y));
            }
            r
        })
        .collect();
    ScorePanel::new(records, panel.standardization()).unwrap()
}

pub fn pooled(archive: &ChainArchive, name: &str) -> Vec<f64> {
    let k = archive
        .param_index(name)
        .unwrap_or_else(|| panic!("no parameter {name}"));
    archive.param_chains(k).concat()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Monte Carlo standard error of the mean by non-overlapping batch means.
pub fn batch_mcse(x: &[f64], batches: usize) -> f64 {
    let len = x.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| mean(&x[b * len..(b + 1) * len]))
        .collect();
    let m = mean(&means);
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
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
