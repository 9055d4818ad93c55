use vamnar::diagnostics::{
    check_dic_comparable, convergence_report, dic, gelman_rubin, ConvergenceStatus, RHAT_THRESHOLD,
};
use vamnar::linkage::build_design;
use vamnar::mcmc::{fit, ChainArchive, ChainDraws, ChainStats, LoglikParts};
use vamnar::model::{ModelKind, ModelSpec, SelectionFamily};
use vamnar::simgen::{
    simulate_with_missingness, GeneratorConfig, MissingnessKind, MissingnessMechanism,
};

fn archive_from(chains: Vec<Vec<[f64; 2]>>) -> ChainArchive {
    let chains = chains
        .into_iter()
        .enumerate()
        .map(|(c, rows)| ChainDraws {
            chain: c,
            stream: c as u64,
            iterations: (1..=rows.len()).collect(),
            values: rows.iter().flatten().copied().collect(),
            loglik: vec![LoglikParts::default(); rows.len()],
            stats: ChainStats::default(),
        })
        .collect();
    ChainArchive {
        spec: ModelSpec::default(),
        root_seed: 0,
        names: vec!["x".into(), "y".into()],
        chains,
    }
}

fn wave(n: usize, phase: f64, shift: f64) -> Vec<f64> {
    (0..n)
        .map(|k| (k as f64 * 0.37 + phase).sin() + shift)
        .collect()
}

#[test]
fn psrf_separates_mixed_from_stuck_chains() {
    let mixed: Vec<Vec<[f64; 2]>> = (0..3)
        .map(|c| {
            let x = wave(2000, c as f64, 0.0);
            let y = wave(2000, 2.0 * c as f64, 3.0 * c as f64);
            x.into_iter().zip(y).map(|(a, b)| [a, b]).collect()
        })
        .collect();
    let report = convergence_report(&archive_from(mixed), RHAT_THRESHOLD, false);
    let ConvergenceStatus::Available(rows) = &report.status else {
        panic!("expected R-hat rows")
    };
    assert!(rows[0].rhat.unwrap() < 1.01);
    assert!(rows[1].rhat.unwrap() > 2.0);
    assert_eq!(report.failures().len(), 1);
    assert!(!report.passed());
}

#[test]
fn psrf_matches_textbook_formula() {
    let chains = vec![vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 4.0, 6.0, 8.0]];
    // W = (5/3 + 20/3) / 2, B/n = var(2.5, 5) = 3.125, V = 3/4 W + B/n.
    let w: f64 = 25.0 / 6.0;
    let expected = ((0.75 * w + 3.125) / w).sqrt();
    assert!((gelman_rubin(&chains).unwrap().unwrap() - expected).abs() < 1e-12);
}

#[test]
fn single_chain_reports_unavailable() {
    let archive = archive_from(vec![(0..50).map(|k| [k as f64, 1.0]).collect()]);
    let report = convergence_report(&archive, RHAT_THRESHOLD, false);
    assert!(matches!(report.status, ConvergenceStatus::Unavailable(_)));
    assert!(report.summary().contains("unavailable (needs ≥ 2 chains)"));
}

#[test]
fn dic_identity_and_draw_file_round_trip() {
    let config = GeneratorConfig {
        students: 150,
        teachers_per_year: 5,
        seed: 12,
        ..Default::default()
    };
    let mech = MissingnessMechanism::new(MissingnessKind::SelHazard {
        a: [-1.2; 4],
        beta: -0.8,
    });
    let (panel, _) = simulate_with_missingness(&config, &mech).unwrap();
    let design = build_design(&panel).unwrap();
    let mut spec = ModelSpec::new(ModelKind::Sel);
    spec.sampler.chains = 2;
    spec.sampler.burn_in = 200;
    spec.sampler.retained = 300;
    let archive = fit(&spec, &panel, None, 8).unwrap();
    let report = dic(&archive, &panel, &design, None).unwrap();
    for r in [report.joint, report.scores] {
        assert_eq!(r.dic, -4.0 * r.lbar + 2.0 * r.l_at_mean);
        assert!(r.p_d() > 0.0);
    }
    assert!(report.joint.lbar < report.scores.lbar);

    let mut buf = Vec::new();
    archive.write_draws(&mut buf).unwrap();
    let back = ChainArchive::read_draws(buf.as_slice(), spec.clone(), 8).unwrap();
    assert_eq!(back.names, archive.names);
    assert_eq!(back.total_draws(), archive.total_draws());
    for (a, b) in back.chains.iter().zip(&archive.chains) {
        assert_eq!(a.iterations, b.iterations);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_eq!(x, y);
        }
    }
    let from_file = dic(&back, &panel, &design, None).unwrap();
    assert!((from_file.joint.dic - report.joint.dic).abs() < 1e-6 * report.joint.dic.abs());
}

#[test]
fn dic_comparability_rules() {
    let mar = ModelSpec::new(ModelKind::Mar);
    let sel = ModelSpec::new(ModelKind::Sel);
    let sel2 = ModelSpec::new(ModelKind::Sel2);
    let pmix = ModelSpec::new(ModelKind::Pmix);
    assert!(check_dic_comparable(&mar, &sel).is_ok());
    assert!(check_dic_comparable(&mar, &pmix).is_err());
    assert!(check_dic_comparable(&mar, &sel2).is_err());
    let mut mar_yearly = mar.clone();
    mar_yearly.companion = Some(SelectionFamily::Yearly);
    assert!(check_dic_comparable(&mar_yearly, &sel2).is_ok());
}
