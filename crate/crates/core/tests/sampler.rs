mod common;

use statrs::distribution::{ContinuousCDF, Normal, Uniform};
use vamnar::mcmc::{fit, grouping_for, ChainArchive};
use vamnar::model::{ModelKind, ModelSpec};
use vamnar::panel::ScorePanel;
use vamnar::simgen::{
    simulate_with_missingness, GeneratorConfig, MissingnessKind, MissingnessMechanism,
};

use common::{batch_mcse, ks_distance, mean, pooled};

fn small_spec(kind: ModelKind, burn_in: usize, retained: usize) -> ModelSpec {
    let mut spec = ModelSpec::new(kind);
    spec.sampler.chains = 2;
    spec.sampler.burn_in = burn_in;
    spec.sampler.retained = retained;
    spec
}

fn mnar_panel(students: usize, seed: u64) -> ScorePanel {
    let config = GeneratorConfig {
        students,
        teachers_per_year: 6,
        seed,
        ..Default::default()
    };
    let mech = MissingnessMechanism::new(MissingnessKind::SelHazard {
        a: [-1.2; 4],
        beta: -0.8,
    });
    simulate_with_missingness(&config, &mech).unwrap().0
}

fn hyperparameters(archive: &ChainArchive) -> Vec<String> {
    archive
        .names
        .iter()
        .filter(|n| {
            ["mu[", "alpha[", "tau[", "nu", "sigma["]
                .iter()
                .any(|p| n.starts_with(p))
        })
        .cloned()
        .collect()
}

#[test]
fn same_seed_gives_identical_archives() {
    let panel = mnar_panel(120, 2);
    for kind in [
        ModelKind::Mar,
        ModelKind::Sel,
        ModelKind::Sel2,
        ModelKind::Pmix,
    ] {
        let mut spec = small_spec(kind, 40, 40);
        spec.pattern_threshold = 5;
        let g = grouping_for(&spec, &panel);
        let a = fit(&spec, &panel, g.as_ref(), 9).unwrap();
        let b = fit(&spec, &panel, g.as_ref(), 9).unwrap();
        assert_eq!(a, b, "{kind:?}");
        let c = fit(&spec, &panel, g.as_ref(), 10).unwrap();
        assert_ne!(a.chains[0].values, c.chains[0].values);
        assert_ne!(a.chains[0].values, a.chains[1].values);
    }
}

#[test]
fn draws_stay_in_support() {
    let panel = mnar_panel(150, 4);
    for kind in [
        ModelKind::Mar,
        ModelKind::Sel,
        ModelKind::Sel2,
        ModelKind::Pmix,
    ] {
        let mut spec = small_spec(kind, 100, 200);
        spec.pattern_threshold = 5;
        let g = grouping_for(&spec, &panel);
        let archive = fit(&spec, &panel, g.as_ref(), 3).unwrap();
        let p = &spec.prior;
        for (k, name) in archive.names.iter().enumerate() {
            let upper = if name.starts_with("tau[") {
                p.tau_upper
            } else if name.starts_with("nu") {
                p.nu_upper
            } else if name.starts_with("sigma[") {
                p.sigma_upper
            } else {
                continue;
            };
            for chain in archive.param_chains(k) {
                assert!(
                    chain.iter().all(|&v| v > 0.0 && v < upper),
                    "{kind:?} {name}"
                );
            }
        }
        for c in &archive.chains {
            assert!(c.values.iter().all(|v| v.is_finite()));
            assert!(c.loglik.iter().all(|l| l.total().is_finite()));
            assert_eq!(c.iterations, (1..=200).collect::<Vec<_>>());
        }
    }
}

#[test]
fn thinning_keeps_every_kth_sweep() {
    let panel = mnar_panel(60, 8);
    let mut spec = small_spec(ModelKind::Mar, 10, 30);
    spec.sampler.thin = 3;
    let archive = fit(&spec, &panel, None, 1).unwrap();
    assert_eq!(
        archive.chains[0].iterations,
        (1..=10).map(|k| 3 * k).collect::<Vec<_>>()
    );
}

#[test]
fn zero_slope_selection_model_matches_mar() {
    let panel = mnar_panel(200, 6);
    let mar = fit(&small_spec(ModelKind::Mar, 1000, 8000), &panel, None, 21).unwrap();
    let mut spec = small_spec(ModelKind::Sel, 1000, 8000);
    spec.fixed.zero_slopes = true;
    let sel = fit(&spec, &panel, None, 22).unwrap();
    assert!(sel.param_index("beta").is_none());
    let names = hyperparameters(&mar);
    assert_eq!(names.len(), 26);
    for name in names {
        let (a, b) = (pooled(&mar, &name), pooled(&sel, &name));
        let se = (batch_mcse(&a, 40).powi(2) + batch_mcse(&b, 40).powi(2)).sqrt();
        let diff = (mean(&a) - mean(&b)).abs();
        assert!(diff < 3.0 * se.max(1e-12), "{name}: |{diff}| vs 3 x {se}");
    }
}

#[test]
fn empty_panel_recovers_priors() {
    let mut spec = ModelSpec::new(ModelKind::Sel);
    spec.sampler.chains = 1;
    spec.sampler.burn_in = 1000;
    spec.sampler.retained = 50_000;
    spec.sampler.thin = 10;
    let archive = fit(&spec, &ScorePanel::empty(), None, 4).unwrap();
    assert_eq!(archive.total_draws(), 5000);
    let p = &spec.prior;
    let mean_prior = Normal::new(0.0, p.mean_sd).unwrap();
    let coef_prior = Normal::new(0.0, p.sel_coef_var.sqrt()).unwrap();
    for (k, name) in archive.names.iter().enumerate() {
        let draws = archive.param_chains(k).concat();
        let d = if name.starts_with("mu[") || name.starts_with("alpha[") {
            ks_distance(&draws, |x| mean_prior.cdf(x))
        } else if name.starts_with("a[") || name == "beta" {
            ks_distance(&draws, |x| coef_prior.cdf(x))
        } else {
            let upper = if name.starts_with("tau[") {
                p.tau_upper
            } else if name == "nu" {
                p.nu_upper
            } else {
                p.sigma_upper
            };
            let u = Uniform::new(0.0, upper).unwrap();
            ks_distance(&draws, |x| u.cdf(x))
        };
        assert!(d < 0.05, "{name}: KS distance {d}");
    }
}
