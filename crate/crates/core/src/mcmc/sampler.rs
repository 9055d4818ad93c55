//! Metropolis-within-Gibbs sweeps for the four model families.
//!
//! One sweep updates, in order:
//! 1. for each year `s`, the classroom effects of year `s` jointly with all
//!    mean slots (arrow-structured Gaussian block);
//! 2. for each later year `t`, the out-year weights `alpha[t, *]` jointly;
//! 3. every student effect (exact Gaussian draw, or an independence
//!    Metropolis step when the observation model depends on it);
//! 4. teacher, student and residual SDs;
//! 5. observation-model coefficients by componentwise random walk.
//!
//! Chains are seeded from one root seed: chain `c` uses ChaCha8 seeded with
//! the root seed on stream `c`, so adding chains never changes existing ones.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linkage::{alpha_index, build_design, Design};
use crate::mcmc::archive::{ChainArchive, ChainDraws, ChainStats};
use crate::mcmc::blocks::{sample_dense, ArrowSystem};
use crate::mcmc::loglik::{conditional_loglik, row_location};
use crate::mcmc::selection::{logistic, selection_loglik, Observation, SelectionParams};
use crate::mcmc::state::{Layout, ParameterState};
use crate::mcmc::variance::sample_sd;
use crate::model::{ModelKind, ModelSpec, SelectionFamily, SelectionParameterization};
use crate::panel::{PatternGrouping, ScorePanel, YEARS};

/// Acceptance rate the random-walk step sizes are tuned toward.
pub const TARGET_ACCEPTANCE: f64 = 0.35;
const INITIAL_STEP: f64 = 0.1;

/// RNG for chain `chain` under `root_seed`.
pub fn chain_rng(root_seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(chain as u64);
    rng
}

/// One chain's mutable sampler.
pub struct Sweeper<'a> {
    spec: &'a ModelSpec,
    layout: &'a Layout,
    design: &'a Design,
    pub state: ParameterState,
    rng: ChaCha8Rng,
    arrow: ArrowSystem,
    steps: Vec<f64>,
    batch_accepts: Vec<usize>,
    batch_tries: Vec<usize>,
    total_accepts: Vec<usize>,
    total_tries: Vec<usize>,
    delta_accepts: usize,
    delta_tries: usize,
    /// Students per student-effect slot.
    nu_members: Vec<usize>,
}

impl<'a> Sweeper<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        layout: &'a Layout,
        design: &'a Design,
        rng: ChaCha8Rng,
    ) -> Self {
        let mut state = ParameterState::initial(layout, design, spec);
        if spec.parameterization == SelectionParameterization::Cumulative {
            if let Some(sel) = state.selection.as_mut() {
                if sel.family == SelectionFamily::Count {
                    sel.intercepts = empirical_cumulative_logits(&layout.observations);
                }
            }
        }
        let n_coef = layout.selection.map_or(0, |(f, sampled)| {
            f.intercepts() + if sampled { f.slopes() } else { 0 }
        });
        let mut nu_members = vec![0; layout.nu_slots()];
        for slot in layout.student_nu_slot.iter().flatten() {
            nu_members[*slot] += 1;
        }
        Sweeper {
            spec,
            layout,
            design,
            state,
            rng,
            arrow: ArrowSystem::default(),
            steps: vec![INITIAL_STEP; n_coef],
            batch_accepts: vec![0; n_coef],
            batch_tries: vec![0; n_coef],
            total_accepts: vec![0; n_coef],
            total_tries: vec![0; n_coef],
            delta_accepts: 0,
            delta_tries: 0,
            nu_members,
        }
    }

    fn slopes_sampled(&self) -> bool {
        matches!(self.layout.selection, Some((_, true)))
    }

    /// Location of row `o` excluding the classroom effect of year `skip`
    /// and the mean.
    fn teacher_part(&self, o: usize, skip: Option<usize>) -> f64 {
        let row = &self.design.rows()[o];
        let links = &self.design.links()[row.student];
        let mut v = 0.0;
        for ts in 0..=row.year {
            if Some(ts) == skip {
                continue;
            }
            if let Some(j) = links[ts] {
                v += self.state.alpha(row.year, ts) * self.state.theta[ts][j];
            }
        }
        v
    }

    /// Classroom effects of year `s`, jointly with the means unless fixed.
    pub fn update_theta_block(&mut self, s: usize) -> Result<()> {
        let n_teachers = self.state.theta[s].len();
        let means_fixed = self.spec.fixed.mu.is_some();
        let head = if means_fixed {
            0
        } else {
            self.layout.mean_slots()
        };
        if n_teachers == 0 && head == 0 {
            return Ok(());
        }
        let tau2 = self.state.tau[s].powi(2);
        let mean_prec = self.spec.prior.mean_sd.powi(-2);
        let mut arrow = std::mem::take(&mut self.arrow);
        arrow.reset(n_teachers, head, 1.0 / tau2, mean_prec);
        for (o, row) in self.design.rows().iter().enumerate() {
            let link = if row.year >= s {
                self.design.links()[row.student][s]
            } else {
                None
            };
            if head == 0 && link.is_none() {
                continue;
            }
            let slot = self.layout.row_mean_slot[o];
            let w = self.state.sigma[self.layout.row_sigma_slot[o]].powi(-2);
            let mut z = row.score - self.state.delta[row.student] - self.teacher_part(o, Some(s));
            if means_fixed {
                z -= self.state.mu[slot];
            }
            if let Some(j) = link {
                let c = self.state.alpha(row.year, s);
                arrow.d[j] += c * c * w;
                arrow.b1[j] += c * w * z;
                if head > 0 {
                    arrow.add_coupling(j, slot, c * w);
                }
            }
            if head > 0 {
                arrow.e[slot] += w;
                arrow.b2[slot] += w * z;
            }
        }
        let (theta, mu) = arrow.sample(&mut self.rng)?;
        self.arrow = arrow;
        self.state.theta[s] = theta;
        if head > 0 {
            self.state.mu = mu;
        }
        Ok(())
    }

    /// Out-year weights `alpha[t, 0..t]` jointly.
    pub fn update_alpha_block(&mut self, t: usize) -> Result<()> {
        if t == 0 || self.spec.fixed.alpha.is_some() {
            return Ok(());
        }
        let prior_prec = self.spec.prior.mean_sd.powi(-2);
        let mut p = DMatrix::<f64>::identity(t, t) * prior_prec;
        let mut b = DVector::<f64>::zeros(t);
        let mut x = vec![0.0; t];
        for (o, row) in self.design.rows().iter().enumerate() {
            if row.year != t {
                continue;
            }
            let links = &self.design.links()[row.student];
            let mut any = false;
            for (ts, xv) in x.iter_mut().enumerate() {
                *xv = links[ts].map_or(0.0, |j| self.state.theta[ts][j]);
                any |= links[ts].is_some();
            }
            if !any {
                continue;
            }
            let w = self.state.sigma[self.layout.row_sigma_slot[o]].powi(-2);
            let current = links[t].map_or(0.0, |j| self.state.theta[t][j]);
            let z = row.score
                - self.state.mu[self.layout.row_mean_slot[o]]
                - current
                - self.state.delta[row.student];
            for a in 0..t {
                if x[a] == 0.0 {
                    continue;
                }
                b[a] += w * x[a] * z;
                for c in 0..t {
                    p[(a, c)] += w * x[a] * x[c];
                }
            }
        }
        let draw = sample_dense(&mut self.rng, p, b)?;
        for ts in 0..t {
            self.state.alpha[alpha_index(t, ts)] = draw[ts];
        }
        Ok(())
    }

    /// Student effects: exact Gaussian draws, or independence Metropolis
    /// with the Gaussian full conditional as proposal when the observation
    /// model depends on the effect.
    pub fn update_delta(&mut self) {
        let mh = self.slopes_sampled();
        let parameterization = self.spec.parameterization;
        for i in 0..self.state.delta.len() {
            let Some(slot) = self.layout.student_nu_slot[i] else {
                self.state.delta[i] = 0.0;
                continue;
            };
            let mut prec = self.state.nu[slot].powi(-2);
            let mut lin = 0.0;
            for o in self.design.student_rows()[i].clone() {
                let w = self.state.sigma[self.layout.row_sigma_slot[o]].powi(-2);
                let z = self.design.rows()[o].score
                    - row_location(&self.state, self.layout, self.design, o);
                prec += w;
                lin += w * z;
            }
            let mean = lin / prec;
            let proposal = mean + self.rng.sample::<f64, _>(StandardNormal) / prec.sqrt();
            if !mh {
                self.state.delta[i] = proposal;
                continue;
            }
            let sel = self.state.selection.as_ref().expect("selection parameters");
            let obs = self.layout.observations[i];
            let log_ratio = selection_loglik(obs, proposal, sel, parameterization)
                - selection_loglik(obs, self.state.delta[i], sel, parameterization);
            self.delta_tries += 1;
            if log_ratio >= 0.0 || self.rng.random::<f64>().ln() < log_ratio {
                self.state.delta[i] = proposal;
                self.delta_accepts += 1;
            }
        }
    }

    pub fn update_variances(&mut self, iteration: usize) -> Result<()> {
        let prior = &self.spec.prior;
        let fixed = &self.spec.fixed;
        if fixed.tau.is_none() {
            for s in 0..YEARS {
                let ss: f64 = self.state.theta[s].iter().map(|v| v * v).sum();
                let m = self.state.theta[s].len();
                let cur = self.state.tau[s];
                self.state.tau[s] = sample_sd(&mut self.rng, m, ss, prior.tau_upper, cur);
            }
        }
        if fixed.nu.is_none() {
            let mut ss = vec![0.0; self.layout.nu_slots()];
            for (i, slot) in self.layout.student_nu_slot.iter().enumerate() {
                if let Some(k) = slot {
                    ss[*k] += self.state.delta[i].powi(2);
                }
            }
            for k in 0..ss.len() {
                let cur = self.state.nu[k];
                self.state.nu[k] = sample_sd(
                    &mut self.rng,
                    self.nu_members[k],
                    ss[k],
                    prior.nu_upper,
                    cur,
                );
            }
        }
        if fixed.sigma.is_none() {
            let mut ss = vec![0.0; self.layout.sigma_slots()];
            let mut m = vec![0usize; self.layout.sigma_slots()];
            for (o, row) in self.design.rows().iter().enumerate() {
                let r = row.score
                    - row_location(&self.state, self.layout, self.design, o)
                    - self.state.delta[row.student];
                let slot = self.layout.row_sigma_slot[o];
                ss[slot] += r * r;
                m[slot] += 1;
            }
            for k in 0..ss.len() {
                if !ss[k].is_finite() {
                    return Err(Error::Numerical {
                        iteration,
                        message: format!(
                            "non-finite residual sum for {}",
                            self.layout.sigma_names[k]
                        ),
                    });
                }
                let cur = self.state.sigma[k];
                self.state.sigma[k] = sample_sd(&mut self.rng, m[k], ss[k], prior.sigma_upper, cur);
            }
        }
        Ok(())
    }

    /// Componentwise Gaussian random-walk Metropolis on the observation
    /// model coefficients.
    pub fn update_selection(&mut self) {
        let Some((family, sampled_slopes)) = self.layout.selection else {
            return;
        };
        let parameterization = self.spec.parameterization;
        let prior_var = self.spec.prior.coef_var(family);
        let n_int = family.intercepts();
        let n_coef = n_int + if sampled_slopes { family.slopes() } else { 0 };
        let mut params = self.state.selection.take().expect("selection parameters");
        let obs = &self.layout.observations;
        let delta = &self.state.delta;
        // Yearly coefficients only touch their own year's term.
        let part = |params: &SelectionParams, comp: usize| -> f64 {
            match family {
                SelectionFamily::Count => obs
                    .iter()
                    .zip(delta)
                    .map(|(&o, &d)| selection_loglik(o, d, params, parameterization))
                    .sum(),
                SelectionFamily::Yearly => {
                    let t = if comp < n_int { comp } else { comp - n_int };
                    yearly_term(obs, delta, params, t)
                }
            }
        };
        let mut current_count = if family == SelectionFamily::Count {
            Some(part(&params, 0))
        } else {
            None
        };
        for comp in 0..n_coef {
            let cur_val = get_coef(&params, comp, n_int);
            let prop_val = cur_val + self.steps[comp] * self.rng.sample::<f64, _>(StandardNormal);
            let cur_ll = match current_count {
                Some(v) => v,
                None => part(&params, comp),
            };
            set_coef(&mut params, comp, n_int, prop_val);
            let prop_ll = part(&params, comp);
            let log_ratio =
                prop_ll - cur_ll - (prop_val * prop_val - cur_val * cur_val) / (2.0 * prior_var);
            self.batch_tries[comp] += 1;
            self.total_tries[comp] += 1;
            if log_ratio.is_finite()
                && (log_ratio >= 0.0 || self.rng.random::<f64>().ln() < log_ratio)
            {
                self.batch_accepts[comp] += 1;
                self.total_accepts[comp] += 1;
                if current_count.is_some() {
                    current_count = Some(prop_ll);
                }
            } else {
                set_coef(&mut params, comp, n_int, cur_val);
            }
        }
        self.state.selection = Some(params);
    }

    /// Nudges random-walk steps toward the target acceptance rate.
    fn adapt(&mut self) {
        for k in 0..self.steps.len() {
            if self.batch_tries[k] > 0 {
                let rate = self.batch_accepts[k] as f64 / self.batch_tries[k] as f64;
                self.steps[k] =
                    (self.steps[k] * (1.5 * (rate - TARGET_ACCEPTANCE)).exp()).clamp(1e-4, 100.0);
            }
            self.batch_accepts[k] = 0;
            self.batch_tries[k] = 0;
        }
    }

    fn reset_counters(&mut self) {
        self.total_accepts.iter_mut().for_each(|v| *v = 0);
        self.total_tries.iter_mut().for_each(|v| *v = 0);
        self.delta_accepts = 0;
        self.delta_tries = 0;
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn sweep(&mut self, iteration: usize) -> Result<()> {
        for s in 0..YEARS {
            self.update_theta_block(s)
                .map_err(|e| at_iteration(e, iteration))?;
        }
        for t in 1..YEARS {
            self.update_alpha_block(t)
                .map_err(|e| at_iteration(e, iteration))?;
        }
        self.update_delta();
        self.update_variances(iteration)?;
        self.update_selection();
        if self
            .state
            .mu
            .iter()
            .chain(&self.state.alpha)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Numerical {
                iteration,
                message: "non-finite mean or weight".into(),
            });
        }
        Ok(())
    }

    fn stats(&self) -> ChainStats {
        ChainStats {
            delta_acceptance: (self.delta_tries > 0)
                .then(|| self.delta_accepts as f64 / self.delta_tries as f64),
            selection_acceptance: self
                .total_accepts
                .iter()
                .zip(&self.total_tries)
                .map(|(&a, &n)| if n > 0 { a as f64 / n as f64 } else { 0.0 })
                .collect(),
            selection_steps: self.steps.clone(),
        }
    }
}

fn at_iteration(e: Error, iteration: usize) -> Error {
    match e {
        Error::Invariant(message) => Error::Numerical { iteration, message },
        other => other,
    }
}

fn get_coef(p: &SelectionParams, comp: usize, n_int: usize) -> f64 {
    if comp < n_int {
        p.intercepts[comp]
    } else {
        p.slopes[comp - n_int]
    }
}

fn set_coef(p: &mut SelectionParams, comp: usize, n_int: usize, v: f64) {
    if comp < n_int {
        p.intercepts[comp] = v;
    } else {
        p.slopes[comp - n_int] = v;
    }
}

fn yearly_term(obs: &[Observation], delta: &[f64], params: &SelectionParams, t: usize) -> f64 {
    use crate::mcmc::selection::{log1m_logistic, log_logistic};
    obs.iter()
        .zip(delta)
        .map(|(o, &d)| {
            let eta = params.intercepts[t] + params.slopes[t] * d;
            if o.flags[t] {
                log_logistic(eta)
            } else {
                log1m_logistic(eta)
            }
        })
        .sum()
}

/// Strictly increasing logits of the empirical `Pr(n <= k)`, a valid start
/// for the cumulative parameterization.
fn empirical_cumulative_logits(obs: &[Observation]) -> Vec<f64> {
    let n = obs.len() as f64;
    let mut out = Vec::with_capacity(YEARS - 1);
    let mut prev = f64::NEG_INFINITY;
    for k in 1..YEARS {
        let c = obs.iter().filter(|o| o.n_observed <= k).count() as f64;
        let p = ((c + 0.5) / (n + 1.0)).clamp(1e-3, 1.0 - 1e-3);
        let mut logit = (p / (1.0 - p)).ln();
        if logit <= prev + 1e-3 {
            logit = prev + 0.1;
        }
        out.push(logit);
        prev = logit;
    }
    debug_assert!(out.windows(2).all(|w| logistic(w[0]) < logistic(w[1])));
    out
}

/// Everything a chain needs besides its seed.
pub struct FitInputs<'a> {
    pub spec: &'a ModelSpec,
    pub layout: Layout,
    pub design: Design,
    pub panel: &'a ScorePanel,
}

impl<'a> FitInputs<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        panel: &'a ScorePanel,
        grouping: Option<&PatternGrouping>,
    ) -> Result<Self> {
        spec.validate()?;
        let design = build_design(panel)?;
        let layout = Layout::new(spec, panel, &design, grouping)?;
        let f = &spec.fixed;
        let check = |name: &str, got: Option<usize>, want: usize| -> Result<()> {
            match got {
                Some(n) if n != want => Err(Error::Config(format!(
                    "fixed {name} has {n} values, model has {want} slots"
                ))),
                _ => Ok(()),
            }
        };
        check("mu", f.mu.as_ref().map(Vec::len), layout.mean_slots())?;
        check("nu", f.nu.as_ref().map(Vec::len), layout.nu_slots())?;
        check(
            "sigma",
            f.sigma.as_ref().map(Vec::len),
            layout.sigma_slots(),
        )?;
        Ok(FitInputs {
            spec,
            layout,
            design,
            panel,
        })
    }
}

/// Runs one chain: burn-in (with step-size adaptation), then retained
/// sweeps, storing every `thin`-th state and its log-likelihood.
pub fn run_chain(inputs: &FitInputs<'_>, root_seed: u64, chain: usize) -> Result<ChainDraws> {
    let spec = inputs.spec;
    let settings = &spec.sampler;
    let mut sweeper = Sweeper::new(
        spec,
        &inputs.layout,
        &inputs.design,
        chain_rng(root_seed, chain),
    );
    for it in 0..settings.burn_in {
        sweeper.sweep(it + 1)?;
        if (it + 1) % settings.adapt_interval == 0 {
            sweeper.adapt();
        }
    }
    sweeper.reset_counters();
    let stored = settings.stored_draws();
    let n_params = inputs.layout.parameter_count();
    let mut draws = ChainDraws {
        chain,
        stream: chain as u64,
        iterations: Vec::with_capacity(stored),
        values: Vec::with_capacity(stored * n_params),
        loglik: Vec::with_capacity(stored),
        stats: ChainStats::default(),
    };
    for it in 1..=settings.retained {
        sweeper.sweep(settings.burn_in + it)?;
        if it % settings.thin == 0 && draws.iterations.len() < stored {
            draws.iterations.push(it);
            sweeper
                .state
                .flatten_into(&inputs.layout, &mut draws.values);
            let ll = conditional_loglik(
                &sweeper.state,
                &inputs.layout,
                &inputs.design,
                spec.parameterization,
            );
            if !ll.scores.is_finite() {
                return Err(Error::Numerical {
                    iteration: settings.burn_in + it,
                    message: "non-finite log-likelihood".into(),
                });
            }
            draws.loglik.push(ll);
        }
    }
    draws.stats = sweeper.stats();
    Ok(draws)
}

/// Runs every configured chain (concurrently) and collects the archive.
pub fn fit(
    spec: &ModelSpec,
    panel: &ScorePanel,
    grouping: Option<&PatternGrouping>,
    root_seed: u64,
) -> Result<ChainArchive> {
    let inputs = FitInputs::new(spec, panel, grouping)?;
    let results: Vec<Result<ChainDraws>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..spec.sampler.chains)
            .map(|c| {
                let inputs = &inputs;
                scope.spawn(move || run_chain(inputs, root_seed, c))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    });
    let chains = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ChainArchive {
        spec: spec.clone(),
        root_seed,
        names: inputs.layout.parameter_names(),
        chains,
    })
}

/// Builds the grouping a model needs (only the pattern mixture uses one).
pub fn grouping_for(spec: &ModelSpec, panel: &ScorePanel) -> Option<PatternGrouping> {
    (spec.kind == ModelKind::Pmix)
        .then(|| crate::panel::group_patterns(panel, spec.pattern_threshold))
}
