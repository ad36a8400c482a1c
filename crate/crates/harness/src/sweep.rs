//! Trial execution and the ordered parallel sweep.

use std::time::{Duration, Instant};

use agnosticq_core::funclass::{compute_approx_error, eluder_dim_greedy, LinearClass};
use agnosticq_core::general_agent::GeneralRunStats;
use agnosticq_core::linear_agent::{ridge_terms, LinearOptions};
use agnosticq_core::{
    eluder_dim_bruteforce, gen_finite_class, gen_linear_features, gen_mdp, gen_stochastic_rewards, learn_general,
    learn_linear, learn_stochastic, solve_dp, DeterministicMdp, Env, Error, FeatureMap, FiniteClass, GeneralOptions,
    GroundTruth, HypothesisClass, Policy, SaPair, StateId, StochasticConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bounds;
use crate::config::{ClassKind, ExperimentConfig, Mode};
use crate::report::{Report, Row, Status};
use crate::HarnessError;

/// Independent sub-streams of one trial seed.
#[derive(Clone, Copy)]
#[repr(u64)]
enum Stream {
    Shape = 1,
    Mdp = 2,
    Noise = 3,
    Class = 4,
    Rewards = 5,
    Eluder = 6,
    Verify = 7,
}

fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream as u64);
    r
}

fn derive(seed: u64, stream: Stream) -> u64 {
    rng(seed, stream).gen()
}

/// Runs every trial and assembles the report in trial order.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    config.validate()?;
    let run = || (0..config.trials).into_par_iter().map(|t| run_trial(config, t)).collect::<Vec<Row>>();
    let rows = match config.parallelism {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .install(run),
        None => run(),
    };
    Ok(Report::new(config.clone(), rows))
}

/// One trial; failures become rows rather than errors.
pub fn run_trial(config: &ExperimentConfig, trial: usize) -> Row {
    let seed = config.trial_seed(trial);
    let instance_seed = config.instance_seed.unwrap_or(seed);
    let start = Instant::now();
    let budget = config.budget_ms.map(Duration::from_millis);
    let deadline = budget.map(|b| start + b);
    let outcome = match config.mode {
        Mode::Linear => linear_trial(config, seed, instance_seed, deadline),
        Mode::General | Mode::Stochastic => general_trial(config, seed, instance_seed, deadline),
        Mode::Eluder => eluder_trial(config, seed),
        Mode::Verify => verify_trial(config, seed),
    };
    let elapsed = start.elapsed();
    let mut row = match outcome {
        Err(Error::Timeout) => Row::fail(seed, instance_seed, Status::Timeout, Error::Timeout.to_string()),
        Err(e) => Row::fail(seed, instance_seed, Status::Error, e.to_string()),
        Ok(_) if budget.is_some_and(|b| elapsed > b) => {
            Row::fail(seed, instance_seed, Status::Timeout, Error::Timeout.to_string())
        }
        Ok(row) => row,
    };
    if config.timing {
        row.wall_ms = elapsed.as_millis() as u64;
    }
    row
}

struct Instance {
    mdp: DeterministicMdp,
    truth: GroundTruth,
    /// Gap handed to the agent.
    rho: f64,
    d: usize,
}

fn build_instance(config: &ExperimentConfig, instance_seed: u64) -> agnosticq_core::Result<Instance> {
    let inst = &config.instance;
    let mut shape = rng(instance_seed, Stream::Shape);
    let horizon = match inst.horizon_range {
        Some((lo, hi)) => shape.gen_range(lo..=hi),
        None => inst.level_widths.len(),
    };
    let rho_target = match inst.rho_range {
        Some((lo, hi)) => shape.gen_range(lo..=hi),
        None => inst.rho_target,
    };
    let d = match inst.d_range {
        Some((lo, hi)) => shape.gen_range(lo..=hi),
        None => inst.d,
    };
    let widths: Vec<usize> = (0..horizon).map(|h| inst.level_widths[h % inst.level_widths.len()]).collect();
    let mut mdp = gen_mdp(derive(instance_seed, Stream::Mdp), &inst.gen_params(widths, rho_target))?;
    if let (Mode::Stochastic, Some(noise)) = (config.mode, inst.noise) {
        mdp = gen_stochastic_rewards(&mdp, derive(instance_seed, Stream::Noise), noise)?;
    }
    let truth = solve_dp(&mdp)?;
    let realized = if truth.gap.is_finite() { truth.gap.min(1.0) } else { 1.0 };
    let rho = config.agent.rho.unwrap_or(realized);
    Ok(Instance { mdp, truth, rho, d })
}

fn fill_instance(row: &mut Row, inst: &Instance) {
    row.horizon = Some(inst.mdp.horizon());
    row.num_sa_pairs = Some(inst.mdp.num_sa_pairs());
    row.realized_rho = Some(inst.truth.gap);
    row.agent_rho = Some(inst.rho);
    row.v_star_root = Some(inst.truth.v(inst.mdp.initial_state()));
}

fn max_return_error(truth: &GroundTruth, returns: &[(StateId, f64)]) -> f64 {
    returns.iter().fold(0.0_f64, |m, &(s, v)| m.max((v - truth.v(s)).abs()))
}

fn max_label_error(truth: &GroundTruth, labels: &[(SaPair, f64)]) -> f64 {
    labels.iter().fold(0.0_f64, |m, &(sa, y)| m.max((y - truth.q(sa)).abs()))
}

fn witness_error(features: &FeatureMap, theta: &[f64], truth: &GroundTruth, mdp: &DeterministicMdp) -> f64 {
    let theta = DVector::from_column_slice(theta);
    mdp.sa_pairs()
        .map(|sa| (features.phi_vec(sa).dot(&theta) - truth.q(sa)).abs())
        .fold(0.0, f64::max)
}

fn linear_trial(
    config: &ExperimentConfig,
    seed: u64,
    instance_seed: u64,
    deadline: Option<Instant>,
) -> agnosticq_core::Result<Row> {
    let inst = build_instance(config, instance_seed)?;
    let base = config.agent.log_base();
    let delta_target = match config.instance.premise_fraction {
        Some(f) => f * bounds::linear_delta_max(inst.d, inst.rho, base),
        None => config.instance.delta_target,
    };
    let (features, theta) = gen_linear_features(&inst.truth, inst.d, delta_target, derive(instance_seed, Stream::Class))?;
    let planted = witness_error(&features, &theta, &inst.truth, &inst.mdp);
    let searched = compute_approx_error(&LinearClass::new(features.clone()), &inst.truth)?.delta;
    let delta = planted.min(searched);

    let mut row = Row::new(seed, instance_seed);
    fill_instance(&mut row, &inst);
    row.d = Some(inst.d);
    row.realized_delta = Some(delta);
    row.log_base = Some(base);
    row.addition_bound = Some(bounds::addition_bound(inst.d, inst.rho, base));
    row.premise_satisfied = inst.rho <= inst.truth.gap && bounds::linear_premise(inst.d, inst.rho, delta, base);

    let options = LinearOptions { memoize: config.agent.memoize, log_base: base, deadline, ..Default::default() };
    let mut env = Env::new(&inst.mdp, derive(seed, Stream::Rewards));
    let (policy, stats) = learn_linear(&mut env, &features, inst.rho, &options)?;
    let returns: Vec<(StateId, f64)> = stats.explore_returns.iter().map(|r| (r.state, r.value)).collect();
    let labels: Vec<(SaPair, f64)> = stats.labels.iter().map(|l| (l.pair, l.label)).collect();
    row.matched_pi_star = inst.truth.policy_matches(&inst.mdp, &policy);
    row.value_at_root = Some(stats.value_at_root);
    row.max_return_error = Some(max_return_error(&inst.truth, &returns));
    row.max_label_error = Some(max_label_error(&inst.truth, &labels));
    row.data_additions = Some(stats.data_additions);
    row.recur_line_executions = Some(stats.recur_line_executions);
    row.explore_calls = Some(stats.explore_calls);
    row.env_steps = Some(stats.env_steps);
    row.nested_additions = Some(stats.labels.iter().filter(|l| l.nested_additions > 0).count());
    Ok(row)
}

enum Class {
    Finite(FiniteClass),
    Linear(LinearClass),
}

impl Class {
    fn size(&self) -> (Option<usize>, Option<usize>) {
        match self {
            Class::Finite(c) => (None, Some(c.len())),
            Class::Linear(c) => (Some(c.dim()), None),
        }
    }
}

/// Allowed δ for the premise selected by the configuration.
fn delta_max(config: &ExperimentConfig, rho: f64, dim: usize) -> f64 {
    match (config.mode, config.agent.c) {
        (Mode::Stochastic, _) => {
            let dr = config.agent.delta_r.unwrap_or_else(|| bounds::default_delta_r(rho, dim));
            bounds::stochastic_delta_max(rho, dr, dim).max(0.0)
        }
        (_, Some(c)) => bounds::tightened_delta_max(rho, dim, c),
        _ => bounds::general_delta_max(rho, dim),
    }
}

fn eluder_dim(config: &ExperimentConfig, class: &Class, mdp: &DeterministicMdp, eps: f64) -> agnosticq_core::Result<usize> {
    if let Some(k) = config.agent.dim_e {
        return Ok(k);
    }
    match class {
        Class::Finite(c) => eluder_dim_bruteforce(c, &mdp.sa_pairs().collect::<Vec<_>>(), eps),
        Class::Linear(c) => {
            Ok((config.agent.dim_e_constant * c.dim() as f64 * (1.0 / eps).ln()).ceil().max(0.0) as usize)
        }
    }
}

fn general_trial(
    config: &ExperimentConfig,
    seed: u64,
    instance_seed: u64,
    deadline: Option<Instant>,
) -> agnosticq_core::Result<Row> {
    let inst = build_instance(config, instance_seed)?;
    let class_seed = derive(instance_seed, Stream::Class);
    let eps = inst.rho / 4.0;
    let make = |delta: f64| -> agnosticq_core::Result<Class> {
        Ok(match config.instance.class {
            ClassKind::Finite => Class::Finite(gen_finite_class(&inst.truth, config.instance.class_size, delta, class_seed)?),
            ClassKind::Linear => {
                Class::Linear(LinearClass::new(gen_linear_features(&inst.truth, inst.d, delta, class_seed)?.0))
            }
        })
    };
    // The premise depends on dim_E, which depends on the generated class;
    // iterate until the dimension used to size δ is the one realized.
    let (class, dim) = match config.instance.premise_fraction {
        None => {
            let class = make(config.instance.delta_target)?;
            let dim = eluder_dim(config, &class, &inst.mdp, eps)?;
            (class, dim)
        }
        Some(f) => {
            let mut class = make(0.0)?;
            let mut dim = eluder_dim(config, &class, &inst.mdp, eps)?;
            for _ in 0..8 {
                class = make(f * delta_max(config, inst.rho, dim))?;
                let next = eluder_dim(config, &class, &inst.mdp, eps)?;
                if next == dim {
                    break;
                }
                dim = next;
            }
            (class, dim)
        }
    };
    let realized_delta = match &class {
        Class::Finite(c) => compute_approx_error(c, &inst.truth)?.delta,
        Class::Linear(c) => compute_approx_error(c, &inst.truth)?.delta,
    };
    let delta = config.agent.delta.unwrap_or(realized_delta);
    if delta >= inst.rho / 2.0 {
        return Err(Error::InvalidParameter(format!("delta {delta} is not below rho/2 = {}", inst.rho / 2.0)));
    }

    let mut row = Row::new(seed, instance_seed);
    fill_instance(&mut row, &inst);
    (row.d, row.class_size) = class.size();
    row.dim_e = Some(dim);
    row.eps = Some(eps);
    row.realized_delta = Some(realized_delta);
    row.agent_delta = Some(delta);
    row.dataset_bound = Some(bounds::dataset_bound(dim));
    if config.mode == Mode::General {
        row.c = config.agent.c;
        row.dataset_bound_c = config.agent.c.map(|c| bounds::dataset_bound_c(c, dim));
    }
    let consistent = inst.rho <= inst.truth.gap && delta >= realized_delta;

    let stochastic = match config.mode {
        Mode::Stochastic => {
            let dr = config.agent.delta_r.unwrap_or_else(|| bounds::default_delta_r(inst.rho, dim));
            let cfg = StochasticConfig::new(inst.mdp.horizon(), dr, config.agent.p, dim.max(1))?;
            row.delta_r = Some(dr);
            row.p = Some(config.agent.p);
            row.n_samples = Some(cfg.n_samples);
            row.estimate_bound = Some(bounds::estimate_bound(dim, inst.mdp.horizon()));
            row.premise_satisfied = consistent && bounds::stochastic_premise(inst.rho, realized_delta, dr, dim);
            Some(cfg)
        }
        _ => {
            row.premise_satisfied = consistent
                && match config.agent.c {
                    Some(c) => bounds::tightened_premise(inst.rho, realized_delta, dim, c),
                    None => bounds::general_premise(inst.rho, realized_delta, dim),
                };
            None
        }
    };

    let options = GeneralOptions { deadline };
    let mut env = Env::new(&inst.mdp, derive(seed, Stream::Rewards));
    let (policy, stats) = match &class {
        Class::Finite(c) => run_agent(&mut env, c, inst.rho, delta, stochastic.as_ref(), &options)?,
        Class::Linear(c) => run_agent(&mut env, c, inst.rho, delta, stochastic.as_ref(), &options)?,
    };
    let returns: Vec<(StateId, f64)> = stats.explore_returns.iter().map(|r| (r.state, r.value)).collect();
    let labels: Vec<(SaPair, f64)> = stats.labels.iter().map(|l| (l.pair, l.label)).collect();
    row.matched_pi_star = inst.truth.policy_matches(&inst.mdp, &policy);
    row.value_at_root = Some(stats.value_at_root);
    row.max_return_error = Some(max_return_error(&inst.truth, &returns));
    row.max_label_error = Some(max_label_error(&inst.truth, &labels));
    row.y_size = Some(stats.y_size);
    row.oracle_calls = Some(stats.oracle_calls);
    row.explore_calls = Some(stats.explore_calls);
    row.reward_samples = Some(stats.reward_samples);
    row.reward_estimates = Some(stats.estimate_line_executions + stats.on_demand_estimates);
    row.on_demand_estimates = Some(stats.on_demand_estimates);
    row.projected_fits = Some(stats.projected_fits);
    row.env_steps = Some(stats.env_steps);
    Ok(row)
}

fn run_agent<C: HypothesisClass>(
    env: &mut Env<'_>,
    class: &C,
    rho: f64,
    delta: f64,
    stochastic: Option<&StochasticConfig>,
    options: &GeneralOptions,
) -> agnosticq_core::Result<(Policy, GeneralRunStats)> {
    match stochastic {
        Some(cfg) => learn_stochastic(env, class, rho, delta, cfg, options),
        None => learn_general(env, class, rho, delta, options),
    }
}

/// A random finite class on a one-state domain; dimensions at two
/// thresholds, exact and greedy.
fn eluder_trial(config: &ExperimentConfig, seed: u64) -> agnosticq_core::Result<Row> {
    let p = &config.eluder;
    let mut r = rng(seed, Stream::Eluder);
    let k = r.gen_range(1..=p.max_domain);
    let m = r.gen_range(p.min_class..=p.max_class);
    let levels = p.value_levels;
    let functions = (0..m)
        .map(|_| vec![vec![(0..k).map(|_| f64::from(r.gen_range(0..=levels)) / f64::from(levels)).collect()]])
        .collect();
    let class = FiniteClass::new(functions)?;
    let (lo, hi) = p.eps_range;
    let (mut a, mut b) = (r.gen_range(lo..hi), r.gen_range(lo..hi));
    if a > b {
        std::mem::swap(&mut a, &mut b);
    }
    if a == b {
        b = hi;
    }
    let domain: Vec<SaPair> = (0..k).map(|i| SaPair::new(StateId::new(0, 0), i)).collect();
    let mut row = Row::new(seed, seed);
    row.num_sa_pairs = Some(k);
    row.class_size = Some(m);
    row.eps = Some(a);
    row.eps_hi = Some(b);
    row.dim_e = Some(eluder_dim_bruteforce(&class, &domain, a)?);
    row.dim_e_hi = Some(eluder_dim_bruteforce(&class, &domain, b)?);
    row.greedy_dim = Some(eluder_dim_greedy(&class, &domain, a)?);
    row.greedy_dim_hi = Some(eluder_dim_greedy(&class, &domain, b)?);
    row.premise_satisfied = true;
    Ok(row)
}

/// Random draws of `(M, α, x)` with `M` PSD and `xᵀ(M+αI)⁻¹x ≤ 1`; records
/// the worst value of both ridge quantities.
fn verify_trial(config: &ExperimentConfig, seed: u64) -> agnosticq_core::Result<Row> {
    let p = &config.verify;
    let mut r = rng(seed, Stream::Verify);
    let (mut excess, mut quad) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut max_d = 0;
    for _ in 0..p.draws_per_trial {
        let (m, alpha, x) = ridge_draw(&mut r, p.max_dim, p.alpha_range);
        let (sq, q) = ridge_terms(&m, alpha, &x)?;
        excess = excess.max(sq - alpha);
        quad = quad.max(q);
        max_d = max_d.max(x.len());
    }
    let mut row = Row::new(seed, seed);
    row.d = Some(max_d);
    row.ridge_excess = Some(excess);
    row.ridge_quadratic = Some(quad);
    row.premise_satisfied = true;
    Ok(row)
}

/// `M = BBᵀ` for a random `d×k` factor at a random scale, `α` log-uniform,
/// and `x` rescaled into the `(M+αI)⁻¹` unit ball.
pub fn ridge_draw<R: Rng>(r: &mut R, max_dim: usize, alpha_range: (f64, f64)) -> (DMatrix<f64>, f64, DVector<f64>) {
    let d = r.gen_range(1..=max_dim);
    let k = r.gen_range(1..=d);
    let scale = 10f64.powf(r.gen_range(-3.0..2.0));
    let b = DMatrix::from_fn(d, k, |_, _| r.gen_range(-1.0..1.0) * scale);
    let m = &b * b.transpose();
    let alpha = (r.gen_range(alpha_range.0.ln()..=alpha_range.1.ln())).exp();
    let x = DVector::from_fn(d, |_, _| r.gen_range(-1.0..1.0));
    let reg = &m + DMatrix::identity(d, d) * alpha;
    let q = reg.cholesky().map_or(1.0, |c| x.dot(&c.solve(&x)));
    let target: f64 = r.gen_range(0.0..=1.0);
    let x = if q > 0.0 { x * (target / q).sqrt() } else { x };
    (m, alpha, x)
}
