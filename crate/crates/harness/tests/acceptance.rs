//! Acceptance criteria. Each criterion prints one PASS or FAIL line and the
//! process exits non-zero when any fails.
//!
//! Every check pairs the library result with an oracle written here:
//! optimal values by enumerating all action sequences, Eluder dimensions by
//! sequence enumeration, ridge quantities by the eigenbasis closed form, and the
//! linear oracle by a dense grid.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::Instant;

use agnosticq_core::funclass::eluder_dim_greedy;
use agnosticq_core::linear_agent::ridge_terms;
use agnosticq_core::oracle::Witnesses;
use agnosticq_core::{
    compute_approx_error, eluder_dim_bruteforce, estimate_reward, gen_finite_class, gen_linear_features, gen_mdp,
    gen_stochastic_rewards, learn_general, learn_linear, learn_stochastic, max_uncertainty_finite,
    max_uncertainty_linear, sample_count, solve_dp, Dataset, DeterministicMdp, Env, FeatureMap, FiniteClass,
    GenParams, LinearClass, LinearOptions, NoiseFamily, Policy, RewardSpec, SaPair, StateId, StochasticConfig,
    Table, TwoPoint,
};
use agnosticq_harness::{run_sweep, verify_bounds, ClassKind, ExperimentConfig, Mode, Report};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Oracles

/// V*(s) by enumerating every action sequence.
fn path_value(mdp: &DeterministicMdp, s: StateId) -> f64 {
    mdp.actions_at(s).map(|sa| path_q(mdp, sa)).fold(f64::NEG_INFINITY, f64::max)
}

fn path_q(mdp: &DeterministicMdp, sa: SaPair) -> f64 {
    mdp.mean_reward(sa) + mdp.next_state(sa).map_or(0.0, |n| path_value(mdp, n))
}

/// Smallest `V*(s) − Q*(s, a)` above 1e-9 over all states.
fn path_gap(mdp: &DeterministicMdp) -> f64 {
    mdp.states()
        .flat_map(|s| {
            let v = path_value(mdp, s);
            mdp.actions_at(s).map(move |sa| v - path_q(mdp, sa)).collect::<Vec<_>>()
        })
        .filter(|&g| g > 1e-9)
        .fold(f64::INFINITY, f64::min)
}

/// Walks the policy from the initial state; every chosen action must be optimal.
fn follows_optimal(mdp: &DeterministicMdp, policy: &Policy) -> Result<(), String> {
    let mut s = mdp.initial_state();
    loop {
        let a = policy.0[s.level][s.index].ok_or_else(|| format!("policy undefined at {s:?}"))?;
        let sa = SaPair::new(s, a);
        let (v, q) = (path_value(mdp, s), path_q(mdp, sa));
        ensure(q >= v - 1e-9, || format!("action {a} at {s:?} has Q {q} below V* {v}"))?;
        match mdp.next_state(sa) {
            Some(n) => s = n,
            None => return Ok(()),
        }
    }
}

/// Optimality by the oracle, cross-checked against the library's verdict.
fn check_policy(mdp: &DeterministicMdp, policy: &Policy) -> Result<bool, String> {
    let oracle = follows_optimal(mdp, policy).is_ok();
    let library = solve_dp(mdp).map_err(|e| e.to_string())?.policy_matches(mdp, policy);
    ensure(oracle == library, || format!("oracle says {oracle}, library says {library}"))?;
    Ok(oracle)
}

fn features_error(fm: &FeatureMap, theta: &[f64], mdp: &DeterministicMdp) -> f64 {
    mdp.sa_pairs()
        .map(|sa| (fm.phi(sa).iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() - path_q(mdp, sa)).abs())
        .fold(0.0, f64::max)
}

fn class_error(class: &FiniteClass, mdp: &DeterministicMdp) -> f64 {
    (0..class.len())
        .map(|i| mdp.sa_pairs().map(|sa| (class.eval(i, sa) - path_q(mdp, sa)).abs()).fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min)
}

fn harness_route(cfg: &ExperimentConfig, need_match: bool) -> Result<Report, String> {
    let report = run_sweep(cfg).map_err(|e| e.to_string())?;
    let summary = verify_bounds(&report).map_err(|e| e.to_string())?;
    ensure(summary.pass, || format!("harness verify failed:\n{summary}"))?;
    for row in &report.rows {
        ensure(row.premise_satisfied, || format!("harness seed {} misses the premise", row.seed))?;
        if need_match {
            ensure(row.matched_pi_star, || format!("harness seed {} missed π*", row.seed))?;
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// 1. Exact linear setting

fn random_widths(rng: &mut ChaCha8Rng, horizon: usize) -> Vec<usize> {
    (0..horizon).map(|h| if h == 0 { 1 } else { rng.gen_range(1..=3) }).collect()
}

fn criterion_1() -> Outcome {
    let results: Vec<Result<(usize, f64), String>> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let horizon = 2 + (seed as usize % 5);
            let d = 2 + (seed as usize % 9);
            let rho_target = rng.gen_range(0.1..=0.5);
            let max_actions = rng.gen_range(2..=5);
            let params = GenParams {
                level_widths: random_widths(&mut rng, horizon),
                min_actions: 2,
                max_actions,
                target_gap: rho_target,
                value_ceiling: 1.0,
            };
            let mdp = gen_mdp(seed, &params).map_err(|e| e.to_string())?;
            let truth = solve_dp(&mdp).map_err(|e| e.to_string())?;
            let (fm, theta) = gen_linear_features(&truth, d, 0.0, seed).map_err(|e| e.to_string())?;
            ensure(features_error(&fm, &theta, &mdp) <= 1e-12, || format!("seed {seed}: features not exact"))?;
            let gap = path_gap(&mdp);
            ensure((gap - truth.gap).abs() <= 1e-9 || gap.is_infinite() && truth.gap.is_infinite(), || {
                format!("seed {seed}: gap {gap} vs {}", truth.gap)
            })?;
            let rho = gap.min(1.0);
            let (policy, stats) = learn_linear(&mut Env::new(&mdp, seed), &fm, rho, &LinearOptions::default())
                .map_err(|e| format!("seed {seed}: {e}"))?;
            ensure(check_policy(&mdp, &policy)?, || format!("seed {seed}: policy missed π*"))?;
            let bound = 2.0 * d as f64 * (16.0 / (rho * rho)).ln();
            ensure(stats.data_additions as f64 <= bound, || {
                format!("seed {seed}: {} additions above {bound}", stats.data_additions)
            })?;
            Ok((stats.data_additions, stats.data_additions as f64 / bound))
        })
        .collect();
    let rows: Vec<(usize, f64)> = results.into_iter().collect::<Result<_, _>>()?;

    let mut cfg = ExperimentConfig { mode: Mode::Linear, trials: 100, master_seed: 500, ..Default::default() };
    cfg.instance.level_widths = vec![1, 3, 2];
    cfg.instance.horizon_range = Some((2, 6));
    cfg.instance.d_range = Some((2, 10));
    cfg.instance.rho_range = Some((0.1, 0.5));
    cfg.instance.min_actions = 2;
    cfg.instance.max_actions = 5;
    harness_route(&cfg, true)?;

    let worst = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(format!("100/100 optimal, max additions {} (largest ratio to bound {worst:.3}); harness sweep agrees",
        rows.iter().map(|r| r.0).max().unwrap_or(0)))
}

// ---------------------------------------------------------------------------
// 2. Agnostic linear setting

fn criterion_2() -> Outcome {
    let results: Vec<Result<f64, String>> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
            let horizon = rng.gen_range(2..=4);
            let d = rng.gen_range(2..=6);
            let params = GenParams {
                level_widths: random_widths(&mut rng, horizon),
                min_actions: 2,
                max_actions: rng.gen_range(2..=3),
                target_gap: rng.gen_range(0.2..=0.5),
                value_ceiling: 1.0,
            };
            let mdp = gen_mdp(10_000 + seed, &params).map_err(|e| e.to_string())?;
            let truth = solve_dp(&mdp).map_err(|e| e.to_string())?;
            let rho = path_gap(&mdp).min(1.0);
            let log_term = 2.0 * d as f64 * (16.0 / (rho * rho)).ln();
            let delta_max = rho / (4.0 * (log_term.sqrt() + 1.0));
            let (fm, theta) = gen_linear_features(&truth, d, 0.9 * delta_max, seed).map_err(|e| e.to_string())?;
            let delta = features_error(&fm, &theta, &mdp);
            ensure(delta <= 0.9 * delta_max + 1e-12, || format!("seed {seed}: witness error {delta}"))?;
            ensure(rho >= 4.0 * delta * (log_term.sqrt() + 1.0), || format!("seed {seed}: premise fails"))?;
            let (policy, stats) = learn_linear(&mut Env::new(&mdp, seed), &fm, rho, &LinearOptions::default())
                .map_err(|e| format!("seed {seed}: {e}"))?;
            ensure(check_policy(&mdp, &policy)?, || format!("seed {seed}: policy missed π*"))?;
            let mut worst = 0.0_f64;
            for ret in &stats.explore_returns {
                let err = (ret.value - path_value(&mdp, ret.state)).abs();
                ensure(err <= 1e-9, || format!("seed {seed}: Explore({:?}) off by {err}", ret.state))?;
                worst = worst.max(err);
            }
            Ok(worst)
        })
        .collect();
    let worst = results.into_iter().collect::<Result<Vec<f64>, _>>()?.into_iter().fold(0.0, f64::max);

    let mut cfg = ExperimentConfig { mode: Mode::Linear, trials: 50, master_seed: 20_000, ..Default::default() };
    cfg.instance.level_widths = vec![1, 2, 3];
    cfg.instance.horizon_range = Some((2, 4));
    cfg.instance.d_range = Some((2, 6));
    cfg.instance.rho_range = Some((0.2, 0.5));
    cfg.instance.max_actions = 3;
    cfg.instance.premise_fraction = Some(0.9);
    harness_route(&cfg, true)?;
    Ok(format!("50/50 optimal at 90% of the largest admissible δ, max return error {worst:.1e}; harness sweep agrees"))
}

// ---------------------------------------------------------------------------
// 3. General agent

const SHAPES: [(&[usize], usize); 4] = [(&[1, 2, 2], 2), (&[1, 2], 3), (&[1, 3], 2), (&[1, 2, 2, 1], 2)];

enum Premise {
    Base,
    Tightened(f64),
}

impl Premise {
    fn delta_max(&self, rho: f64, dim: usize) -> f64 {
        let m = dim.max(1) as f64;
        match *self {
            Premise::Base => rho / (6.0 * 2f64.sqrt() * m.sqrt()),
            Premise::Tightened(c) => rho / (4.0 * ((c * m - 1.0) / (c - 1.0)).sqrt() + 2.0),
        }
    }

    fn bound(&self, dim: usize) -> f64 {
        match *self {
            Premise::Base => 18.0 * dim as f64,
            Premise::Tightened(c) => c * dim as f64,
        }
    }
}

struct GeneralCase {
    mdp: DeterministicMdp,
    class: FiniteClass,
    rho: f64,
    delta: f64,
    dim: usize,
}

fn general_case(seed: u64, premise: &Premise) -> Result<GeneralCase, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(30_000 + seed);
    let (widths, actions) = SHAPES[seed as usize % SHAPES.len()];
    let params = GenParams::new(widths.to_vec(), actions, rng.gen_range(0.2..=0.5));
    let mdp = gen_mdp(30_000 + seed, &params).map_err(|e| e.to_string())?;
    let truth = solve_dp(&mdp).map_err(|e| e.to_string())?;
    let domain: Vec<SaPair> = mdp.sa_pairs().collect();
    ensure(domain.len() <= 12, || "domain above 12 pairs".into())?;
    let rho = path_gap(&mdp).min(1.0);
    let size = rng.gen_range(3..=6);
    let dim_of = |c: &FiniteClass| eluder_dim_bruteforce(c, &domain, rho / 4.0).map_err(|e| e.to_string());
    let mut class = gen_finite_class(&truth, size, 0.0, seed).map_err(|e| e.to_string())?;
    let mut dim = dim_of(&class)?;
    let mut settled = false;
    for _ in 0..8 {
        class = gen_finite_class(&truth, size, 0.9 * premise.delta_max(rho, dim), seed).map_err(|e| e.to_string())?;
        let next = dim_of(&class)?;
        if next == dim {
            settled = true;
            break;
        }
        dim = next;
    }
    ensure(settled, || format!("seed {seed}: dimension did not settle"))?;
    let delta = class_error(&class, &mdp);
    let library = compute_approx_error(&class, &truth).map_err(|e| e.to_string())?.delta;
    ensure((delta - library).abs() <= 1e-12, || format!("seed {seed}: δ {delta} vs library {library}"))?;
    ensure(delta <= premise.delta_max(rho, dim), || format!("seed {seed}: premise fails"))?;
    Ok(GeneralCase { mdp, class, rho, delta, dim })
}

fn run_general_suite(premise: Premise, label: &str) -> Result<(usize, f64), String> {
    let results: Vec<Result<(usize, f64), String>> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let case = general_case(seed, &premise)?;
            let (policy, stats) =
                learn_general(&mut Env::new(&case.mdp, seed), &case.class, case.rho, case.delta, &Default::default())
                    .map_err(|e| format!("{label} seed {seed}: {e}"))?;
            ensure(check_policy(&case.mdp, &policy)?, || format!("{label} seed {seed}: policy missed π*"))?;
            let bound = premise.bound(case.dim);
            ensure(stats.y_size as f64 <= bound, || {
                format!("{label} seed {seed}: y_size {} above {bound} (dim {})", stats.y_size, case.dim)
            })?;
            Ok((stats.y_size, case.delta))
        })
        .collect();
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok((rows.iter().map(|r| r.0).max().unwrap_or(0), rows.iter().map(|r| r.1).fold(0.0, f64::max)))
}

fn criterion_3() -> Outcome {
    let (y18, d18) = run_general_suite(Premise::Base, "18·dim")?;
    let (y2, _) = run_general_suite(Premise::Tightened(2.0), "c=2")?;
    let (yc18, _) = run_general_suite(Premise::Tightened(18.0), "c=18")?;
    for c in [None, Some(2.0), Some(18.0)] {
        let mut cfg = ExperimentConfig { mode: Mode::General, trials: 50, master_seed: 40_000, ..Default::default() };
        cfg.instance.rho_range = Some((0.2, 0.5));
        cfg.instance.class_size = 5;
        cfg.instance.premise_fraction = Some(0.9);
        cfg.agent.c = c;
        harness_route(&cfg, true)?;
    }
    Ok(format!(
        "3×50/50 optimal; max y_size {y18} (base), {y2} (c=2), {yc18} (c=18); max δ {d18:.4}; harness sweeps agree"
    ))
}

// ---------------------------------------------------------------------------
// 4. Stochastic rewards

fn criterion_4() -> Outcome {
    let rho_target = 0.3;
    let params = GenParams { value_ceiling: 0.7, ..GenParams::new(vec![1, 2], 2, rho_target) };
    let base = gen_mdp(4, &params).map_err(|e| e.to_string())?;
    let mdp = gen_stochastic_rewards(&base, 4, NoiseFamily::TwoPoint { half_width: 0.1 }).map_err(|e| e.to_string())?;
    ensure(!mdp.has_deterministic_rewards(), || "instance has no reward noise".into())?;
    let truth = solve_dp(&mdp).map_err(|e| e.to_string())?;
    let class = gen_finite_class(&truth, 4, 0.0, 4).map_err(|e| e.to_string())?;
    let rho = path_gap(&mdp).min(1.0);
    let delta = class_error(&class, &mdp);
    let domain: Vec<SaPair> = mdp.sa_pairs().collect();
    let dim = eluder_dim_bruteforce(&class, &domain, rho / 4.0).map_err(|e| e.to_string())?;
    let m = dim.max(1) as f64;
    let h = mdp.horizon() as f64;
    let (p, delta_r) = (0.1, rho / (24.0 * 2f64.sqrt() * m));
    let premise = 6.0 * 2f64.sqrt() * (delta + delta_r) * m.sqrt() + 2.0 * delta_r;
    ensure(rho >= premise, || format!("premise fails: {rho} < {premise}"))?;
    let n = (h * h / (2.0 * delta_r * delta_r) * (18.0 * m * h / p).ln()).ceil() as u64;
    let cfg = StochasticConfig::new(mdp.horizon(), delta_r, p, dim.max(1)).map_err(|e| e.to_string())?;
    ensure(cfg.n_samples == n && sample_count(mdp.horizon(), delta_r, p, dim.max(1)).ok() == Some(n), || {
        format!("sample count {} vs {n}", cfg.n_samples)
    })?;
    let outcomes: Vec<Result<bool, String>> = (0..200u64)
        .into_par_iter()
        .map(|t| {
            let (policy, _) = learn_stochastic(&mut Env::new(&mdp, 50_000 + t), &class, rho, delta, &cfg, &Default::default())
                .map_err(|e| format!("trial {t}: {e}"))?;
            check_policy(&mdp, &policy)
        })
        .collect();
    let hits = outcomes.into_iter().collect::<Result<Vec<bool>, _>>()?.into_iter().filter(|&b| b).count();
    let rate = hits as f64 / 200.0;
    ensure(rate >= 0.85, || format!("success rate {rate} below 0.85"))?;

    let mut hcfg = ExperimentConfig { mode: Mode::Stochastic, trials: 200, master_seed: 60_000, ..Default::default() };
    hcfg.instance_seed = Some(7);
    hcfg.instance.level_widths = vec![1, 2];
    hcfg.instance.rho_target = rho_target;
    hcfg.instance.value_ceiling = 0.7;
    hcfg.instance.noise = Some(NoiseFamily::TwoPoint { half_width: 0.1 });
    hcfg.instance.class = ClassKind::Finite;
    hcfg.agent.p = p;
    let report = harness_route(&hcfg, false)?;
    Ok(format!(
        "success {hits}/200 (n = {n}, dim_E = {dim}, δ_r = {delta_r:.5}); harness sweep rate {:.3}",
        report.summary.success_rate.unwrap_or(0.0)
    ))
}

// ---------------------------------------------------------------------------
// 5. Eluder machinery

fn one_state_domain(k: usize) -> Vec<SaPair> {
    (0..k).map(|a| SaPair::new(StateId::new(0, 0), a)).collect()
}

fn random_class(rng: &mut ChaCha8Rng, m: usize, k: usize) -> FiniteClass {
    let functions: Vec<Table<f64>> = (0..m)
        .map(|_| vec![vec![(0..k).map(|_| f64::from(rng.gen_range(0..=8u32)) / 8.0).collect()]])
        .collect();
    FiniteClass::new(functions).unwrap()
}

/// Longest sequence of distinct points each ε'-independent of its prefix for
/// one common ε' ≥ ε. Feasible ε' values are left endpoints of the
/// independence intervals, so those plus ε are the only candidates.
fn eluder_oracle(class: &FiniteClass, domain: &[SaPair], eps: f64) -> usize {
    let m = class.len();
    let mut candidates = vec![eps];
    let mut best = 0;
    let mut seq = Vec::new();
    fn norms(class: &FiniteClass, seq: &[SaPair], i: usize, j: usize) -> f64 {
        seq.iter().map(|&p| (class.eval(i, p) - class.eval(j, p)).powi(2)).sum::<f64>().sqrt()
    }
    fn independent(class: &FiniteClass, prefix: &[SaPair], x: SaPair, e: f64) -> bool {
        let m = class.len();
        (0..m).any(|i| (0..m).any(|j| norms(class, prefix, i, j) <= e && (class.eval(i, x) - class.eval(j, x)).abs() > e))
    }
    fn extend(class: &FiniteClass, domain: &[SaPair], seq: &mut Vec<SaPair>, cands: &[f64], best: &mut usize) {
        let ok = cands.iter().any(|&e| (0..seq.len()).all(|t| independent(class, &seq[..t], seq[t], e)));
        if !ok {
            return;
        }
        *best = (*best).max(seq.len());
        for &x in domain {
            if !seq.contains(&x) {
                seq.push(x);
                extend(class, domain, seq, cands, best);
                seq.pop();
            }
        }
    }
    // Every prefix norm over every subset is a candidate; enumerate by subset.
    let k = domain.len();
    for mask in 0u32..(1 << k) {
        let sub: Vec<SaPair> = (0..k).filter(|b| mask >> b & 1 == 1).map(|b| domain[b]).collect();
        for i in 0..m {
            for j in 0..m {
                let v = norms(class, &sub, i, j);
                if v >= eps {
                    candidates.push(v);
                }
            }
        }
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    extend(class, domain, &mut seq, &candidates, &mut best);
    best
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(70_000);
    for _ in 0..20 {
        let k = rng.gen_range(1..=10);
        let class = random_class(&mut rng, 1, k);
        for eps in [1e-3, 0.01, 0.1, 0.5, 1.0, 10.0] {
            let b = eluder_dim_bruteforce(&class, &one_state_domain(k), eps).map_err(|e| e.to_string())?;
            let g = eluder_dim_greedy(&class, &one_state_domain(k), eps).map_err(|e| e.to_string())?;
            ensure(b == 0 && g == 0, || format!("singleton class has dimension {b}/{g} at {eps}"))?;
        }
    }
    let mut oracle_checked = 0;
    for t in 0..100 {
        let k = rng.gen_range(1..=10);
        let m = rng.gen_range(2..=6);
        let class = random_class(&mut rng, m, k);
        let domain = one_state_domain(k);
        let (mut a, mut b) = (rng.gen_range(0.01..0.5), rng.gen_range(0.01..0.5));
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        let dim = |e: f64| eluder_dim_bruteforce(&class, &domain, e).map_err(|e| e.to_string());
        let greedy = |e: f64| eluder_dim_greedy(&class, &domain, e).map_err(|e| e.to_string());
        let (da, db) = (dim(a)?, dim(b)?);
        ensure(da >= db, || format!("class {t}: dim({a}) = {da} < dim({b}) = {db}"))?;
        ensure(greedy(a)? <= da && greedy(b)? <= db, || format!("class {t}: greedy above exact"))?;
        if k <= 6 {
            for (e, d) in [(a, da), (b, db)] {
                let o = eluder_oracle(&class, &domain, e);
                ensure(o == d, || format!("class {t}: oracle {o} vs library {d} at {e}"))?;
            }
            oracle_checked += 1;
        }
    }
    let cfg = ExperimentConfig { mode: Mode::Eluder, trials: 100, master_seed: 71_000, ..Default::default() };
    harness_route(&cfg, false)?;
    Ok(format!("singletons 0 everywhere; 100 classes monotone with greedy ≤ exact; {oracle_checked} matched the enumeration oracle"))
}

// ---------------------------------------------------------------------------
// 6. Ridge quantities

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(80_000);
    let (mut worst1, mut worst2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for draw in 0..10_000 {
        let d = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=d);
        let scale = 10f64.powf(rng.gen_range(-3.0..2.0));
        let b = DMatrix::from_fn(d, k, |_, _| rng.gen_range(-1.0..1.0) * scale);
        let m = &b * b.transpose();
        let alpha = rng.gen_range(1e-4f64.ln()..=10f64.ln()).exp();
        let reg = (&m + DMatrix::identity(d, d) * alpha).cholesky().ok_or("M + αI not positive definite")?;
        let raw = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let q = raw.dot(&reg.solve(&raw));
        let x = raw * (rng.gen_range(0.0..=1.0) / q).sqrt();
        // Closed form in the eigenbasis of M.
        let eig = m.clone().symmetric_eigen();
        let c = eig.eigenvectors.transpose() * &x;
        let (mut t1, mut t2, mut z_sq) = (0.0, 0.0, 0.0);
        for (lambda, ci) in eig.eigenvalues.iter().zip(c.iter()) {
            let lambda = lambda.max(0.0);
            let den = (lambda + alpha).powi(2);
            t1 += alpha * alpha / den * ci * ci;
            t2 += lambda / den * ci * ci;
            z_sq += ci * ci / den;
        }
        // Forming zᵀMz in floating point costs about ε·‖M‖·‖z‖².
        let lambda_max = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b));
        let tol = 1e-12 + 1e-12 * d as f64 * (lambda_max + alpha) * z_sq;
        let (l1, l2) = ridge_terms(&m, alpha, &x).map_err(|e| e.to_string())?;
        ensure((t1 - l1).abs() <= tol && (t2 - l2).abs() <= tol, || {
            format!("draw {draw}: eigenbasis ({t1}, {t2}) vs library ({l1}, {l2})")
        })?;
        ensure(t1 <= alpha + 1e-9 && l1 <= alpha + 1e-9, || format!("draw {draw}: {t1} above α = {alpha}"))?;
        ensure(t2 <= 1.0 + 1e-9 && l2 <= 1.0 + 1e-9, || format!("draw {draw}: quadratic form {t2} above 1"))?;
        worst1 = worst1.max(t1 - alpha);
        worst2 = worst2.max(t2);
    }
    let cfg = ExperimentConfig { mode: Mode::Verify, trials: 100, master_seed: 81_000, ..Default::default() };
    harness_route(&cfg, false)?;
    Ok(format!("10^4 draws: max(residual − α) = {worst1:.2e}, max quadratic = {worst2:.6}; harness verify mode agrees"))
}

// ---------------------------------------------------------------------------
// 7. Oracle correctness

/// Dense grid over Δ with ‖Δ‖ ≤ 2 and mean-square disagreement on Y at most δ'².
fn grid_oracle(phis: &[[f64; 2]], data: &[[f64; 2]], dp: f64, step: f64) -> f64 {
    let n = (2.0 / step).round() as i64;
    (-n..=n)
        .into_par_iter()
        .map(|i| {
            let x = i as f64 * step;
            let mut best = 0.0_f64;
            let half = ((4.0 - x * x).max(0.0).sqrt() / step).floor() as i64;
            for j in -half..=half {
                let y = j as f64 * step;
                if !data.is_empty() {
                    let ms = data.iter().map(|p| (p[0] * x + p[1] * y).powi(2)).sum::<f64>() / data.len() as f64;
                    if ms > dp * dp {
                        continue;
                    }
                }
                for p in phis {
                    best = best.max((p[0] * x + p[1] * y).abs());
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(90_000);
    let mut worst_rel = 0.0_f64;
    for q in 0..100 {
        let unit = |rng: &mut ChaCha8Rng| {
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = rng.gen_range(0.5..=1.0);
            [r * ang.cos(), r * ang.sin()]
        };
        let data: Vec<[f64; 2]> = (0..rng.gen_range(0..=3)).map(|_| unit(&mut rng)).collect();
        let query = unit(&mut rng);
        let dp = rng.gen_range(0.1..0.5);
        let mut phis = data.clone();
        phis.push(query);
        let table = vec![vec![phis.iter().map(|p| p.to_vec()).collect::<Vec<_>>()]];
        let mdp = DeterministicMdp::new(
            vec![1],
            vec![vec![phis.len()]],
            vec![],
            vec![vec![vec![RewardSpec::Det(0.0); phis.len()]]],
            0,
        )
        .map_err(|e| e.to_string())?;
        let class = LinearClass::new(FeatureMap::new(2, table).map_err(|e| e.to_string())?);
        let mut y = Dataset::new();
        for a in 0..data.len() {
            y.push(SaPair::new(StateId::new(0, 0), a), 0.0);
        }
        let ans = max_uncertainty_linear(&mdp, StateId::new(0, 0), dp, &y, &class);
        if let Witnesses::Thetas { theta1, theta2 } = &ans.witnesses {
            let delta: Vec<f64> = theta1.iter().zip(theta2).map(|(a, b)| a - b).collect();
            ensure(delta.iter().map(|v| v * v).sum::<f64>().sqrt() <= 2.0 + 1e-9, || format!("query {q}: ‖Δ‖ > 2"))?;
            if !data.is_empty() {
                let ms = data.iter().map(|p| (p[0] * delta[0] + p[1] * delta[1]).powi(2)).sum::<f64>()
                    / data.len() as f64;
                ensure(ms <= dp * dp * (1.0 + 1e-9) + 1e-15, || format!("query {q}: witness violates the data bound"))?;
            }
        } else {
            return Err(format!("query {q}: linear oracle returned function witnesses"));
        }
        let grid = grid_oracle(&phis, &data, dp, 1e-3);
        let rel = (ans.uncertainty - grid).abs() / ans.uncertainty.max(1e-12);
        ensure(rel <= 1e-2, || format!("query {q}: oracle {} vs grid {grid}", ans.uncertainty))?;
        worst_rel = worst_rel.max(rel);
    }

    let mut checked = 0;
    for t in 0..300 {
        let k = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=6);
        let class = random_class(&mut rng, m, k);
        let mdp = DeterministicMdp::new(vec![1], vec![vec![k]], vec![], vec![vec![vec![RewardSpec::Det(0.0); k]]], 0)
            .map_err(|e| e.to_string())?;
        let s = StateId::new(0, 0);
        let mut y = Dataset::new();
        for _ in 0..rng.gen_range(0..=k) {
            y.push(SaPair::new(s, rng.gen_range(0..k)), 0.0);
        }
        let dp = rng.gen_range(0.0..0.5);
        let ans = max_uncertainty_finite(&mdp, s, dp, &y, &class);
        let Witnesses::Functions(i, j) = ans.witnesses else {
            return Err(format!("class {t}: finite oracle returned parameter witnesses"));
        };
        let sum: f64 = y.entries().iter().map(|e| (class.eval(i, e.pair) - class.eval(j, e.pair)).powi(2)).sum();
        ensure(y.is_empty() || sum <= dp * dp * y.len() as f64, || format!("class {t}: witnesses ({i}, {j}) infeasible"))?;
        let at = (class.eval(i, SaPair::new(s, ans.action)) - class.eval(j, SaPair::new(s, ans.action))).abs();
        ensure(at == ans.uncertainty, || format!("class {t}: witnesses give {at}, answer {}", ans.uncertainty))?;
        let mut brute = 0.0_f64;
        for a in 0..m {
            for b in 0..m {
                let ms: f64 = y.entries().iter().map(|e| (class.eval(a, e.pair) - class.eval(b, e.pair)).powi(2)).sum();
                if y.is_empty() || ms <= dp * dp * y.len() as f64 {
                    for act in 0..k {
                        let sa = SaPair::new(s, act);
                        brute = brute.max((class.eval(a, sa) - class.eval(b, sa)).abs());
                    }
                }
            }
        }
        ensure(brute == ans.uncertainty, || format!("class {t}: exhaustive {brute} vs oracle {}", ans.uncertainty))?;
        checked += 1;
    }
    Ok(format!("100 linear queries within {worst_rel:.2e} relative of the grid; {checked} finite witness pairs re-verified"))
}

// ---------------------------------------------------------------------------
// 8. Concentration of the reward estimate

fn criterion_8() -> Outcome {
    let settings: [(usize, f64, f64, f64); 3] = [(3, 0.1, 0.1, 0.5), (2, 0.2, 0.05, 0.3), (4, 0.15, 0.2, 0.8)];
    let mut lines = Vec::new();
    for (s_idx, &(h, delta_r, p_prime, p_hi)) in settings.iter().enumerate() {
        let law = TwoPoint { lo: 0.0, hi: 1.0, p_hi };
        let mdp = DeterministicMdp::new(vec![1], vec![vec![1]], vec![], vec![vec![vec![RewardSpec::TwoPoint(law)]]], 0)
            .map_err(|e| e.to_string())?;
        let hf = h as f64;
        let n = (hf * hf / (2.0 * delta_r * delta_r) * (1.0 / p_prime).ln()).ceil() as u64;
        let sa = SaPair::new(StateId::new(0, 0), 0);
        let mut env = Env::new(&mdp, 100_000 + s_idx as u64);
        let mut exceed = 0;
        for _ in 0..1000 {
            let mean = estimate_reward(&mut env, sa, n).map_err(|e| e.to_string())?;
            if (mean - law.mean()).abs() > delta_r / hf {
                exceed += 1;
            }
        }
        let frac = exceed as f64 / 1000.0;
        let limit = p_prime + 3.0 * (p_prime / 1000.0).sqrt();
        ensure(frac <= limit, || format!("H={h}, δ_r={delta_r}, p'={p_prime}: {frac} above {limit}"))?;
        ensure(env.account().reward_samples_drawn == 1000 * n, || "sample accounting mismatch".into())?;
        lines.push(format!("{frac:.3} ≤ {limit:.3} (n={n})"));
    }
    Ok(lines.join("; "))
}

// ---------------------------------------------------------------------------
// 9. CLI determinism

fn criterion_9() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_agnosticq");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let configs = [
        ("linear", r#"{"mode": "linear", "trials": 6, "instance": {"rho_target": 0.3}}"#),
        ("general", r#"{"mode": "general", "trials": 6, "instance": {"premise_fraction": 0.9}, "agent": {"c": 2.0}}"#),
        (
            "stochastic",
            r#"{"mode": "stochastic", "trials": 4, "instance_seed": 3, "instance": {"level_widths": [1, 2], "value_ceiling": 0.7, "noise": {"two_point": {"half_width": 0.1}}}}"#,
        ),
        ("eluder", r#"{"mode": "eluder", "trials": 8}"#),
        ("verify", r#"{"mode": "verify", "trials": 4}"#),
    ];
    for (name, text) in &configs {
        std::fs::write(root.join(format!("{name}.json")), text).map_err(|e| e.to_string())?;
    }
    let run_all = |tag: &str| -> Result<Vec<(String, Vec<u8>)>, String> {
        let out = root.join(tag);
        std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
        let p = |f: &str| out.join(f).display().to_string();
        let r = |f: &str| root.join(f).display().to_string();
        let mut invocations: Vec<Vec<String>> = vec![
            vec!["gen".into(), "--widths".into(), "1,2,2".into(), "--gap".into(), "0.3".into(), "--out".into(), p("mdp.json"),
                 "--features".into(), "3".into(), "--features-out".into(), p("features.json"),
                 "--class-size".into(), "4".into(), "--class-out".into(), p("class.json")],
            vec!["gen".into(), "--widths".into(), "1,2".into(), "--gap".into(), "0.3".into(), "--value-ceiling".into(), "0.7".into(),
                 "--noise-half-width".into(), "0.1".into(), "--out".into(), p("noisy.json"),
                 "--class-size".into(), "3".into(), "--class-out".into(), p("noisy_class.json")],
            vec!["solve".into(), "--mdp".into(), p("mdp.json")],
            vec!["learn-linear".into(), "--mdp".into(), p("mdp.json"), "--features".into(), p("features.json"), "--rho".into(), "0.3".into(), "--memoize".into()],
            vec!["learn-general".into(), "--mdp".into(), p("mdp.json"), "--class".into(), p("class.json"), "--rho".into(), "0.3".into(), "--delta".into(), "0".into()],
            vec!["learn-stochastic".into(), "--mdp".into(), p("noisy.json"), "--class".into(), p("noisy_class.json"), "--rho".into(), "0.3".into(),
                 "--delta".into(), "0".into(), "--delta-r".into(), "0.05".into(), "--p".into(), "0.1".into()],
            vec!["eluder".into(), "--mdp".into(), p("mdp.json"), "--class".into(), p("class.json"), "--eps".into(), "0.075".into(), "--greedy".into()],
        ];
        for (name, _) in &configs {
            invocations.push(vec!["sweep".into(), "--config".into(), r(&format!("{name}.json")), "--csv".into(), p(&format!("{name}.csv")),
                "--json".into(), p(&format!("{name}_report.json"))]);
            invocations.push(vec!["verify".into(), "--report".into(), p(&format!("{name}_report.json")), "--out".into(), p(&format!("{name}_verify.json"))]);
        }
        let mut outputs = Vec::new();
        for args in &invocations {
            let o = Command::new(bin).args(args).env("AGNOSTICQ_SEED", "11").output().map_err(|e| e.to_string())?;
            ensure(o.status.success(), || format!("{} failed: {}", args.join(" "), String::from_utf8_lossy(&o.stderr)))?;
            outputs.push((args[0].clone(), o.stdout));
        }
        let mut files: Vec<_> = std::fs::read_dir(&out).map_err(|e| e.to_string())?.flatten().map(|e| e.path()).collect();
        files.sort();
        for f in files {
            outputs.push((f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&f).map_err(|e| e.to_string())?));
        }
        Ok(outputs)
    };
    let first = run_all("a")?;
    let second = run_all("b")?;
    ensure(first.len() == second.len(), || "different number of outputs".into())?;
    for ((n1, b1), (n2, b2)) in first.iter().zip(&second) {
        ensure(n1 == n2 && b1 == b2, || format!("{n1} differs between runs"))?;
        ensure(!n1.contains('.') || !b1.is_empty(), || format!("file {n1} is empty"))?;
    }
    Ok(format!("{} outputs byte-identical across two runs", first.len()))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("exact linear setting", criterion_1),
        ("agnostic linear setting", criterion_2),
        ("general agent, finite classes", criterion_3),
        ("stochastic rewards", criterion_4),
        ("Eluder machinery", criterion_5),
        ("ridge property suite", criterion_6),
        ("oracle correctness", criterion_7),
        ("reward concentration", criterion_8),
        ("CLI determinism", criterion_9),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(why) => {
                failures += 1;
                println!("FAIL {} {name}: {why} [{secs:.1} s]", i + 1);
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
