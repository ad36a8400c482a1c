//! Recursive exploration driven by the maximum-uncertainty oracle.
//!
//! At a state the agent queries the oracle with tolerance `2δ` (or
//! `2(δ + δ_r)` with stochastic rewards) and, while the reported disagreement
//! exceeds `|ρ/2 − δ|`, labels the reported action by exploring its successor.
//! It then fits the class to the dataset by least squares and acts greedily.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{Env, Policy, SaPair, StateId};
use crate::error::{Error, Result};
use crate::funclass::{FiniteClass, FitOutcome, HypothesisClass, LinearClass};
use crate::linear_agent::{argmax_lowest, ReturnRecord};
use crate::oracle::Dataset;

/// Least squares over an enumerated class; lowest index wins ties.
pub fn fit_finite(class: &FiniteClass, data: &Dataset) -> FitOutcome<usize> {
    let residual = |i: usize| -> f64 {
        data.entries().iter().map(|e| (class.eval(i, e.pair) - e.label).powi(2)).sum()
    };
    let mut best = FitOutcome { member: 0, residual: residual(0), projected: false };
    for i in 1..class.len() {
        let r = residual(i);
        if r < best.residual {
            best = FitOutcome { member: i, residual: r, projected: false };
        }
    }
    best
}

/// Minimum-norm ordinary least squares, rescaled into the unit ball if needed.
pub fn fit_linear(class: &LinearClass, data: &Dataset) -> FitOutcome<DVector<f64>> {
    let d = class.dim();
    if data.is_empty() {
        return FitOutcome { member: DVector::zeros(d), residual: 0.0, projected: false };
    }
    let phi = DMatrix::from_fn(data.len(), d, |i, j| class.features.phi(data.entries()[i].pair)[j]);
    let y = DVector::from_iterator(data.len(), data.entries().iter().map(|e| e.label));
    let svd = phi.clone().svd(true, true);
    let scale = svd.singular_values.iter().fold(0.0_f64, |m, &v| m.max(v));
    let tol = f64::EPSILON * data.len().max(d) as f64 * scale.max(f64::MIN_POSITIVE);
    let mut theta = svd.solve(&y, tol).expect("both singular factors were computed");
    let norm = theta.norm();
    let projected = norm > LinearClass::NORM_BOUND;
    if projected {
        theta *= LinearClass::NORM_BOUND / norm;
    }
    let residual = (&phi * &theta - y).norm_squared();
    FitOutcome { member: theta, residual, projected }
}

/// Dispatches to the class's own fit.
pub fn least_squares_fit<C: HypothesisClass>(class: &C, data: &Dataset) -> FitOutcome<C::Member> {
    class.least_squares_fit(data)
}

/// `⌈H²/(2δ_r²)·ln(18·dim·H/p)⌉`, at least 1.
pub fn sample_count(horizon: usize, delta_r: f64, p: f64, dim_e: usize) -> Result<u64> {
    if horizon == 0 || dim_e == 0 || !(delta_r > 0.0) || !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sample count needs H, dim >= 1, delta_r > 0 and p in (0, 1); got H={horizon}, dim={dim_e}, delta_r={delta_r}, p={p}"
        )));
    }
    let h = horizon as f64;
    let n = (h * h / (2.0 * delta_r * delta_r) * (18.0 * dim_e as f64 * h / p).ln()).ceil();
    Ok((n as u64).max(1))
}

/// Mean of `n` fresh reward draws at `sa`.
pub fn estimate_reward(env: &mut Env<'_>, sa: SaPair, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    // Running mean: exact when every draw is the same value.
    let mut mean = 0.0;
    for k in 1..=n {
        let x = env.sample_reward(sa)?;
        mean += (x - mean) / k as f64;
    }
    Ok(mean)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticConfig {
    pub delta_r: f64,
    pub p: f64,
    pub dim_e_value: usize,
    pub n_samples: u64,
}

impl StochasticConfig {
    pub fn new(horizon: usize, delta_r: f64, p: f64, dim_e_value: usize) -> Result<Self> {
        let n_samples = sample_count(horizon, delta_r, p, dim_e_value)?;
        Ok(Self { delta_r, p, dim_e_value, n_samples })
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct GeneralOptions {
    #[serde(skip)]
    pub deadline: Option<Instant>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralLabel {
    pub pair: SaPair,
    pub label: f64,
    /// Oracle disagreement that triggered the addition.
    pub uncertainty: f64,
}

/// Fitted values at a state when its action was chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub state: StateId,
    pub fitted: Vec<f64>,
    pub action: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralRunStats {
    pub y_size: usize,
    pub oracle_calls: usize,
    pub explore_calls: usize,
    pub reward_samples: u64,
    /// Executions of the reward-estimation line inside the exploration loop.
    pub estimate_line_executions: usize,
    /// Estimates drawn for the return line because the chosen action was not
    /// estimated in the same call.
    pub on_demand_estimates: usize,
    pub projected_fits: usize,
    pub env_steps: u64,
    pub value_at_root: f64,
    pub learned_policy: Policy,
    pub labels: Vec<GeneralLabel>,
    pub decisions: Vec<Decision>,
    pub explore_returns: Vec<ReturnRecord>,
}

enum Rewards {
    Observed,
    Estimated { n: u64 },
}

struct Agent<'e, 'm, C: HypothesisClass> {
    env: &'e mut Env<'m>,
    class: &'e C,
    threshold: f64,
    tolerance: f64,
    rewards: Rewards,
    data: Dataset,
    cap: usize,
    policy: Policy,
    deadline: Option<Instant>,
    stats: GeneralRunStats,
}

impl<C: HypothesisClass> Agent<'_, '_, C> {
    fn oracle(&mut self, s: StateId) -> (usize, f64) {
        self.stats.oracle_calls += 1;
        let ans = self.class.max_uncertainty(self.env.mdp(), s, self.tolerance, &self.data);
        (ans.action, ans.uncertainty)
    }

    /// Reward at `sa` and the successor, under the configured reward model.
    fn act(&mut self, sa: SaPair) -> Result<(f64, Option<StateId>)> {
        match self.rewards {
            Rewards::Observed => self.env.step(sa),
            Rewards::Estimated { n } => {
                let r = estimate_reward(self.env, sa, n)?;
                self.stats.reward_samples += n;
                Ok((r, self.env.transition(sa)))
            }
        }
    }

    fn explore(&mut self, s: StateId, depth: usize) -> Result<f64> {
        if depth > self.env.mdp().horizon() {
            return Err(Error::RecursionDepth(s));
        }
        if self.deadline.is_some_and(|d| Instant::now() >= d) {
            return Err(Error::Timeout);
        }
        self.stats.explore_calls += 1;
        let mdp = self.env.mdp();
        let last = mdp.is_last_level(s);
        let mut estimated: HashMap<usize, f64> = HashMap::new();

        let (mut a, mut r) = self.oracle(s);
        while r > self.threshold {
            if self.data.len() >= self.cap {
                return Err(Error::ExplorationCap(self.cap));
            }
            let sa = SaPair::new(s, a);
            let (reward, next) = self.act(sa)?;
            if matches!(self.rewards, Rewards::Estimated { .. }) {
                self.stats.estimate_line_executions += 1;
                estimated.insert(a, reward);
            }
            let label = match next {
                Some(n) if !last => self.explore(n, depth + 1)? + reward,
                _ => reward,
            };
            self.data.push(sa, label);
            self.stats.y_size += 1;
            self.stats.labels.push(GeneralLabel { pair: sa, label, uncertainty: r });
            (a, r) = self.oracle(s);
        }

        let fit = self.class.least_squares_fit(&self.data);
        if fit.projected {
            self.stats.projected_fits += 1;
        }
        let fitted: Vec<f64> = mdp.actions_at(s).map(|sa| self.class.value(&fit.member, sa)).collect();
        let best = argmax_lowest(&fitted);
        self.policy.set(s, best);
        self.stats.decisions.push(Decision { state: s, fitted, action: best });

        let sa = SaPair::new(s, best);
        let (reward, next) = match (&self.rewards, estimated.get(&best)) {
            (Rewards::Estimated { .. }, Some(&r)) => (r, self.env.transition(sa)),
            (Rewards::Estimated { .. }, None) => {
                self.stats.on_demand_estimates += 1;
                self.act(sa)?
            }
            (Rewards::Observed, _) => self.act(sa)?,
        };
        let value = match next {
            Some(n) if !last => reward + self.explore(n, depth + 1)?,
            _ => reward,
        };
        self.stats.explore_returns.push(ReturnRecord { state: s, value });
        Ok(value)
    }
}

fn run<C: HypothesisClass>(
    env: &mut Env<'_>,
    class: &C,
    rho: f64,
    delta: f64,
    tolerance: f64,
    rewards: Rewards,
    options: &GeneralOptions,
) -> Result<(Policy, GeneralRunStats)> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidParameter(format!("rho must lie in (0, 1], got {rho}")));
    }
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be non-negative, got {delta}")));
    }
    let mdp = env.mdp();
    class.check_shape(mdp)?;
    let steps_before = env.account().env_steps;
    env.begin_episode();
    let mut agent = Agent {
        env,
        class,
        threshold: (rho / 2.0 - delta).abs(),
        tolerance,
        rewards,
        data: Dataset::new(),
        cap: mdp.num_sa_pairs(),
        policy: Policy::empty(mdp),
        deadline: options.deadline,
        stats: GeneralRunStats {
            y_size: 0,
            oracle_calls: 0,
            explore_calls: 0,
            reward_samples: 0,
            estimate_line_executions: 0,
            on_demand_estimates: 0,
            projected_fits: 0,
            env_steps: 0,
            value_at_root: 0.0,
            learned_policy: Policy::empty(mdp),
            labels: Vec::new(),
            decisions: Vec::new(),
            explore_returns: Vec::new(),
        },
    };
    let root = agent.explore(mdp.initial_state(), 1)?;
    let mut stats = agent.stats;
    stats.value_at_root = root;
    stats.env_steps = agent.env.account().env_steps - steps_before;
    stats.learned_policy = agent.policy.clone();
    Ok((agent.policy, stats))
}

/// Deterministic rewards, oracle tolerance `2δ`.
pub fn learn_general<C: HypothesisClass>(
    env: &mut Env<'_>,
    class: &C,
    rho: f64,
    delta: f64,
    options: &GeneralOptions,
) -> Result<(Policy, GeneralRunStats)> {
    if !env.mdp().has_deterministic_rewards() {
        return Err(Error::InvalidParameter("use the stochastic agent for random rewards".into()));
    }
    run(env, class, rho, delta, 2.0 * delta, Rewards::Observed, options)
}

/// Stochastic rewards estimated from `cfg.n_samples` draws; oracle tolerance
/// `2(δ + δ_r)`, loop threshold `|ρ/2 − δ|`.
pub fn learn_stochastic<C: HypothesisClass>(
    env: &mut Env<'_>,
    class: &C,
    rho: f64,
    delta: f64,
    cfg: &StochasticConfig,
    options: &GeneralOptions,
) -> Result<(Policy, GeneralRunStats)> {
    if cfg.n_samples == 0 || !(cfg.delta_r > 0.0) {
        return Err(Error::InvalidParameter("stochastic config needs n >= 1 and delta_r > 0".into()));
    }
    let tol = 2.0 * (delta + cfg.delta_r);
    run(env, class, rho, delta, tol, Rewards::Estimated { n: cfg.n_samples }, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{fixtures, gen_mdp, gen_stochastic_rewards, solve_dp, GenParams, NoiseFamily, Table};
    use crate::funclass::{eluder_dim_bruteforce, gen_finite_class, FeatureMap};
    use approx::assert_relative_eq;

    fn offset(t: &Table<f64>, c: f64) -> Table<f64> {
        t.iter().map(|l| l.iter().map(|r| r.iter().map(|x| x + c).collect()).collect()).collect()
    }

    #[test]
    fn finite_fit_prefers_exact_member() {
        let mdp = fixtures::two_level_chain();
        let gt = solve_dp(&mdp).unwrap();
        let class = FiniteClass::new(vec![offset(&gt.q_star, 0.3), gt.q_star.clone()]).unwrap();
        let mut y = Dataset::new();
        for sa in mdp.sa_pairs().take(3) {
            y.push(sa, gt.q(sa));
        }
        let fit = fit_finite(&class, &y);
        assert_eq!(fit.member, 1);
        assert_eq!(fit.residual, 0.0);
        assert_relative_eq!(fit_finite(&class.with_function(gt.q_star.clone()), &y).residual, 0.0);
        // Residual of the shifted member is 3 · 0.3².
        let shifted = FiniteClass::new(vec![offset(&gt.q_star, 0.3)]).unwrap();
        assert_relative_eq!(fit_finite(&shifted, &y).residual, 0.27, max_relative = 1e-12);
        assert_eq!(fit_finite(&class, &Dataset::new()).member, 0);
    }

    #[test]
    fn linear_fit_single_point() {
        let mdp = fixtures::bandit(&[0.5, 0.2]);
        let fm = FeatureMap::new(2, vec![vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]]]).unwrap();
        let class = LinearClass::new(fm);
        let mut y = Dataset::new();
        y.push(SaPair::new(mdp.initial_state(), 0), 0.5);
        let fit = fit_linear(&class, &y);
        assert_relative_eq!(fit.member[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(fit.member[1], 0.0, epsilon = 1e-15);
        assert!(fit.residual < 1e-28);
        assert!(!fit.projected);
        // Label 3 at a unit feature forces projection.
        let mut y = Dataset::new();
        y.push(SaPair::new(mdp.initial_state(), 1), 3.0);
        let fit = fit_linear(&class, &y);
        assert!(fit.projected);
        assert_relative_eq!(fit.member.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sample_count_examples() {
        // 3200 · ln(2160) = 24569.16...
        assert_eq!(sample_count(4, 0.05, 0.1, 3).unwrap(), 24570);
        assert_eq!(sample_count(1, 1e6, 0.5, 1).unwrap(), 1);
        assert!(sample_count(4, 0.05, 1.0, 3).is_err());
        assert!(sample_count(4, 0.05, 0.1, 0).is_err());
        // Prefactor H²/(2δ_r²) quadruples with H doubled.
        let pre = |h: f64, dr: f64| h * h / (2.0 * dr * dr);
        assert_eq!(pre(8.0, 0.05), 4.0 * pre(4.0, 0.05));
    }

    #[test]
    fn estimate_reward_cases() {
        let mdp = fixtures::bandit(&[0.3]);
        let mut env = Env::new(&mdp, 0);
        let sa = SaPair::new(mdp.initial_state(), 0);
        assert_eq!(estimate_reward(&mut env, sa, 10).unwrap(), 0.3);
        assert_eq!(estimate_reward(&mut env, sa, 1).unwrap(), 0.3);
        assert_eq!(env.account().reward_samples_drawn, 11);
        assert!(estimate_reward(&mut env, sa, 0).is_err());
    }

    fn small_instance(seed: u64) -> (crate::env::DeterministicMdp, crate::env::GroundTruth) {
        let mdp = gen_mdp(seed, &GenParams::new(vec![1, 2, 2], 2, 0.25)).unwrap();
        let gt = solve_dp(&mdp).unwrap();
        (mdp, gt)
    }

    #[test]
    fn exact_singleton_class() {
        for seed in 0..50 {
            let (mdp, gt) = small_instance(seed);
            let class = FiniteClass::new(vec![gt.q_star.clone()]).unwrap();
            let domain: Vec<SaPair> = mdp.sa_pairs().collect();
            let dim = eluder_dim_bruteforce(&class, &domain, gt.gap / 4.0).unwrap();
            let (policy, stats) = learn_general(&mut Env::new(&mdp, seed), &class, gt.gap, 0.0, &Default::default()).unwrap();
            assert!(gt.policy_matches(&mdp, &policy));
            assert_eq!(stats.value_at_root, gt.v(mdp.initial_state()));
            assert!(stats.y_size <= 18 * dim);
            assert_eq!(stats.y_size, 0);
        }
    }

    #[test]
    fn planted_class_recovers_policy() {
        for seed in 0..30 {
            let (mdp, gt) = small_instance(seed);
            let class = gen_finite_class(&gt, 6, 0.0, seed).unwrap();
            let (policy, stats) = learn_general(&mut Env::new(&mdp, seed), &class, gt.gap, 0.0, &Default::default()).unwrap();
            assert!(gt.policy_matches(&mdp, &policy), "seed {seed}");
            for l in &stats.labels {
                assert_eq!(l.label, gt.q(l.pair));
            }
            for ret in &stats.explore_returns {
                assert_eq!(ret.value, gt.v(ret.state));
            }
            for dec in &stats.decisions {
                for (a, f) in dec.fitted.iter().enumerate() {
                    assert!((f - gt.q(SaPair::new(dec.state, a))).abs() <= gt.gap / 2.0);
                }
            }
        }
    }

    #[test]
    fn linear_class_through_general_agent() {
        let (mdp, gt) = small_instance(3);
        let (fm, _) = crate::funclass::gen_linear_features(&gt, 3, 0.0, 3).unwrap();
        let class = LinearClass::new(fm);
        let (policy, stats) = learn_general(&mut Env::new(&mdp, 0), &class, gt.gap, 0.0, &Default::default()).unwrap();
        assert!(gt.policy_matches(&mdp, &policy));
        assert!((stats.value_at_root - gt.v(mdp.initial_state())).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_stochastic_matches_deterministic() {
        let (mdp, gt) = small_instance(5);
        let class = gen_finite_class(&gt, 4, 0.0, 5).unwrap();
        let cfg = StochasticConfig::new(mdp.horizon(), 0.01, 0.1, 2).unwrap();
        let (p1, s1) = learn_general(&mut Env::new(&mdp, 0), &class, gt.gap, 0.0, &Default::default()).unwrap();
        let (p2, s2) = learn_stochastic(&mut Env::new(&mdp, 0), &class, gt.gap, 0.0, &cfg, &Default::default()).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(s1.y_size, s2.y_size);
        assert_eq!(s1.value_at_root, s2.value_at_root);
        let estimates = (s2.estimate_line_executions + s2.on_demand_estimates) as u64;
        assert_eq!(s2.reward_samples, estimates * cfg.n_samples);
    }

    #[test]
    fn noisy_run_labels_stay_accurate() {
        let params = GenParams { value_ceiling: 0.7, ..GenParams::new(vec![1, 2], 2, 0.3) };
        let base = gen_mdp(2, &params).unwrap();
        let mdp = gen_stochastic_rewards(&base, 2, NoiseFamily::TwoPoint { half_width: 0.1 }).unwrap();
        let gt = solve_dp(&mdp).unwrap();
        let class = FiniteClass::new(vec![gt.q_star.clone(), offset(&gt.q_star, 0.2)]).unwrap();
        let dr = 0.05;
        let cfg = StochasticConfig::new(mdp.horizon(), dr, 0.1, 1).unwrap();
        let (policy, stats) = learn_stochastic(&mut Env::new(&mdp, 9), &class, gt.gap, 0.0, &cfg, &Default::default()).unwrap();
        assert!(gt.policy_matches(&mdp, &policy));
        let h = mdp.horizon() as f64;
        for l in &stats.labels {
            let level = l.pair.state.level as f64 + 1.0;
            assert!((l.label - gt.q(l.pair)).abs() <= dr * (h - level + 1.0) / h);
        }
    }
}
