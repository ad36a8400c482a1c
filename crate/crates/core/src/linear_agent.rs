//! Recursive exploration with linear least squares.
//!
//! The agent keeps a ridge-initialized covariance `C = (ρ²/16)·I + Σ φφᵀ` and
//! response vector `y = Σ φ·Q̂`. At each action it either trusts the
//! least-squares prediction `φᵀC⁻¹y` (when `φᵀC⁻¹φ ≤ 1`) or follows the
//! action and recurses to obtain an exact label.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::env::{Env, Policy, SaPair, StateId};
use crate::error::{Error, Result};
use crate::funclass::FeatureMap;

/// How the Cholesky factor follows rank-one additions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorUpdate {
    /// Rank-one update, with a full refactorization every [`REFACTOR_EVERY`] additions.
    #[default]
    RankOne,
    /// Refactor from scratch after every addition.
    Full,
}

pub const REFACTOR_EVERY: usize = 64;

#[derive(Clone, Debug)]
pub struct CovarianceState {
    c: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    y: DVector<f64>,
    ridge: f64,
    log_det: f64,
    additions: usize,
    update: FactorUpdate,
}

impl CovarianceState {
    /// `C = (ρ²/16)·I`, `y = 0`.
    pub fn new(d: usize, rho: f64) -> Result<Self> {
        Self::with_ridge(d, rho * rho / 16.0, FactorUpdate::default())
    }

    pub fn with_ridge(d: usize, ridge: f64, update: FactorUpdate) -> Result<Self> {
        if d == 0 || !(ridge > 0.0) {
            return Err(Error::InvalidParameter("need d >= 1 and a positive ridge".into()));
        }
        let c = DMatrix::identity(d, d) * ridge;
        let chol = Cholesky::new(c.clone()).expect("scaled identity is positive definite");
        Ok(Self { c, chol, y: DVector::zeros(d), ridge, log_det: d as f64 * ridge.ln(), additions: 0, update })
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }

    /// Running `ln det C`, accumulated from the rank-one determinant identity.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn additions(&self) -> usize {
        self.additions
    }

    fn check(&self, phi: &DVector<f64>) -> Result<()> {
        if phi.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: phi.len() });
        }
        Ok(())
    }

    /// `(φᵀC⁻¹φ, φᵀC⁻¹φ ≤ 1)`.
    pub fn uncertainty_gate(&self, phi: &DVector<f64>) -> Result<(f64, bool)> {
        self.check(phi)?;
        let v = phi.dot(&self.chol.solve(phi));
        Ok((v, v <= 1.0))
    }

    /// `φᵀC⁻¹y`.
    pub fn predict_q(&self, phi: &DVector<f64>) -> Result<f64> {
        self.check(phi)?;
        Ok(phi.dot(&self.chol.solve(&self.y)))
    }

    /// Adds `φφᵀ` to `C` and `φ·q` to `y`. Returns the determinant growth
    /// factor `1 + φᵀC⁻¹φ` (with `C` before the update).
    pub fn add_datum(&mut self, phi: &DVector<f64>, q_value: f64) -> Result<f64> {
        self.check(phi)?;
        let factor = 1.0 + phi.dot(&self.chol.solve(phi));
        self.c.ger(1.0, phi, phi, 1.0);
        self.y.axpy(q_value, phi, 1.0);
        self.additions += 1;
        self.log_det += factor.ln();
        let refactor = self.update == FactorUpdate::Full || self.additions % REFACTOR_EVERY == 0;
        if refactor {
            self.chol = Cholesky::new(self.c.clone())
                .ok_or_else(|| Error::Solver("covariance lost positive definiteness".into()))?;
        } else {
            self.chol.rank_one_update(phi, 1.0);
        }
        Ok(factor)
    }
}

/// `2d·log(16/ρ²)` in the given base.
pub fn addition_bound(d: usize, rho: f64, log_base: f64) -> f64 {
    2.0 * d as f64 * (16.0 / (rho * rho)).ln() / log_base.ln()
}

/// `4δ(√(2d·log(16/ρ²)) + 1)`: the smallest gap the analysis covers.
pub fn linear_gap_requirement(d: usize, rho: f64, delta: f64, log_base: f64) -> f64 {
    4.0 * delta * (addition_bound(d, rho, log_base).sqrt() + 1.0)
}

/// The two quantities bounded for PSD `M`, `α > 0` and
/// `x` with `xᵀ(M+αI)⁻¹x ≤ 1`: `‖(M(M+αI)⁻¹ − I)x‖²` (at most `α`) and
/// `xᵀ(M+αI)⁻¹M(M+αI)⁻¹x` (at most 1).
pub fn ridge_terms(m: &DMatrix<f64>, alpha: f64, x: &DVector<f64>) -> Result<(f64, f64)> {
    let d = x.len();
    let reg = m + DMatrix::identity(d, d) * alpha;
    let chol = Cholesky::new(reg).ok_or_else(|| Error::Solver("M + αI is not positive definite".into()))?;
    let z = chol.solve(x);
    // (M + αI)z = x gives Mz − x = −αz without the cancellation.
    Ok((alpha * alpha * z.norm_squared(), z.dot(&(m * &z))))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearOptions {
    pub memoize: bool,
    /// Base of the logarithm in the reported bound.
    pub log_base: f64,
    pub update: FactorUpdate,
    #[serde(skip)]
    pub deadline: Option<Instant>,
}

impl Default for LinearOptions {
    fn default() -> Self {
        Self { memoize: false, log_base: std::f64::consts::E, update: FactorUpdate::default(), deadline: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub pair: SaPair,
    pub label: f64,
    /// `φᵀC⁻¹φ` when the gate was evaluated, before any recursion.
    pub gate_value: f64,
    /// `1 + φᵀC⁻¹φ` at the time of the addition. Data added by the recursion
    /// in between can push this below `1 + gate_value`.
    pub det_factor: f64,
    /// Additions made by the recursion between the gate and this addition.
    pub nested_additions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub pair: SaPair,
    pub prediction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnRecord {
    pub state: StateId,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearRunStats {
    pub recur_line_executions: usize,
    pub data_additions: usize,
    pub explore_calls: usize,
    pub env_steps: u64,
    pub value_at_root: f64,
    pub learned_policy: Policy,
    pub labels: Vec<LabelRecord>,
    pub predictions: Vec<PredictionRecord>,
    pub explore_returns: Vec<ReturnRecord>,
}

struct Agent<'e, 'm> {
    env: &'e mut Env<'m>,
    features: &'e FeatureMap,
    cov: CovarianceState,
    policy: Policy,
    memo: Option<HashMap<StateId, f64>>,
    deadline: Option<Instant>,
    stats: LinearRunStats,
}

impl Agent<'_, '_> {
    fn explore(&mut self, s: StateId, depth: usize) -> Result<f64> {
        if depth > self.env.mdp().horizon() {
            return Err(Error::RecursionDepth(s));
        }
        if self.deadline.is_some_and(|d| Instant::now() >= d) {
            return Err(Error::Timeout);
        }
        if let Some(v) = self.memo.as_ref().and_then(|m| m.get(&s)) {
            return Ok(*v);
        }
        self.stats.explore_calls += 1;
        let mdp = self.env.mdp();
        let last = mdp.is_last_level(s);
        let mut q_hat = Vec::with_capacity(mdp.num_actions(s));
        for sa in mdp.actions_at(s) {
            let phi = self.features.phi_vec(sa);
            let (gate_value, pass) = self.cov.uncertainty_gate(&phi)?;
            let q = if pass {
                let p = self.cov.predict_q(&phi)?;
                self.stats.predictions.push(PredictionRecord { pair: sa, prediction: p });
                p
            } else {
                self.stats.recur_line_executions += 1;
                let before = self.stats.data_additions;
                let (r, next) = self.env.step(sa)?;
                let q = match next {
                    Some(n) if !last => self.explore(n, depth + 1)? + r,
                    _ => r,
                };
                let det_factor = self.cov.add_datum(&phi, q)?;
                let nested_additions = self.stats.data_additions - before;
                self.stats.data_additions += 1;
                self.stats.labels.push(LabelRecord { pair: sa, label: q, gate_value, det_factor, nested_additions });
                q
            };
            q_hat.push(q);
        }
        let best = argmax_lowest(&q_hat);
        self.policy.set(s, best);
        let (r, next) = self.env.step(SaPair::new(s, best))?;
        let value = match next {
            Some(n) if !last => r + self.explore(n, depth + 1)?,
            _ => r,
        };
        self.stats.explore_returns.push(ReturnRecord { state: s, value });
        if let Some(m) = self.memo.as_mut() {
            m.insert(s, value);
        }
        Ok(value)
    }
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = a;
        }
    }
    best
}

/// Runs the linear agent from the initial state.
pub fn learn_linear(
    env: &mut Env<'_>,
    features: &FeatureMap,
    rho: f64,
    options: &LinearOptions,
) -> Result<(Policy, LinearRunStats)> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidParameter(format!("rho must lie in (0, 1], got {rho}")));
    }
    let mdp = env.mdp();
    if !mdp.has_deterministic_rewards() {
        return Err(Error::InvalidParameter("the linear agent needs deterministic rewards".into()));
    }
    features.check_shape(mdp)?;
    let cov = CovarianceState::with_ridge(features.dim(), rho * rho / 16.0, options.update)?;
    let steps_before = env.account().env_steps;
    env.begin_episode();
    let s1 = mdp.initial_state();
    let mut agent = Agent {
        env,
        features,
        cov,
        policy: Policy::empty(mdp),
        memo: options.memoize.then(HashMap::new),
        deadline: options.deadline,
        stats: LinearRunStats {
            recur_line_executions: 0,
            data_additions: 0,
            explore_calls: 0,
            env_steps: 0,
            value_at_root: 0.0,
            learned_policy: Policy::empty(mdp),
            labels: Vec::new(),
            predictions: Vec::new(),
            explore_returns: Vec::new(),
        },
    };
    let root = agent.explore(s1, 1)?;
    let mut stats = agent.stats;
    stats.value_at_root = root;
    stats.env_steps = agent.env.account().env_steps - steps_before;
    stats.learned_policy = agent.policy.clone();
    Ok((agent.policy, stats))
}
