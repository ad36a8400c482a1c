//! Function classes over state-action pairs.
//!
//! Two concrete classes are supported: linear functions `θᵀφ(s, a)` with
//! `‖θ‖₂ ≤ 1` over a fixed feature map, and explicit finite lists of value
//! tables. Both implement [`HypothesisClass`], which is what the general
//! agent consumes.

mod approx;
mod eluder;
mod generate;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::env::{DeterministicMdp, GroundTruth, SaPair, StateId, Table};
use crate::error::{Error, Result};
use crate::oracle::{self, Dataset, OracleAnswer};

pub use approx::APPROX_TOL;
pub use eluder::{eluder_dim_bruteforce, eluder_dim_greedy, is_eps_dependent, MAX_BRUTEFORCE_DOMAIN};
pub use generate::{gen_finite_class, gen_linear_features};

const NORM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Deserialize)]
struct FeatureParts {
    d: usize,
    table: Table<Vec<f64>>,
}

/// Feature map `φ(s, a) ∈ R^d` with `‖φ‖₂ ≤ 1` everywhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureParts")]
pub struct FeatureMap {
    d: usize,
    table: Table<Vec<f64>>,
}

impl TryFrom<FeatureParts> for FeatureMap {
    type Error = Error;

    fn try_from(p: FeatureParts) -> Result<Self> {
        FeatureMap::new(p.d, p.table)
    }
}

impl FeatureMap {
    pub fn new(d: usize, table: Table<Vec<f64>>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("feature dimension must be positive".into()));
        }
        for phi in table.iter().flatten().flatten() {
            if phi.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: phi.len() });
            }
            let norm = phi.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm <= 1.0 + NORM_TOL) {
                return Err(Error::InvalidParameter(format!("feature norm {norm} exceeds 1")));
            }
        }
        Ok(Self { d, table })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn phi(&self, sa: SaPair) -> &[f64] {
        &self.table[sa.state.level][sa.state.index][sa.action]
    }

    pub fn phi_vec(&self, sa: SaPair) -> DVector<f64> {
        DVector::from_column_slice(self.phi(sa))
    }

    pub fn table(&self) -> &Table<Vec<f64>> {
        &self.table
    }

    pub fn check_shape(&self, mdp: &DeterministicMdp) -> Result<()> {
        if mdp.matches_shape(&self.table) {
            Ok(())
        } else {
            Err(Error::ClassShape("feature table shape differs from the MDP".into()))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(crate::json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// `{θᵀφ : ‖θ‖₂ ≤ 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClass {
    pub features: FeatureMap,
}

impl LinearClass {
    pub const NORM_BOUND: f64 = 1.0;

    pub fn new(features: FeatureMap) -> Self {
        Self { features }
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn eval(&self, theta: &DVector<f64>, sa: SaPair) -> f64 {
        self.features.phi(sa).iter().zip(theta.iter()).map(|(p, t)| p * t).sum()
    }
}

/// Explicit list of value tables, all shaped like the MDP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FiniteClass {
    functions: Vec<Table<f64>>,
}

impl FiniteClass {
    pub fn new(functions: Vec<Table<f64>>) -> Result<Self> {
        if functions.is_empty() {
            return Err(Error::EmptyClass);
        }
        Ok(Self { functions })
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn functions(&self) -> &[Table<f64>] {
        &self.functions
    }

    pub fn eval(&self, index: usize, sa: SaPair) -> f64 {
        sa.at(&self.functions[index])
    }

    /// Returns a new class with `table` appended.
    pub fn with_function(&self, table: Table<f64>) -> Self {
        let mut functions = self.functions.clone();
        functions.push(table);
        Self { functions }
    }

    pub fn check_shape(&self, mdp: &DeterministicMdp) -> Result<()> {
        if self.functions.is_empty() {
            return Err(Error::EmptyClass);
        }
        match self.functions.iter().position(|f| !mdp.matches_shape(f)) {
            None => Ok(()),
            Some(i) => Err(Error::ClassShape(format!("function {i} has the wrong shape"))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(crate::json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let class: FiniteClass = serde_json::from_str(text)?;
        if class.functions.is_empty() {
            return Err(Error::EmptyClass);
        }
        Ok(class)
    }
}

/// Identifies the member achieving the approximation error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxWitness {
    Member(usize),
    Theta(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxErrorReport {
    pub delta: f64,
    pub witness: ApproxWitness,
    /// Set when `delta` comes from a numerical search and is only an upper bound.
    pub upper_bound: bool,
}

/// Result of least squares over a class.
#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome<M> {
    pub member: M,
    pub residual: f64,
    /// Linear class only: the unconstrained solution left the unit ball and was rescaled.
    pub projected: bool,
}

/// What the general agent needs from a class.
pub trait HypothesisClass {
    type Member: Clone + std::fmt::Debug;

    fn check_shape(&self, mdp: &DeterministicMdp) -> Result<()>;

    fn value(&self, member: &Self::Member, sa: SaPair) -> f64;

    fn least_squares_fit(&self, data: &Dataset) -> FitOutcome<Self::Member>;

    fn max_uncertainty(
        &self,
        mdp: &DeterministicMdp,
        state: StateId,
        tolerance: f64,
        data: &Dataset,
    ) -> OracleAnswer;

    fn approx_error(&self, truth: &GroundTruth) -> Result<ApproxErrorReport>;
}

impl HypothesisClass for FiniteClass {
    type Member = usize;

    fn check_shape(&self, mdp: &DeterministicMdp) -> Result<()> {
        FiniteClass::check_shape(self, mdp)
    }

    fn value(&self, member: &usize, sa: SaPair) -> f64 {
        self.eval(*member, sa)
    }

    fn least_squares_fit(&self, data: &Dataset) -> FitOutcome<usize> {
        crate::general_agent::fit_finite(self, data)
    }

    fn max_uncertainty(
        &self,
        mdp: &DeterministicMdp,
        state: StateId,
        tolerance: f64,
        data: &Dataset,
    ) -> OracleAnswer {
        oracle::max_uncertainty_finite(mdp, state, tolerance, data, self)
    }

    fn approx_error(&self, truth: &GroundTruth) -> Result<ApproxErrorReport> {
        compute_approx_error_finite(self, truth)
    }
}

impl HypothesisClass for LinearClass {
    type Member = DVector<f64>;

    fn check_shape(&self, mdp: &DeterministicMdp) -> Result<()> {
        self.features.check_shape(mdp)
    }

    fn value(&self, member: &DVector<f64>, sa: SaPair) -> f64 {
        self.eval(member, sa)
    }

    fn least_squares_fit(&self, data: &Dataset) -> FitOutcome<DVector<f64>> {
        crate::general_agent::fit_linear(self, data)
    }

    fn max_uncertainty(
        &self,
        mdp: &DeterministicMdp,
        state: StateId,
        tolerance: f64,
        data: &Dataset,
    ) -> OracleAnswer {
        oracle::max_uncertainty_linear(mdp, state, tolerance, data, self)
    }

    fn approx_error(&self, truth: &GroundTruth) -> Result<ApproxErrorReport> {
        approx::compute_approx_error_linear(self, truth)
    }
}

/// Exact `min_f max_(s,a) |f(s, a) - Q*(s, a)|` over the enumerated functions.
pub fn compute_approx_error_finite(class: &FiniteClass, truth: &GroundTruth) -> Result<ApproxErrorReport> {
    if class.is_empty() {
        return Err(Error::EmptyClass);
    }
    let q = truth.q_star.iter().flatten().flatten();
    let (best, delta) = class
        .functions
        .iter()
        .map(|f| {
            f.iter()
                .flatten()
                .flatten()
                .zip(q.clone())
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
        })
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, e)| if e < acc.1 { (i, e) } else { acc });
    Ok(ApproxErrorReport { delta, witness: ApproxWitness::Member(best), upper_bound: false })
}

/// Dispatches on the concrete class.
pub fn compute_approx_error<C: HypothesisClass>(class: &C, truth: &GroundTruth) -> Result<ApproxErrorReport> {
    class.approx_error(truth)
}
