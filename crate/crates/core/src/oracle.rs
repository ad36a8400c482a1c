//! Maximum-uncertainty oracle.
//!
//! Given a state, a tolerance δ' and the dataset `Y`, find the action and the
//! pair of class members that disagree most at that state among pairs whose
//! mean squared disagreement on `Y` is at most δ'². An empty `Y` imposes no
//! constraint. The reported uncertainty is the absolute disagreement.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::env::{DeterministicMdp, SaPair, StateId};
use crate::funclass::{FiniteClass, LinearClass};

/// Labels at one pair are considered equal within this distance.
pub const LABEL_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataEntry {
    pub pair: SaPair,
    pub label: f64,
}

/// Append-only list of labelled state-action pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    entries: Vec<DataEntry>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, pair: SaPair, label: f64) {
        self.entries.push(DataEntry { pair, label });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[DataEntry] {
        &self.entries
    }

    pub fn contains(&self, pair: SaPair) -> bool {
        self.entries.iter().any(|e| e.pair == pair)
    }

    /// First pair that appears twice with labels further apart than [`LABEL_TOL`].
    pub fn inconsistent_pair(&self) -> Option<SaPair> {
        for (i, a) in self.entries.iter().enumerate() {
            if self.entries[..i].iter().any(|b| b.pair == a.pair && (b.label - a.label).abs() > LABEL_TOL) {
                return Some(a.pair);
            }
        }
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Witnesses {
    /// Indices into a finite class.
    Functions(usize, usize),
    /// Parameters of two linear members, `theta1 - theta2 = Δ`.
    Thetas { theta1: Vec<f64>, theta2: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleAnswer {
    pub action: usize,
    pub uncertainty: f64,
    pub witnesses: Witnesses,
}

/// Exhaustive search over actions and ordered function pairs.
pub fn max_uncertainty_finite(
    mdp: &DeterministicMdp,
    s: StateId,
    delta_prime: f64,
    data: &Dataset,
    class: &FiniteClass,
) -> OracleAnswer {
    let m = class.len();
    let budget = delta_prime * delta_prime * data.len() as f64;
    let feasible: Vec<bool> = (0..m * m)
        .map(|k| {
            let (i, j) = (k / m, k % m);
            let sum: f64 = data
                .entries()
                .iter()
                .map(|e| (class.eval(i, e.pair) - class.eval(j, e.pair)).powi(2))
                .sum();
            data.is_empty() || sum <= budget
        })
        .collect();
    let mut best = OracleAnswer { action: 0, uncertainty: 0.0, witnesses: Witnesses::Functions(0, 0) };
    for sa in mdp.actions_at(s) {
        for k in (0..m * m).filter(|&k| feasible[k]) {
            let (i, j) = (k / m, k % m);
            let gap = (class.eval(i, sa) - class.eval(j, sa)).abs();
            if gap > best.uncertainty {
                best = OracleAnswer { action: sa.action, uncertainty: gap, witnesses: Witnesses::Functions(i, j) };
            }
        }
    }
    best
}

/// Norm bound on `θ₁ − θ₂` for members of the unit ball.
const DIFF_RADIUS: f64 = 2.0;

/// Eigendecomposition of the empirical second-moment matrix.
struct Moment {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    null_tol: f64,
}

impl Moment {
    fn new(class: &LinearClass, data: &Dataset) -> Self {
        let d = class.dim();
        let mut a = DMatrix::<f64>::zeros(d, d);
        for e in data.entries() {
            let phi = class.features.phi_vec(e.pair);
            a.ger(1.0, &phi, &phi, 1.0);
        }
        a /= data.len() as f64;
        let eig = SymmetricEigen::new(a);
        let top = eig.eigenvalues.iter().fold(0.0_f64, |m, &v| m.max(v));
        let values = eig.eigenvalues.map(|v| v.max(0.0));
        Self { values, vectors: eig.eigenvectors, null_tol: 1e-12 * top.max(1.0) }
    }

    /// `max φᵀu` over `uᵀAu ≤ c`, `‖u‖ ≤ R`. Returns the maximizer.
    fn maximize(&self, phi: &DVector<f64>, c: f64) -> DVector<f64> {
        let r = DIFF_RADIUS;
        let d = phi.len();
        let norm = phi.norm();
        if norm == 0.0 {
            return DVector::zeros(d);
        }
        let coef = self.vectors.tr_mul(phi);
        let null: Vec<bool> = self.values.iter().map(|&l| l <= self.null_tol).collect();
        let lam: Vec<f64> = self.values.iter().zip(&null).map(|(&l, &z)| if z { 0.0 } else { l }).collect();
        let null_norm = coef.iter().zip(&null).filter(|(_, &z)| z).map(|(x, _)| x * x).sum::<f64>().sqrt();
        let to_u = |w: &[f64]| &self.vectors * DVector::from_column_slice(w);

        if c <= 0.0 {
            if null_norm == 0.0 {
                return DVector::zeros(d);
            }
            let w: Vec<f64> = coef.iter().zip(&null).map(|(&x, &z)| if z { r * x / null_norm } else { 0.0 }).collect();
            return to_u(&w);
        }

        // Ball constraint alone.
        let quad: f64 = coef.iter().zip(&lam).map(|(x, l)| l * x * x).sum();
        if r * r * quad / (norm * norm) <= c {
            return phi * (r / norm);
        }

        let null_negligible = null_norm <= 1e-12 * norm;
        let coef: Vec<f64> =
            coef.iter().zip(&null).map(|(&x, &z)| if z && null_negligible { 0.0 } else { x }).collect();

        // Ellipsoid constraint alone: u ∝ A⁺φ.
        if null_negligible {
            let pinv: f64 = coef.iter().zip(&lam).filter(|(_, &l)| l > 0.0).map(|(x, l)| x * x / l).sum();
            let scale = (c / pinv).sqrt();
            let w: Vec<f64> = coef.iter().zip(&lam).map(|(x, &l)| if l > 0.0 { scale * x / l } else { 0.0 }).collect();
            if w.iter().map(|x| x * x).sum::<f64>().sqrt() <= r {
                return to_u(&w);
            }
        }

        // Both constraints active: u ∝ (A + tI)⁻¹φ with uᵀAu / uᵀu = c / R².
        let ratio = |t: f64| {
            let (mut num, mut den) = (0.0, 0.0);
            for (x, l) in coef.iter().zip(&lam) {
                let w = x / (l + t);
                num += l * w * w;
                den += w * w;
            }
            num / den
        };
        let target = c / (r * r);
        let mut hi = 1.0;
        while ratio(hi) < target && hi < 1e300 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if ratio(mid) <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let w: Vec<f64> = coef
            .iter()
            .zip(&lam)
            .map(|(x, &l)| if l + lo > 0.0 { x / (l + lo) } else { 0.0 })
            .collect();
        let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let w: Vec<f64> = w.iter().map(|x| r * x / wn).collect();
        to_u(&w)
    }
}

/// Closed-form search over `Δ = θ₁ − θ₂` with `‖Δ‖ ≤ 2`.
pub fn max_uncertainty_linear(
    mdp: &DeterministicMdp,
    s: StateId,
    delta_prime: f64,
    data: &Dataset,
    class: &LinearClass,
) -> OracleAnswer {
    let d = class.dim();
    let moment = (!data.is_empty()).then(|| Moment::new(class, data));
    let mut best: Option<(usize, f64, DVector<f64>)> = None;
    for sa in mdp.actions_at(s) {
        let phi = class.features.phi_vec(sa);
        let delta = match &moment {
            None => {
                let n = phi.norm();
                if n > 0.0 { &phi * (DIFF_RADIUS / n) } else { DVector::zeros(d) }
            }
            Some(mo) => mo.maximize(&phi, delta_prime * delta_prime),
        };
        let value = phi.dot(&delta).abs();
        if best.as_ref().map_or(true, |b| value > b.1) {
            best = Some((sa.action, value, delta));
        }
    }
    let (action, uncertainty, delta) = best.unwrap_or((0, 0.0, DVector::zeros(d)));
    OracleAnswer {
        action,
        uncertainty,
        witnesses: Witnesses::Thetas {
            theta1: (&delta * 0.5).as_slice().to_vec(),
            theta2: (&delta * -0.5).as_slice().to_vec(),
        },
    }
}
