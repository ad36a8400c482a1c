//! Sup-norm approximation error of the linear class.
//!
//! Bisection on δ. Each step asks whether some θ with `‖θ‖₂ ≤ 1` satisfies
//! `|θᵀφᵢ − qᵢ| ≤ δ` at every pair, by solving `min ½‖θ‖²` over the slab
//! constraints and comparing the optimum against the unit ball.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus,
};
use nalgebra::DVector;

use super::{ApproxErrorReport, ApproxWitness, LinearClass};
use crate::env::GroundTruth;
use crate::error::{Error, Result};

/// Bisection stops once the bracket on δ is this narrow.
pub const APPROX_TOL: f64 = 1e-6;

struct Rows {
    phis: Vec<Vec<f64>>,
    targets: Vec<f64>,
    d: usize,
}

impl Rows {
    fn sup_error(&self, theta: &[f64]) -> f64 {
        self.phis
            .iter()
            .zip(&self.targets)
            .map(|(phi, q)| (phi.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() - q).abs())
            .fold(0.0, f64::max)
    }

    /// Minimum-norm θ inside every slab of half-width `delta`, if one exists
    /// within the unit ball.
    fn feasible(&self, delta: f64) -> Result<Option<Vec<f64>>> {
        let n = self.phis.len();
        let d = self.d;
        // Rows 0..n encode  φᵢᵀθ ≤ qᵢ + δ, rows n..2n encode −φᵢᵀθ ≤ −qᵢ + δ.
        let mut colptr = Vec::with_capacity(d + 1);
        let mut rowval = Vec::with_capacity(2 * n * d);
        let mut nzval = Vec::with_capacity(2 * n * d);
        colptr.push(0);
        for j in 0..d {
            for (i, phi) in self.phis.iter().enumerate() {
                if phi[j] != 0.0 {
                    rowval.push(i);
                    nzval.push(phi[j]);
                }
            }
            for (i, phi) in self.phis.iter().enumerate() {
                if phi[j] != 0.0 {
                    rowval.push(n + i);
                    nzval.push(-phi[j]);
                }
            }
            colptr.push(rowval.len());
        }
        let a = CscMatrix::new(2 * n, d, colptr, rowval, nzval);
        let p = CscMatrix::identity(d);
        let q = vec![0.0; d];
        let b: Vec<f64> = self
            .targets
            .iter()
            .map(|t| t + delta)
            .chain(self.targets.iter().map(|t| -t + delta))
            .collect();
        let cones = [NonnegativeConeT(2 * n)];
        let settings = DefaultSettings::<f64> { verbose: false, ..Default::default() };
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
            .map_err(|e| Error::Solver(format!("{e:?}")))?;
        solver.solve();
        match solver.solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                let theta = solver.solution.x.clone();
                let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
                Ok((norm <= 1.0 + 1e-7).then(|| {
                    if norm > 1.0 {
                        theta.iter().map(|x| x / norm).collect()
                    } else {
                        theta
                    }
                }))
            }
            _ => Ok(None),
        }
    }
}

pub(super) fn compute_approx_error_linear(class: &LinearClass, truth: &GroundTruth) -> Result<ApproxErrorReport> {
    let fm = &class.features;
    let mut phis = Vec::new();
    let mut targets = Vec::new();
    for (h, level) in truth.q_star.iter().enumerate() {
        for (s, row) in level.iter().enumerate() {
            for (a, &q) in row.iter().enumerate() {
                let phi = fm
                    .table()
                    .get(h)
                    .and_then(|l| l.get(s))
                    .and_then(|r| r.get(a))
                    .ok_or_else(|| Error::ClassShape("features do not cover Q*".into()))?;
                phis.push(phi.clone());
                targets.push(q);
            }
        }
    }
    let rows = Rows { phis, targets, d: fm.dim() };

    let mut best_theta = vec![0.0; rows.d];
    let mut best = rows.sup_error(&best_theta);
    let (mut lo, mut hi) = (0.0, best);
    while hi - lo > APPROX_TOL {
        let mid = 0.5 * (lo + hi);
        match rows.feasible(mid)? {
            Some(theta) => {
                let err = rows.sup_error(&theta);
                if err < best {
                    best = err;
                    best_theta = theta;
                }
                hi = mid.min(best);
            }
            None => lo = mid,
        }
    }
    Ok(ApproxErrorReport {
        delta: best,
        witness: ApproxWitness::Theta(DVector::from_vec(best_theta).as_slice().to_vec()),
        upper_bound: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{fixtures, solve_dp};
    use crate::funclass::FeatureMap;

    #[test]
    fn exactly_linear_q_has_tiny_error() {
        let mdp = fixtures::two_level_chain();
        let gt = solve_dp(&mdp).unwrap();
        // φ = (q, 0) realizes Q* with θ = e₁.
        let table = gt.q_star.iter().map(|l| l.iter().map(|r| r.iter().map(|&q| vec![q, 0.0]).collect()).collect()).collect();
        let class = LinearClass::new(FeatureMap::new(2, table).unwrap());
        let rep = compute_approx_error_linear(&class, &gt).unwrap();
        assert!(rep.delta <= APPROX_TOL, "{}", rep.delta);
        assert!(rep.upper_bound);
    }

    #[test]
    fn constant_feature_gives_half_range() {
        // φ ≡ 1 (d = 1): best constant fit is the midrange of Q*.
        let gt = solve_dp(&fixtures::bandit(&[0.9, 0.1])).unwrap();
        let table = vec![vec![vec![vec![1.0], vec![1.0]]]];
        let class = LinearClass::new(FeatureMap::new(1, table).unwrap());
        let rep = compute_approx_error_linear(&class, &gt).unwrap();
        assert!((rep.delta - 0.4).abs() <= 2.0 * APPROX_TOL, "{}", rep.delta);
    }
}
