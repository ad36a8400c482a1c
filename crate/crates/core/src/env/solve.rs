use serde::{Deserialize, Serialize};

use super::{DeterministicMdp, Policy, SaPair, StateId, Table};
use crate::error::Result;

/// Actions whose Q* is within this distance of V* count as optimal.
pub const OPTIMALITY_TOL: f64 = 1e-12;

/// Exact Q*, V*, optimal action sets and the optimality gap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub q_star: Table<f64>,
    pub v_star: Vec<Vec<f64>>,
    pub pi_star: Vec<Vec<Vec<usize>>>,
    /// `+inf` when no state has a suboptimal action.
    #[serde(with = "crate::json::infinite_as_null")]
    pub gap: f64,
}

impl GroundTruth {
    pub fn q(&self, sa: SaPair) -> f64 {
        sa.at(&self.q_star)
    }

    pub fn v(&self, s: StateId) -> f64 {
        self.v_star[s.level][s.index]
    }

    pub fn is_optimal(&self, sa: SaPair) -> bool {
        self.pi_star[sa.state.level][sa.state.index].contains(&sa.action)
    }

    /// One optimal action per state (lowest index).
    pub fn greedy_policy(&self) -> Policy {
        Policy(
            self.pi_star
                .iter()
                .map(|level| level.iter().map(|acts| acts.first().copied()).collect())
                .collect(),
        )
    }

    /// True when `policy` picks an optimal action at every state it reaches.
    pub fn policy_matches(&self, mdp: &DeterministicMdp, policy: &Policy) -> bool {
        policy
            .reachable_path(mdp)
            .map(|path| path.iter().all(|&sa| self.is_optimal(sa)))
            .unwrap_or(false)
    }

    pub fn max_abs_q(&self) -> f64 {
        self.q_star.iter().flatten().flatten().fold(0.0_f64, |m, q| m.max(q.abs()))
    }
}

/// Backward induction using mean rewards.
pub fn solve_dp(mdp: &DeterministicMdp) -> Result<GroundTruth> {
    let h_max = mdp.horizon();
    let mut q_star: Table<f64> = vec![Vec::new(); h_max];
    let mut v_star: Vec<Vec<f64>> = vec![Vec::new(); h_max];
    let mut pi_star: Vec<Vec<Vec<usize>>> = vec![Vec::new(); h_max];
    let mut gap = f64::INFINITY;

    for h in (0..h_max).rev() {
        let width = mdp.levels()[h];
        let mut q_level = Vec::with_capacity(width);
        let mut v_level = Vec::with_capacity(width);
        let mut pi_level = Vec::with_capacity(width);
        for s in 0..width {
            let state = StateId::new(h, s);
            let q: Vec<f64> = mdp
                .actions_at(state)
                .map(|sa| {
                    let tail = mdp.next_state(sa).map_or(0.0, |n| v_star[h + 1][n.index]);
                    mdp.mean_reward(sa) + tail
                })
                .collect();
            let v = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut optimal = Vec::new();
            for (a, &qa) in q.iter().enumerate() {
                if v - qa <= OPTIMALITY_TOL {
                    optimal.push(a);
                } else {
                    gap = gap.min(v - qa);
                }
            }
            q_level.push(q);
            v_level.push(v);
            pi_level.push(optimal);
        }
        q_star[h] = q_level;
        v_star[h] = v_level;
        pi_star[h] = pi_level;
    }
    Ok(GroundTruth { q_star, v_star, pi_star, gap })
}
