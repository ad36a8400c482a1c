//! Synthetic instances with a prescribed optimality gap.
//!
//! Values are built on a grid of gap-sized units: every state's V* is an
//! integer multiple `m(s)` of the target gap and every suboptimal action loses
//! a whole number of units, so the realized gap is exactly one unit. Rewards
//! are the non-negative unit differences between a state's Q* and its
//! successor's V*, which keeps every per-step reward in [0, 1] and every
//! path sum below `value_ceiling`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DeterministicMdp, RewardSpec, SaPair, StateId, Table, TwoPoint};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub level_widths: Vec<usize>,
    pub min_actions: usize,
    pub max_actions: usize,
    pub target_gap: f64,
    /// Upper bound on V* at every state. Values below 1 leave headroom for
    /// reward noise added later.
    #[serde(default = "default_ceiling")]
    pub value_ceiling: f64,
}

fn default_ceiling() -> f64 {
    1.0
}

impl GenParams {
    pub fn new(level_widths: Vec<usize>, actions: usize, target_gap: f64) -> Self {
        Self {
            level_widths,
            min_actions: actions,
            max_actions: actions,
            target_gap,
            value_ceiling: 1.0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.level_widths.len()
    }
}

pub fn gen_mdp(seed: u64, params: &GenParams) -> Result<DeterministicMdp> {
    let gap = params.target_gap;
    let horizon = params.horizon();
    if horizon == 0 || params.level_widths.iter().any(|&w| w == 0) {
        return Err(Error::InvalidParameter("need H >= 1 and positive level widths".into()));
    }
    if params.min_actions == 0 || params.min_actions > params.max_actions {
        return Err(Error::InvalidParameter("action range must satisfy 1 <= min <= max".into()));
    }
    if !(gap > 0.0 && gap <= 1.0) {
        return Err(Error::Infeasible(format!("target gap {gap} is outside (0, 1]")));
    }
    if !(params.value_ceiling > 0.0 && params.value_ceiling <= 1.0) {
        return Err(Error::InvalidParameter("value ceiling must lie in (0, 1]".into()));
    }
    if params.max_actions < 2 {
        return Err(Error::Infeasible("a finite gap needs states with two actions".into()));
    }
    let max_units = (params.value_ceiling / gap + 1e-9).floor() as u64;
    if max_units < 1 {
        return Err(Error::Infeasible(format!(
            "target gap {gap} exceeds the value ceiling {}",
            params.value_ceiling
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths = &params.level_widths;
    let actions: Vec<Vec<usize>> = widths
        .iter()
        .map(|&w| (0..w).map(|_| rng.gen_range(params.min_actions..=params.max_actions)).collect())
        .collect();
    let transitions: Table<usize> = (0..horizon.saturating_sub(1))
        .map(|h| {
            actions[h]
                .iter()
                .map(|&n| (0..n).map(|_| rng.gen_range(0..widths[h + 1])).collect())
                .collect()
        })
        .collect();

    // V* in units, per level.
    let span = max_units.div_ceil(horizon as u64).max(1);
    let mut units: Vec<Vec<u64>> = vec![Vec::new(); horizon];
    // Units lost by each action relative to V*; 0 marks an optimal action.
    let mut losses: Table<u64> = vec![Vec::new(); horizon];
    // Suboptimal (h, s, a) candidates, for patching in a 1-unit loss.
    let mut candidates = Vec::new();
    let mut has_unit_loss = false;

    let next_units = |units: &Vec<Vec<u64>>, h: usize, s: usize, a: usize| -> u64 {
        if h + 1 < horizon {
            units[h + 1][transitions[h][s][a]]
        } else {
            0
        }
    };

    for h in (0..horizon).rev() {
        let mut level_units = Vec::with_capacity(widths[h]);
        let mut level_losses = Vec::with_capacity(widths[h]);
        for s in 0..widths[h] {
            let n = actions[h][s];
            let m = if h + 1 == horizon {
                rng.gen_range(1..=max_units)
            } else {
                let base = (0..n).map(|a| next_units(&units, h, s, a)).max().unwrap_or(0);
                (base + rng.gen_range(0..=span)).min(max_units)
            };
            let best = rng.gen_range(0..n);
            let row: Vec<u64> = (0..n)
                .map(|a| {
                    if a == best {
                        return 0;
                    }
                    let room = m - next_units(&units, h, s, a);
                    if room == 0 {
                        return 0;
                    }
                    candidates.push((h, s, a));
                    let k = if rng.gen_bool(0.5) { 1 } else { rng.gen_range(1..=room) };
                    has_unit_loss |= k == 1;
                    k
                })
                .collect();
            level_units.push(m);
            level_losses.push(row);
        }
        units[h] = level_units;
        losses[h] = level_losses;
    }

    if !has_unit_loss {
        let &(h, s, a) = candidates.first().ok_or_else(|| {
            Error::Infeasible("no state has a suboptimal action to realize the gap".into())
        })?;
        losses[h][s][a] = 1;
    }

    let rewards: Table<RewardSpec> = (0..horizon)
        .map(|h| {
            (0..widths[h])
                .map(|s| {
                    (0..actions[h][s])
                        .map(|a| {
                            let q_units = units[h][s] - losses[h][s][a];
                            let r_units = q_units - next_units(&units, h, s, a);
                            RewardSpec::Det(gap * r_units as f64)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    DeterministicMdp::new(widths.clone(), actions, transitions, rewards, 0)
}

/// Noise added around deterministic rewards; always mean-preserving.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    /// Two-point law on `{max(0, r - w), min(1, r + w)}`.
    TwoPoint { half_width: f64 },
    /// As `TwoPoint`, with `w` drawn uniformly from `[0, max_half_width]` per pair.
    RandomTwoPoint { max_half_width: f64 },
}

impl NoiseFamily {
    fn half_width<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseFamily::TwoPoint { half_width } => half_width,
            NoiseFamily::RandomTwoPoint { max_half_width } => rng.gen::<f64>() * max_half_width,
        }
    }
}

/// Two-point law with mean `mean` on `[max(0, mean - w), min(cap, mean + w)]`.
pub(crate) fn two_point_around(mean: f64, w: f64, cap: f64) -> Result<RewardSpec> {
    if !(0.0..=1.0).contains(&mean) || mean > cap + 1e-12 {
        return Err(Error::Infeasible(format!(
            "mean {mean} is outside the achievable support [0, {cap}]"
        )));
    }
    let lo = (mean - w).max(0.0);
    let hi = (mean + w).min(cap.min(1.0));
    if w <= 0.0 || hi <= mean || lo >= mean {
        return Ok(RewardSpec::Det(mean));
    }
    let p_hi = ((mean - lo) / (hi - lo)).clamp(0.0, 1.0);
    Ok(RewardSpec::TwoPoint(TwoPoint { lo, hi, p_hi }))
}

/// Replaces each deterministic reward with a bounded, mean-preserving law.
///
/// Upper supports are clipped twice: each step may exceed its mean by at
/// most `(1 - max V*) / H`, and the largest realizable path sum from any
/// state stays at most 1. Instances generated with `value_ceiling = 1` leave
/// no headroom and come back unchanged except for downward-only noise.
pub fn gen_stochastic_rewards(
    mdp: &DeterministicMdp,
    seed: u64,
    family: NoiseFamily,
) -> Result<DeterministicMdp> {
    if !mdp.has_deterministic_rewards() {
        return Err(Error::InvalidParameter("input rewards must be deterministic".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = mdp.horizon();
    // Widths are drawn in pair-layout order, independent of the backward sweep.
    let widths = mdp.table(|_| family.half_width(&mut rng));
    let v_max = super::solve_dp(mdp)?.v_star.iter().flatten().fold(0.0_f64, |m, &v| m.max(v));
    let step_room = (1.0 - v_max).max(0.0) / horizon as f64;
    let mut rewards = mdp.rewards().clone();
    let mut max_tail: Vec<f64> = Vec::new();
    for h in (0..horizon).rev() {
        let mut level_max = vec![0.0_f64; mdp.levels()[h]];
        for (s, slot) in level_max.iter_mut().enumerate() {
            let state = StateId::new(h, s);
            let mut best = f64::NEG_INFINITY;
            for sa in mdp.actions_at(state) {
                let tail = mdp.next_state(sa).map_or(0.0, |n| max_tail[n.index]);
                let mean = mdp.mean_reward(sa);
                let spec = two_point_around(mean, sa.at(&widths), (1.0 - tail).min(mean + step_room))?;
                best = best.max(spec.support().1 + tail);
                set(&mut rewards, sa, spec);
            }
            *slot = best;
        }
        max_tail = level_max;
    }
    mdp.with_rewards(rewards)
}

fn set(table: &mut Table<RewardSpec>, sa: SaPair, spec: RewardSpec) {
    table[sa.state.level][sa.state.index][sa.action] = spec;
}
