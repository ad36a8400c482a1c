//! Layered deterministic episodic MDPs.
//!
//! States are addressed by `(level, index)` with level 0 the initial level.
//! Every transition maps a state at level `h` to a state at level `h + 1`, so
//! level sets are disjoint by construction. Tables keyed by state-action pair
//! are nested `[level][state][action]` vectors, the same layout the JSON
//! serialization uses.

mod generate;
mod solve;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{gen_mdp, gen_stochastic_rewards, GenParams, NoiseFamily};
pub use solve::{solve_dp, GroundTruth, OPTIMALITY_TOL};

/// Per-(level, state, action) table.
pub type Table<T> = Vec<Vec<Vec<T>>>;

/// Slack allowed on path-sum and probability range checks.
const RANGE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId {
    pub level: usize,
    pub index: usize,
}

impl StateId {
    pub fn new(level: usize, index: usize) -> Self {
        Self { level, index }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SaPair {
    pub state: StateId,
    pub action: usize,
}

impl SaPair {
    pub fn new(state: StateId, action: usize) -> Self {
        Self { state, action }
    }

    pub fn at<T: Copy>(&self, table: &Table<T>) -> T {
        table[self.state.level][self.state.index][self.action]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPoint {
    pub lo: f64,
    pub hi: f64,
    pub p_hi: f64,
}

impl TwoPoint {
    pub fn mean(&self) -> f64 {
        self.lo + self.p_hi * (self.hi - self.lo)
    }
}

/// Reward attached to one state-action pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardSpec {
    Det(f64),
    TwoPoint(TwoPoint),
}

impl RewardSpec {
    pub fn mean(&self) -> f64 {
        match self {
            RewardSpec::Det(x) => *x,
            RewardSpec::TwoPoint(tp) => tp.mean(),
        }
    }

    /// Smallest and largest value a sample can take.
    pub fn support(&self) -> (f64, f64) {
        match self {
            RewardSpec::Det(x) => (*x, *x),
            RewardSpec::TwoPoint(tp) => (tp.lo, tp.hi),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, RewardSpec::Det(_))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            RewardSpec::Det(x) => *x,
            RewardSpec::TwoPoint(tp) => {
                if rng.gen::<f64>() < tp.p_hi {
                    tp.hi
                } else {
                    tp.lo
                }
            }
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
struct MdpParts {
    horizon: usize,
    levels: Vec<usize>,
    actions: Vec<Vec<usize>>,
    transitions: Table<usize>,
    rewards: Table<RewardSpec>,
    initial_state: usize,
}

/// A validated layered deterministic MDP. Immutable after construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpParts")]
pub struct DeterministicMdp {
    horizon: usize,
    levels: Vec<usize>,
    actions: Vec<Vec<usize>>,
    transitions: Table<usize>,
    rewards: Table<RewardSpec>,
    initial_state: usize,
}

impl TryFrom<MdpParts> for DeterministicMdp {
    type Error = Error;

    fn try_from(p: MdpParts) -> Result<Self> {
        DeterministicMdp::new(p.levels, p.actions, p.transitions, p.rewards, p.initial_state)
            .and_then(|m| {
                if m.horizon == p.horizon {
                    Ok(m)
                } else {
                    Err(Error::LevelStructure(format!(
                        "horizon {} does not match {} levels",
                        p.horizon, m.horizon
                    )))
                }
            })
    }
}

impl DeterministicMdp {
    /// Builds and validates an MDP. `transitions` has one entry per level
    /// except the last; `rewards` has one per level.
    pub fn new(
        levels: Vec<usize>,
        actions: Vec<Vec<usize>>,
        transitions: Table<usize>,
        rewards: Table<RewardSpec>,
        initial_state: usize,
    ) -> Result<Self> {
        let mdp = Self {
            horizon: levels.len(),
            levels,
            actions,
            transitions,
            rewards,
            initial_state,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::LevelStructure(msg));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.levels.iter().any(|&w| w == 0) {
            return bad("every level needs at least one state".into());
        }
        if self.initial_state >= self.levels[0] {
            return bad(format!("initial state {} not in level 0", self.initial_state));
        }
        if self.actions.len() != self.horizon || self.rewards.len() != self.horizon {
            return bad("actions and rewards need one entry per level".into());
        }
        if self.transitions.len() != self.horizon - 1 {
            return bad(format!(
                "expected transitions for {} levels, found {}",
                self.horizon - 1,
                self.transitions.len()
            ));
        }
        for h in 0..self.horizon {
            let width = self.levels[h];
            if self.actions[h].len() != width || self.rewards[h].len() != width {
                return bad(format!("level {h}: per-state tables must have {width} entries"));
            }
            for s in 0..width {
                let n = self.actions[h][s];
                if n == 0 {
                    return bad(format!("state ({h}, {s}) has no actions"));
                }
                if self.rewards[h][s].len() != n {
                    return bad(format!("state ({h}, {s}): reward table length"));
                }
                if h + 1 < self.horizon {
                    let next = &self.transitions[h][s];
                    if next.len() != n {
                        return bad(format!("state ({h}, {s}): transition table length"));
                    }
                    if let Some(&bad_next) = next.iter().find(|&&t| t >= self.levels[h + 1]) {
                        return bad(format!(
                            "state ({h}, {s}) moves to index {bad_next}, level {} has {} states",
                            h + 1,
                            self.levels[h + 1]
                        ));
                    }
                }
            }
            if h + 1 < self.horizon && self.transitions[h].len() != width {
                return bad(format!("level {h}: transition table width"));
            }
        }
        self.validate_rewards()
    }

    fn validate_rewards(&self) -> Result<()> {
        for sa in self.sa_pairs() {
            let spec = self.reward_spec(sa);
            match spec {
                RewardSpec::Det(x) if !x.is_finite() => {
                    return Err(Error::RewardRange(format!("{sa:?}: non-finite reward")));
                }
                RewardSpec::TwoPoint(tp) => {
                    let ok = tp.lo >= 0.0
                        && tp.hi <= 1.0
                        && tp.lo <= tp.hi
                        && (0.0..=1.0).contains(&tp.p_hi);
                    if !ok {
                        return Err(Error::RewardRange(format!(
                            "{sa:?}: two-point support must lie in [0, 1]"
                        )));
                    }
                }
                _ => {}
            }
        }
        // Extreme realizable reward-to-go from every state, over all paths.
        let mut hi_next: Vec<f64> = Vec::new();
        let mut lo_next: Vec<f64> = Vec::new();
        for h in (0..self.horizon).rev() {
            let mut hi_here = vec![f64::NEG_INFINITY; self.levels[h]];
            let mut lo_here = vec![f64::INFINITY; self.levels[h]];
            for s in 0..self.levels[h] {
                let state = StateId::new(h, s);
                for a in 0..self.actions[h][s] {
                    let sa = SaPair::new(state, a);
                    let (lo, hi) = self.reward_spec(sa).support();
                    let (lo_tail, hi_tail) = match self.next_state(sa) {
                        Some(n) => (lo_next[n.index], hi_next[n.index]),
                        None => (0.0, 0.0),
                    };
                    hi_here[s] = hi_here[s].max(hi + hi_tail);
                    lo_here[s] = lo_here[s].min(lo + lo_tail);
                }
                if hi_here[s] > 1.0 + RANGE_TOL || lo_here[s] < -RANGE_TOL {
                    return Err(Error::RewardRange(format!(
                        "paths from {state:?} realize reward sums in [{}, {}]",
                        lo_here[s], hi_here[s]
                    )));
                }
            }
            hi_next = hi_here;
            lo_next = lo_here;
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn initial_state(&self) -> StateId {
        StateId::new(0, self.initial_state)
    }

    pub fn num_actions(&self, s: StateId) -> usize {
        self.actions[s.level][s.index]
    }

    pub fn is_last_level(&self, s: StateId) -> bool {
        s.level + 1 == self.horizon
    }

    /// `None` at the last level.
    pub fn next_state(&self, sa: SaPair) -> Option<StateId> {
        let h = sa.state.level;
        (h + 1 < self.horizon)
            .then(|| StateId::new(h + 1, self.transitions[h][sa.state.index][sa.action]))
    }

    pub fn reward_spec(&self, sa: SaPair) -> RewardSpec {
        sa.at(&self.rewards)
    }

    pub fn mean_reward(&self, sa: SaPair) -> f64 {
        self.reward_spec(sa).mean()
    }

    pub fn has_deterministic_rewards(&self) -> bool {
        self.sa_pairs().all(|sa| self.reward_spec(sa).is_deterministic())
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(h, &w)| (0..w).map(move |s| StateId::new(h, s)))
    }

    pub fn actions_at(&self, s: StateId) -> impl Iterator<Item = SaPair> {
        (0..self.num_actions(s)).map(move |a| SaPair::new(s, a))
    }

    pub fn sa_pairs(&self) -> impl Iterator<Item = SaPair> + '_ {
        self.states().flat_map(|s| self.actions_at(s))
    }

    pub fn num_sa_pairs(&self) -> usize {
        self.actions.iter().flatten().sum()
    }

    /// A table with the MDP's `[level][state][action]` shape.
    /// Filled in pair-layout order.
    pub fn table<T>(&self, mut fill: impl FnMut(SaPair) -> T) -> Table<T> {
        let mut out = Vec::with_capacity(self.horizon);
        for h in 0..self.horizon {
            let mut level = Vec::with_capacity(self.levels[h]);
            for s in 0..self.levels[h] {
                level.push(self.actions_at(StateId::new(h, s)).map(&mut fill).collect());
            }
            out.push(level);
        }
        out
    }

    /// True when `table` has exactly this MDP's state-action shape.
    pub fn matches_shape<T>(&self, table: &Table<T>) -> bool {
        table.len() == self.horizon
            && table.iter().zip(&self.actions).all(|(level, acts)| {
                level.len() == acts.len() && level.iter().zip(acts).all(|(row, &n)| row.len() == n)
            })
    }

    /// Copy of this MDP with a different reward table (revalidated).
    pub fn with_rewards(&self, rewards: Table<RewardSpec>) -> Result<Self> {
        Self::new(
            self.levels.clone(),
            self.actions.clone(),
            self.transitions.clone(),
            rewards,
            self.initial_state,
        )
    }

    pub fn rewards(&self) -> &Table<RewardSpec> {
        &self.rewards
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(crate::json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Deterministic policy: `[level][state]`, `None` where unspecified.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy(pub Vec<Vec<Option<usize>>>);

impl Policy {
    pub fn empty(mdp: &DeterministicMdp) -> Self {
        Policy(mdp.levels().iter().map(|&w| vec![None; w]).collect())
    }

    pub fn get(&self, s: StateId) -> Option<usize> {
        self.0.get(s.level).and_then(|l| l.get(s.index)).copied().flatten()
    }

    pub fn set(&mut self, s: StateId, action: usize) {
        self.0[s.level][s.index] = Some(action);
    }

    /// States visited from the initial state when following this policy.
    pub fn reachable_path(&self, mdp: &DeterministicMdp) -> Result<Vec<SaPair>> {
        let mut path = Vec::with_capacity(mdp.horizon());
        let mut s = mdp.initial_state();
        loop {
            let a = self.get(s).ok_or(Error::PolicyUndefined(s))?;
            let sa = SaPair::new(s, a);
            path.push(sa);
            match mdp.next_state(sa) {
                Some(n) => s = n,
                None => return Ok(path),
            }
        }
    }
}

/// Interaction counters. All fields only ever increase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeAccount {
    pub episodes_started: u64,
    pub env_steps: u64,
    pub reward_samples_drawn: u64,
}

/// Episodic interaction surface over an MDP with its own reward stream.
pub struct Env<'a> {
    mdp: &'a DeterministicMdp,
    rng: ChaCha8Rng,
    account: EpisodeAccount,
}

impl<'a> Env<'a> {
    pub fn new(mdp: &'a DeterministicMdp, seed: u64) -> Self {
        Self {
            mdp,
            rng: ChaCha8Rng::seed_from_u64(seed),
            account: EpisodeAccount::default(),
        }
    }

    pub fn mdp(&self) -> &'a DeterministicMdp {
        self.mdp
    }

    pub fn account(&self) -> EpisodeAccount {
        self.account
    }

    pub fn begin_episode(&mut self) {
        self.account.episodes_started += 1;
    }

    /// Executes `sa`: draws one reward and returns it with the next state.
    pub fn step(&mut self, sa: SaPair) -> Result<(f64, Option<StateId>)> {
        self.account.env_steps += 1;
        let r = self.sample_reward(sa)?;
        Ok((r, self.mdp.next_state(sa)))
    }

    /// Follows `sa` without drawing a reward.
    pub fn transition(&mut self, sa: SaPair) -> Option<StateId> {
        self.account.env_steps += 1;
        self.mdp.next_state(sa)
    }

    /// One reward draw without moving.
    pub fn sample_reward(&mut self, sa: SaPair) -> Result<f64> {
        self.account.reward_samples_drawn += 1;
        let spec = self.mdp.reward_spec(sa);
        let r = spec.sample(&mut self.rng);
        if !spec.is_deterministic() && !(0.0..=1.0).contains(&r) {
            return Err(Error::SampleOutOfRange { pair: sa, value: r });
        }
        Ok(r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Step {
    pub pair: SaPair,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Rollout {
    pub steps: Vec<Step>,
    pub total_reward: f64,
}

/// Runs one episode of `policy` from the initial state.
pub fn rollout(env: &mut Env<'_>, policy: &Policy) -> Result<Rollout> {
    env.begin_episode();
    let mut steps = Vec::with_capacity(env.mdp().horizon());
    let mut total = 0.0;
    let mut s = env.mdp().initial_state();
    loop {
        let a = policy.get(s).ok_or(Error::PolicyUndefined(s))?;
        let pair = SaPair::new(s, a);
        let (reward, next) = env.step(pair)?;
        total += reward;
        steps.push(Step { pair, reward });
        match next {
            Some(n) => s = n,
            None => break,
        }
    }
    Ok(Rollout { steps, total_reward: total })
}
