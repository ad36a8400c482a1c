//! Agnostic Q-learning in deterministic episodic MDPs.
//!
//! - [`env`]: layered MDPs, exact ground truth, interaction and generators.
//! - [`funclass`]: linear and finite function classes, approximation error,
//!   ε-dependence and Eluder dimension.
//! - [`oracle`]: the maximum-uncertainty oracle.
//! - [`linear_agent`]: covariance-gated recursive exploration.
//! - [`general_agent`]: oracle-gated exploration, deterministic and stochastic rewards.

pub mod env;
pub mod error;
pub mod funclass;
pub mod general_agent;
pub mod json;
pub mod linear_agent;
pub mod oracle;

pub use env::{
    gen_mdp, gen_stochastic_rewards, rollout, solve_dp, DeterministicMdp, Env, EpisodeAccount, GenParams,
    GroundTruth, NoiseFamily, Policy, RewardSpec, SaPair, StateId, Table, TwoPoint,
};
pub use error::{Error, Result};
pub use funclass::{
    compute_approx_error, eluder_dim_bruteforce, eluder_dim_greedy, gen_finite_class, gen_linear_features,
    is_eps_dependent, ApproxErrorReport, FeatureMap, FiniteClass, HypothesisClass, LinearClass,
};
pub use general_agent::{
    estimate_reward, learn_general, learn_stochastic, least_squares_fit, sample_count, GeneralOptions,
    GeneralRunStats, StochasticConfig,
};
pub use linear_agent::{learn_linear, CovarianceState, LinearOptions, LinearRunStats};
pub use oracle::{max_uncertainty_finite, max_uncertainty_linear, Dataset, OracleAnswer};
