//! Per-trial rows, aggregate summary, and their CSV and JSON forms.
//!
//! CSV columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `seed` | trial seed |
//! | `instance_seed` | seed of the generated instance |
//! | `status` | `ok`, `error` or `timeout` |
//! | `error` | error message for failed trials |
//! | `horizon`, `num_sa_pairs` | instance size |
//! | `d`, `class_size` | feature dimension or number of class members |
//! | `dim_e`, `eps` | Eluder dimension used and the threshold it was taken at |
//! | `realized_rho`, `realized_delta` | gap and approximation error of the instance |
//! | `agent_rho`, `agent_delta`, `delta_r`, `p`, `c`, `log_base` | agent parameters |
//! | `n_samples` | reward draws per estimate |
//! | `premise_satisfied` | whether the guarantee's inequality on `(ρ, δ, δ_r, dim_E)` holds |
//! | `matched_pi_star` | learned policy is optimal at every reachable state |
//! | `value_at_root`, `v_star_root`, `max_return_error` | returned values against V* |
//! | `data_additions`, `recur_line_executions`, `explore_calls` | linear agent counters |
//! | `y_size`, `oracle_calls`, `reward_samples`, `reward_estimates`, `env_steps` | general agent counters |
//! | `addition_bound` | `2d·log(16/ρ²)` |
//! | `dataset_bound` | `18·dim_E` |
//! | `dataset_bound_c` | `c·dim_E` |
//! | `estimate_bound` | `18·dim_E·H` |
//! | `eps_hi`, `dim_e_hi` | Eluder mode: second threshold and its dimension |
//! | `greedy_dim`, `greedy_dim_hi` | Eluder mode: greedy lower bounds at `eps` and `eps_hi` |
//! | `ridge_excess`, `ridge_quadratic` | verify mode: `max(‖(M(M+αI)⁻¹−I)x‖² − α)` and `max xᵀ(M+αI)⁻¹M(M+αI)⁻¹x` |
//! | `wall_ms` | elapsed time, 0 unless timing is enabled |
//! | `max_label_error` | largest `|label − Q*|` over collected data |
//! | `nested_additions` | linear agent: additions made while another addition's label was pending |
//! | `projected_fits`, `on_demand_estimates` | general agent: unit-ball projections and return-line estimates |
//!
//! Reals use 17 significant digits; absent values are empty cells in CSV
//! and `null` in JSON.

use agnosticq_core::json;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::HarnessError;

pub const COLUMNS: [&str; 47] = [
    "seed",
    "instance_seed",
    "status",
    "error",
    "horizon",
    "num_sa_pairs",
    "d",
    "class_size",
    "dim_e",
    "eps",
    "realized_rho",
    "realized_delta",
    "agent_rho",
    "agent_delta",
    "delta_r",
    "p",
    "c",
    "log_base",
    "n_samples",
    "premise_satisfied",
    "matched_pi_star",
    "value_at_root",
    "v_star_root",
    "max_return_error",
    "data_additions",
    "recur_line_executions",
    "explore_calls",
    "y_size",
    "oracle_calls",
    "reward_samples",
    "reward_estimates",
    "env_steps",
    "addition_bound",
    "dataset_bound",
    "dataset_bound_c",
    "estimate_bound",
    "eps_hi",
    "dim_e_hi",
    "greedy_dim",
    "greedy_dim_hi",
    "ridge_excess",
    "ridge_quadratic",
    "wall_ms",
    "max_label_error",
    "nested_additions",
    "projected_fits",
    "on_demand_estimates",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
    Timeout,
}

impl Status {
    fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Error => "error",
            Status::Timeout => "timeout",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub seed: u64,
    pub instance_seed: u64,
    pub status: Status,
    pub error: Option<String>,
    pub horizon: Option<usize>,
    pub num_sa_pairs: Option<usize>,
    pub d: Option<usize>,
    pub class_size: Option<usize>,
    pub dim_e: Option<usize>,
    pub eps: Option<f64>,
    pub realized_rho: Option<f64>,
    pub realized_delta: Option<f64>,
    pub agent_rho: Option<f64>,
    pub agent_delta: Option<f64>,
    pub delta_r: Option<f64>,
    pub p: Option<f64>,
    pub c: Option<f64>,
    pub log_base: Option<f64>,
    pub n_samples: Option<u64>,
    pub premise_satisfied: bool,
    pub matched_pi_star: bool,
    pub value_at_root: Option<f64>,
    pub v_star_root: Option<f64>,
    pub max_return_error: Option<f64>,
    pub data_additions: Option<usize>,
    pub recur_line_executions: Option<usize>,
    pub explore_calls: Option<usize>,
    pub y_size: Option<usize>,
    pub oracle_calls: Option<usize>,
    pub reward_samples: Option<u64>,
    pub reward_estimates: Option<usize>,
    pub env_steps: Option<u64>,
    pub addition_bound: Option<f64>,
    pub dataset_bound: Option<f64>,
    pub dataset_bound_c: Option<f64>,
    pub estimate_bound: Option<f64>,
    pub eps_hi: Option<f64>,
    pub dim_e_hi: Option<usize>,
    pub greedy_dim: Option<usize>,
    pub greedy_dim_hi: Option<usize>,
    pub ridge_excess: Option<f64>,
    pub ridge_quadratic: Option<f64>,
    pub wall_ms: u64,
    /// Largest `|label − Q*|` over dataset entries.
    pub max_label_error: Option<f64>,
    /// Linear agent: additions made inside the recursion of another addition.
    pub nested_additions: Option<usize>,
    pub projected_fits: Option<usize>,
    pub on_demand_estimates: Option<usize>,
}

impl Row {
    pub fn new(seed: u64, instance_seed: u64) -> Self {
        Self {
            seed,
            instance_seed,
            status: Status::Ok,
            error: None,
            horizon: None,
            num_sa_pairs: None,
            d: None,
            class_size: None,
            dim_e: None,
            eps: None,
            realized_rho: None,
            realized_delta: None,
            agent_rho: None,
            agent_delta: None,
            delta_r: None,
            p: None,
            c: None,
            log_base: None,
            n_samples: None,
            premise_satisfied: false,
            matched_pi_star: false,
            value_at_root: None,
            v_star_root: None,
            max_return_error: None,
            data_additions: None,
            recur_line_executions: None,
            explore_calls: None,
            y_size: None,
            oracle_calls: None,
            reward_samples: None,
            reward_estimates: None,
            env_steps: None,
            addition_bound: None,
            dataset_bound: None,
            dataset_bound_c: None,
            estimate_bound: None,
            eps_hi: None,
            dim_e_hi: None,
            greedy_dim: None,
            greedy_dim_hi: None,
            ridge_excess: None,
            ridge_quadratic: None,
            wall_ms: 0,
            max_label_error: None,
            nested_additions: None,
            projected_fits: None,
            on_demand_estimates: None,
        }
    }

    /// Marks the row failed and clears every outcome.
    pub fn fail(seed: u64, instance_seed: u64, status: Status, message: String) -> Self {
        Self { status, error: Some(message), ..Self::new(seed, instance_seed) }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn record(&self) -> Vec<String> {
        fn int<T: ToString>(v: Option<T>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        fn real(v: Option<f64>) -> String {
            v.map(|x| if x.is_finite() { json::format_real(x) } else { x.to_string() }).unwrap_or_default()
        }
        vec![
            self.seed.to_string(),
            self.instance_seed.to_string(),
            self.status.as_str().to_string(),
            self.error.clone().unwrap_or_default(),
            int(self.horizon),
            int(self.num_sa_pairs),
            int(self.d),
            int(self.class_size),
            int(self.dim_e),
            real(self.eps),
            real(self.realized_rho),
            real(self.realized_delta),
            real(self.agent_rho),
            real(self.agent_delta),
            real(self.delta_r),
            real(self.p),
            real(self.c),
            real(self.log_base),
            int(self.n_samples),
            self.premise_satisfied.to_string(),
            self.matched_pi_star.to_string(),
            real(self.value_at_root),
            real(self.v_star_root),
            real(self.max_return_error),
            int(self.data_additions),
            int(self.recur_line_executions),
            int(self.explore_calls),
            int(self.y_size),
            int(self.oracle_calls),
            int(self.reward_samples),
            int(self.reward_estimates),
            int(self.env_steps),
            real(self.addition_bound),
            real(self.dataset_bound),
            real(self.dataset_bound_c),
            real(self.estimate_bound),
            real(self.eps_hi),
            int(self.dim_e_hi),
            int(self.greedy_dim),
            int(self.greedy_dim_hi),
            real(self.ridge_excess),
            real(self.ridge_quadratic),
            self.wall_ms.to_string(),
            real(self.max_label_error),
            int(self.nested_additions),
            int(self.projected_fits),
            int(self.on_demand_estimates),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    pub ok_rows: usize,
    pub premise_rows: usize,
    /// Premise rows whose policy matched π*.
    pub successes: usize,
    /// `successes / premise_rows`; absent when no row satisfies the premise.
    pub success_rate: Option<f64>,
    pub max_data_additions: Option<usize>,
    pub max_y_size: Option<usize>,
    pub max_reward_samples: Option<u64>,
    pub max_return_error: Option<f64>,
    pub min_addition_bound: Option<f64>,
    pub min_dataset_bound: Option<f64>,
}

fn max_of<T: PartialOrd + Copy>(it: impl Iterator<Item = Option<T>>) -> Option<T> {
    it.flatten().fold(None, |m, x| match m {
        Some(v) if v >= x => Some(v),
        _ => Some(x),
    })
}

fn min_of(it: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    it.flatten().fold(None, |m, x| Some(m.map_or(x, |v: f64| v.min(x))))
}

impl Summary {
    pub fn from_rows(rows: &[Row]) -> Self {
        let premise: Vec<&Row> = rows.iter().filter(|r| r.premise_satisfied).collect();
        let successes = premise.iter().filter(|r| r.is_ok() && r.matched_pi_star).count();
        Self {
            trials: rows.len(),
            ok_rows: rows.iter().filter(|r| r.is_ok()).count(),
            premise_rows: premise.len(),
            successes,
            success_rate: (!premise.is_empty()).then(|| successes as f64 / premise.len() as f64),
            max_data_additions: max_of(rows.iter().map(|r| r.data_additions)),
            max_y_size: max_of(rows.iter().map(|r| r.y_size)),
            max_reward_samples: max_of(rows.iter().map(|r| r.reward_samples)),
            max_return_error: max_of(rows.iter().map(|r| r.max_return_error)),
            min_addition_bound: min_of(rows.iter().map(|r| r.addition_bound)),
            min_dataset_bound: min_of(rows.iter().map(|r| r.dataset_bound)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub rows: Vec<Row>,
    pub summary: Summary,
}

impl Report {
    pub fn new(config: ExperimentConfig, rows: Vec<Row>) -> Self {
        let summary = Summary::from_rows(&rows);
        Self { config, rows, summary }
    }

    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COLUMNS)?;
        for row in &self.rows {
            w.write_record(row.record())?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }
}
