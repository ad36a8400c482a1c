//! Closed-form premises and counter bounds. Every function here is pure in
//! `(d, ρ, dim_E, c, δ, δ_r, H, p)` so report columns can be re-derived.
//!
//! Eluder dimensions enter the square roots as `max(1, dim_E)`.

pub use agnosticq_core::linear_agent::{addition_bound, linear_gap_requirement};

const SIX_ROOT2: f64 = 6.0 * std::f64::consts::SQRT_2;

fn dim1(dim_e: usize) -> f64 {
    dim_e.max(1) as f64
}

/// Largest δ with `ρ ≥ 4δ(√(2d·log(16/ρ²)) + 1)`.
pub fn linear_delta_max(d: usize, rho: f64, log_base: f64) -> f64 {
    rho / (4.0 * (addition_bound(d, rho, log_base).sqrt() + 1.0))
}

pub fn linear_premise(d: usize, rho: f64, delta: f64, log_base: f64) -> bool {
    rho >= linear_gap_requirement(d, rho, delta, log_base)
}

/// Largest δ with `ρ ≥ 6√2·δ·√dim_E`.
pub fn general_delta_max(rho: f64, dim_e: usize) -> f64 {
    rho / (SIX_ROOT2 * dim1(dim_e).sqrt())
}

pub fn general_premise(rho: f64, delta: f64, dim_e: usize) -> bool {
    rho >= SIX_ROOT2 * delta * dim1(dim_e).sqrt()
}

fn tightened_root(dim_e: usize, c: f64) -> f64 {
    ((c * dim1(dim_e) - 1.0) / (c - 1.0)).sqrt()
}

/// Largest δ with `ρ ≥ 4δ·√((c·dim_E − 1)/(c − 1)) + 2δ`.
pub fn tightened_delta_max(rho: f64, dim_e: usize, c: f64) -> f64 {
    rho / (4.0 * tightened_root(dim_e, c) + 2.0)
}

pub fn tightened_premise(rho: f64, delta: f64, dim_e: usize, c: f64) -> bool {
    rho >= 4.0 * delta * tightened_root(dim_e, c) + 2.0 * delta
}

/// Largest δ with `ρ ≥ 6√2(δ + δ_r)√dim_E + 2δ_r`; negative when `δ_r` alone
/// already violates it.
pub fn stochastic_delta_max(rho: f64, delta_r: f64, dim_e: usize) -> f64 {
    (rho - 2.0 * delta_r) / (SIX_ROOT2 * dim1(dim_e).sqrt()) - delta_r
}

pub fn stochastic_premise(rho: f64, delta: f64, delta_r: f64, dim_e: usize) -> bool {
    rho >= SIX_ROOT2 * (delta + delta_r) * dim1(dim_e).sqrt() + 2.0 * delta_r
}

/// `ρ/(24√2·dim_E)`.
pub fn default_delta_r(rho: f64, dim_e: usize) -> f64 {
    rho / (24.0 * std::f64::consts::SQRT_2 * dim1(dim_e))
}

/// `18·dim_E`.
pub fn dataset_bound(dim_e: usize) -> f64 {
    18.0 * dim_e as f64
}

/// `c·dim_E`.
pub fn dataset_bound_c(c: f64, dim_e: usize) -> f64 {
    c * dim_e as f64
}

/// `18·dim_E·H`, the number of estimates covered by the union bound.
pub fn estimate_bound(dim_e: usize, horizon: usize) -> f64 {
    18.0 * dim1(dim_e) * horizon as f64
}
