//! Re-evaluates every closed-form bound from the recorded parameters and
//! checks the counters against it, on premise-satisfying rows only.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bounds;
use crate::config::Mode;
use crate::report::{Report, Row};
use crate::HarnessError;

/// Returned values must equal V* to this tolerance.
pub const RETURN_TOL: f64 = 1e-9;
/// Slack on the ridge quantities.
pub const RIDGE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckLine {
    pub name: String,
    pub rows: usize,
    /// Bound at the worst row.
    pub bound: Option<f64>,
    /// Observed value at the worst row.
    pub observed: Option<f64>,
    pub pass: bool,
    pub offending_seeds: Vec<u64>,
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x}"));
        write!(
            f,
            "{}: bound {} observed {} rows {} {}",
            self.name,
            show(self.bound),
            show(self.observed),
            self.rows,
            if self.pass { "PASS" } else { "FAIL" }
        )?;
        if !self.offending_seeds.is_empty() {
            let seeds: Vec<String> = self.offending_seeds.iter().map(u64::to_string).collect();
            write!(f, " offending seeds {}", seeds.join(","))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub lines: Vec<CheckLine>,
    pub pass: bool,
}

impl fmt::Display for VerifySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in &self.lines {
            writeln!(f, "{line}")?;
        }
        write!(f, "overall: {}", if self.pass { "PASS" } else { "FAIL" })
    }
}

fn need<T>(v: Option<T>, row: &Row, column: &'static str) -> Result<T, HarnessError> {
    v.ok_or(HarnessError::MissingCounter { seed: row.seed, column })
}

/// `observed ≤ bound` on every row; reports the row with the largest excess.
fn counter_check(
    name: &str,
    rows: &[&Row],
    eval: impl Fn(&Row) -> Result<(f64, f64), HarnessError>,
) -> Result<CheckLine, HarnessError> {
    let mut worst: Option<(f64, f64)> = None;
    let mut offending = Vec::new();
    for row in rows {
        let (observed, bound) = eval(row)?;
        if !(observed <= bound) {
            offending.push(row.seed);
        }
        if worst.map_or(true, |(o, b)| observed - bound > o - b) {
            worst = Some((observed, bound));
        }
    }
    Ok(CheckLine {
        name: name.to_string(),
        rows: rows.len(),
        bound: worst.map(|w| w.1),
        observed: worst.map(|w| w.0),
        pass: offending.is_empty(),
        offending_seeds: offending,
    })
}

fn rate_check(name: &str, rows: &[&Row], threshold: f64) -> CheckLine {
    let hits = rows.iter().filter(|r| r.matched_pi_star).count();
    let rate = (!rows.is_empty()).then(|| hits as f64 / rows.len() as f64);
    CheckLine {
        name: name.to_string(),
        rows: rows.len(),
        bound: Some(threshold),
        observed: rate,
        pass: rate.map_or(true, |r| r >= threshold),
        offending_seeds: rows.iter().filter(|r| !r.matched_pi_star).map(|r| r.seed).collect(),
    }
}

/// One line per checked inequality; overall pass iff every line passes.
pub fn verify_bounds(report: &Report) -> Result<VerifySummary, HarnessError> {
    let cfg = &report.config;
    let failed: Vec<u64> = report.rows.iter().filter(|r| !r.is_ok()).map(|r| r.seed).collect();
    let mut lines = vec![CheckLine {
        name: "trials completed".into(),
        rows: report.rows.len(),
        bound: Some(0.0),
        observed: Some(failed.len() as f64),
        pass: failed.is_empty(),
        offending_seeds: failed,
    }];
    let gated: Vec<&Row> = report.rows.iter().filter(|r| r.is_ok() && r.premise_satisfied).collect();
    let returns = |row: &Row| Ok((need(row.max_return_error, row, "max_return_error")?, RETURN_TOL));
    let dataset = |row: &Row| {
        let dim = need(row.dim_e, row, "dim_e")?;
        Ok((need(row.y_size, row, "y_size")? as f64, bounds::dataset_bound(dim)))
    };
    match cfg.mode {
        Mode::Linear => {
            lines.push(counter_check("data_additions <= 2d·log(16/ρ²)", &gated, |row| {
                let d = need(row.d, row, "d")?;
                let rho = need(row.agent_rho, row, "agent_rho")?;
                let base = need(row.log_base, row, "log_base")?;
                Ok((need(row.data_additions, row, "data_additions")? as f64, bounds::addition_bound(d, rho, base)))
            })?);
            lines.push(rate_check("policy matches π*", &gated, 1.0));
            lines.push(counter_check("|Explore(s) − V*(s)|", &gated, returns)?);
        }
        Mode::General => {
            lines.push(counter_check("y_size <= 18·dim_E", &gated, dataset)?);
            if cfg.agent.c.is_some() {
                lines.push(counter_check("y_size <= c·dim_E", &gated, |row| {
                    let c = need(row.c, row, "c")?;
                    let dim = need(row.dim_e, row, "dim_e")?;
                    Ok((need(row.y_size, row, "y_size")? as f64, bounds::dataset_bound_c(c, dim)))
                })?);
            }
            lines.push(rate_check("policy matches π*", &gated, 1.0));
            lines.push(counter_check("|Explore(s) − V*(s)|", &gated, returns)?);
        }
        Mode::Stochastic => {
            lines.push(counter_check("y_size <= 18·dim_E", &gated, dataset)?);
            lines.push(counter_check("reward estimates <= 18·dim_E·H", &gated, |row| {
                let dim = need(row.dim_e, row, "dim_e")?;
                let h = need(row.horizon, row, "horizon")?;
                Ok((need(row.reward_estimates, row, "reward_estimates")? as f64, bounds::estimate_bound(dim, h)))
            })?);
            lines.push(rate_check("success rate", &gated, cfg.min_success_rate));
        }
        Mode::Eluder => {
            lines.push(counter_check("dim_E(eps_hi) <= dim_E(eps)", &gated, |row| {
                Ok((need(row.dim_e_hi, row, "dim_e_hi")? as f64, need(row.dim_e, row, "dim_e")? as f64))
            })?);
            lines.push(counter_check("greedy <= exact", &gated, |row| {
                let lo = need(row.greedy_dim, row, "greedy_dim")? as f64 - need(row.dim_e, row, "dim_e")? as f64;
                let hi = need(row.greedy_dim_hi, row, "greedy_dim_hi")? as f64
                    - need(row.dim_e_hi, row, "dim_e_hi")? as f64;
                Ok((lo.max(hi), 0.0))
            })?);
        }
        Mode::Verify => {
            lines.push(counter_check("‖(M(M+αI)⁻¹−I)x‖² − α", &gated, |row| {
                Ok((need(row.ridge_excess, row, "ridge_excess")?, RIDGE_TOL))
            })?);
            lines.push(counter_check("xᵀ(M+αI)⁻¹M(M+αI)⁻¹x", &gated, |row| {
                Ok((need(row.ridge_quadratic, row, "ridge_quadratic")?, 1.0 + RIDGE_TOL))
            })?);
        }
    }
    let pass = lines.iter().all(|l| l.pass);
    Ok(VerifySummary { lines, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::sweep::run_sweep;

    fn linear_report() -> Report {
        let mut cfg = ExperimentConfig { trials: 5, ..Default::default() };
        cfg.instance.rho_target = 0.3;
        run_sweep(&cfg).unwrap()
    }

    #[test]
    fn clean_sweep_passes() {
        let summary = verify_bounds(&linear_report()).unwrap();
        assert!(summary.pass, "{summary}");
        assert_eq!(summary.lines.len(), 4);
        assert!(summary.lines.iter().all(|l| l.rows == 5));
    }

    #[test]
    fn fabricated_counter_fails_with_seed() {
        let mut report = linear_report();
        report.rows[2].data_additions = Some(10_000);
        let summary = verify_bounds(&report).unwrap();
        assert!(!summary.pass);
        let line = &summary.lines[1];
        assert!(!line.pass);
        assert_eq!(line.offending_seeds, vec![report.rows[2].seed]);
        assert_eq!(line.observed, Some(10_000.0));
        assert!(line.to_string().contains("offending seeds 2"), "{line}");
    }

    #[test]
    fn premise_gating_skips_rows() {
        let mut report = linear_report();
        report.rows[2].data_additions = Some(10_000);
        report.rows[2].matched_pi_star = false;
        report.rows[2].premise_satisfied = false;
        let summary = verify_bounds(&report).unwrap();
        assert!(summary.pass, "{summary}");
        assert_eq!(summary.lines[1].rows, 4);
    }

    #[test]
    fn missing_counter_is_an_error() {
        let mut report = linear_report();
        report.rows[0].data_additions = None;
        assert!(matches!(
            verify_bounds(&report),
            Err(HarnessError::MissingCounter { column: "data_additions", .. })
        ));
    }

    #[test]
    fn success_rate_threshold() {
        let mut report = linear_report();
        report.config.mode = Mode::Stochastic;
        let rows: Vec<&Row> = report.rows.iter().collect();
        assert!(rate_check("r", &rows, 0.85).pass);
        report.rows[0].matched_pi_star = false;
        let rows: Vec<&Row> = report.rows.iter().collect();
        let line = rate_check("r", &rows, 0.85);
        assert!(!line.pass);
        assert_eq!(line.observed, Some(0.8));
    }
}
