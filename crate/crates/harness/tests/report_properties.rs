use agnosticq_core::linear_agent::addition_bound;
use agnosticq_harness::{run_sweep, verify_bounds, ExperimentConfig, Mode};
use proptest::prelude::*;

fn config(mode: Mode, seed: u64, trials: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { mode, master_seed: seed, trials, ..Default::default() };
    cfg.instance.rho_target = 0.3;
    if mode == Mode::General {
        cfg.instance.premise_fraction = Some(0.9);
    }
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn reports_are_byte_identical(seed in 0u64..1_000_000, threads in 1usize..5, general in any::<bool>()) {
        let mode = if general { Mode::General } else { Mode::Linear };
        let mut a = config(mode, seed, 6);
        a.parallelism = Some(threads);
        let b = config(mode, seed, 6);
        let (ra, rb) = (run_sweep(&a).unwrap(), run_sweep(&b).unwrap());
        prop_assert_eq!(ra.to_csv().unwrap(), rb.to_csv().unwrap());
        prop_assert_eq!(ra.rows.len(), rb.rows.len());
    }

    #[test]
    fn gated_rows_are_never_checked(seed in 0u64..1_000_000, picks in prop::collection::vec(any::<bool>(), 6)) {
        let mut report = run_sweep(&config(Mode::Linear, seed, 6)).unwrap();
        for (row, &pick) in report.rows.iter_mut().zip(&picks) {
            if pick {
                row.premise_satisfied = false;
                row.matched_pi_star = false;
                row.data_additions = Some(1 << 20);
                row.max_return_error = Some(1.0);
            }
        }
        let summary = verify_bounds(&report).unwrap();
        prop_assert!(summary.pass, "{}", summary);
        let kept = picks.iter().filter(|&&p| !p).count();
        prop_assert!(summary.lines.iter().skip(1).all(|l| l.rows == kept));
    }

    #[test]
    fn bound_columns_rederive(seed in 0u64..1_000_000, general in any::<bool>()) {
        let mode = if general { Mode::General } else { Mode::Linear };
        let mut cfg = config(mode, seed, 4);
        if general {
            cfg.agent.c = Some(3.0);
        }
        let report = run_sweep(&cfg).unwrap();
        for row in &report.rows {
            if general {
                let dim = row.dim_e.unwrap() as f64;
                prop_assert_eq!(row.dataset_bound, Some(18.0 * dim));
                prop_assert_eq!(row.dataset_bound_c, Some(row.c.unwrap() * dim));
            } else {
                let expect = addition_bound(row.d.unwrap(), row.agent_rho.unwrap(), row.log_base.unwrap());
                prop_assert_eq!(row.addition_bound, Some(expect));
            }
        }
    }

    #[test]
    fn estimate_bound_rederives(seed in 0u64..1_000_000) {
        let mut cfg = config(Mode::Stochastic, seed, 2);
        cfg.instance.level_widths = vec![1, 2];
        cfg.instance.value_ceiling = 0.7;
        cfg.instance.noise = Some(agnosticq_core::NoiseFamily::TwoPoint { half_width: 0.1 });
        cfg.agent.delta_r = Some(0.02);
        for row in &run_sweep(&cfg).unwrap().rows {
            let (dim, h) = (row.dim_e.unwrap().max(1) as f64, row.horizon.unwrap() as f64);
            prop_assert_eq!(row.estimate_bound, Some(18.0 * dim * h));
        }
    }
}
