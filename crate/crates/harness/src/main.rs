use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agnosticq_core::funclass::{eluder_dim_bruteforce, eluder_dim_greedy};
use agnosticq_core::general_agent::GeneralRunStats;
use agnosticq_core::json;
use agnosticq_core::{
    gen_finite_class, gen_linear_features, gen_mdp, gen_stochastic_rewards, learn_general, learn_linear,
    learn_stochastic, solve_dp, DeterministicMdp, Env, FeatureMap, FiniteClass, GenParams, GeneralOptions,
    HypothesisClass, LinearClass, LinearOptions, NoiseFamily, Policy, SaPair, StochasticConfig,
};
use agnosticq_harness::config::SEED_ENV;
use agnosticq_harness::{run_sweep, verify_bounds, ExperimentConfig, Mode, Report};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "agnosticq", version, about = "Agnostic Q-learning in deterministic episodic MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an MDP, optionally with features and a finite class.
    Gen(GenArgs),
    /// Exact Q*, V*, optimal action sets and gap.
    Solve {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the covariance-gated linear agent.
    LearnLinear {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        memoize: bool,
        /// `e` or a number greater than 1.
        #[arg(long, default_value = "e")]
        log_base: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle-gated agent on deterministic rewards.
    LearnGeneral {
        #[command(flatten)]
        common: GeneralArgs,
    },
    /// Run the oracle-gated agent with estimated rewards.
    LearnStochastic {
        #[command(flatten)]
        common: GeneralArgs,
        #[arg(long)]
        delta_r: f64,
        #[arg(long)]
        p: f64,
        /// Eluder dimension for the sample count; computed for finite classes when absent.
        #[arg(long)]
        dim_e: Option<usize>,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
    },
    /// Eluder dimension of a finite class over all state-action pairs.
    Eluder {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        class: PathBuf,
        #[arg(long)]
        eps: f64,
        /// Also report the greedy lower bound.
        #[arg(long)]
        greedy: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a configured sweep and write CSV and JSON reports.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Check a report (or a freshly run config) against every bound.
    Verify {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        report: Option<PathBuf>,
        #[command(flatten)]
        run: OptionalRun,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GenArgs {
    /// Comma-separated level widths.
    #[arg(long, value_delimiter = ',', default_value = "1,2,2")]
    widths: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    actions: usize,
    /// Upper end of the per-state action range; defaults to `--actions`.
    #[arg(long)]
    max_actions: Option<usize>,
    #[arg(long, default_value_t = 0.25)]
    gap: f64,
    #[arg(long, default_value_t = 1.0)]
    value_ceiling: f64,
    /// Replace rewards by two-point laws of this half-width.
    #[arg(long)]
    noise_half_width: Option<f64>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Feature dimension; writes a feature map to `--features-out`.
    #[arg(long, requires = "features_out")]
    features: Option<usize>,
    #[arg(long)]
    features_out: Option<PathBuf>,
    /// Class size; writes a finite class to `--class-out`.
    #[arg(long, requires = "class_out")]
    class_size: Option<usize>,
    #[arg(long)]
    class_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    delta_target: f64,
}

#[derive(Args)]
struct GeneralArgs {
    #[arg(long)]
    mdp: PathBuf,
    /// A finite class (JSON array) or a feature map (JSON object).
    #[arg(long)]
    class: PathBuf,
    #[arg(long)]
    rho: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct OptionalRun {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct Overrides {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed; overrides the config file.
    #[arg(long, env = SEED_ENV)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    budget_ms: Option<u64>,
    #[arg(long)]
    timing: bool,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown mode {s}"))
}

fn parse_log_base(s: &str) -> Result<f64> {
    let base = if s == "e" { std::f64::consts::E } else { s.parse().context("log base")? };
    if !(base > 1.0) {
        bail!("log base must exceed 1");
    }
    Ok(base)
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(p) = self.parallelism {
            cfg.parallelism = Some(p);
        }
        if let Some(b) = self.budget_ms {
            cfg.budget_ms = Some(b);
        }
        cfg.timing |= self.timing;
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => match writeln!(std::io::stdout().lock(), "{text}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            r => r.context("writing stdout"),
        },
    }
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    emit(&json::to_string_pretty(value)?, out)
}

fn load_mdp(path: &Path) -> Result<DeterministicMdp> {
    Ok(DeterministicMdp::from_json(&read(path)?)?)
}

enum LoadedClass {
    Finite(FiniteClass),
    Linear(LinearClass),
}

fn load_class(path: &Path) -> Result<LoadedClass> {
    let text = read(path)?;
    Ok(if text.trim_start().starts_with('[') {
        LoadedClass::Finite(FiniteClass::from_json(&text)?)
    } else {
        LoadedClass::Linear(LinearClass::new(FeatureMap::from_json(&text)?))
    })
}

#[derive(Serialize)]
struct LearnOutput {
    policy: Policy,
    recur_line_executions: usize,
    data_additions: usize,
    matched_pi_star: bool,
    value_at_root: f64,
}

#[derive(Serialize)]
struct GeneralOutput {
    #[serde(flatten)]
    base: LearnOutput,
    y_size: usize,
    oracle_calls: usize,
    reward_samples: u64,
    n_samples: Option<u64>,
}

fn general_output(mdp: &DeterministicMdp, policy: Policy, stats: GeneralRunStats, n: Option<u64>) -> Result<GeneralOutput> {
    let truth = solve_dp(mdp)?;
    let recursions = stats.labels.iter().filter(|l| !mdp.is_last_level(l.pair.state)).count();
    Ok(GeneralOutput {
        base: LearnOutput {
            matched_pi_star: truth.policy_matches(mdp, &policy),
            policy,
            recur_line_executions: recursions,
            data_additions: stats.y_size,
            value_at_root: stats.value_at_root,
        },
        y_size: stats.y_size,
        oracle_calls: stats.oracle_calls,
        reward_samples: stats.reward_samples,
        n_samples: n,
    })
}

fn run_agent<C: HypothesisClass>(
    env: &mut Env<'_>,
    class: &C,
    args: &GeneralArgs,
    stochastic: Option<&StochasticConfig>,
) -> Result<(Policy, GeneralRunStats)> {
    if args.delta >= args.rho / 2.0 {
        bail!("delta {} must be below rho/2", args.delta);
    }
    let opts = GeneralOptions::default();
    Ok(match stochastic {
        Some(cfg) => learn_stochastic(env, class, args.rho, args.delta, cfg, &opts)?,
        None => learn_general(env, class, args.rho, args.delta, &opts)?,
    })
}

fn gen(args: &GenArgs) -> Result<()> {
    let params = GenParams {
        level_widths: args.widths.clone(),
        min_actions: args.actions,
        max_actions: args.max_actions.unwrap_or(args.actions),
        target_gap: args.gap,
        value_ceiling: args.value_ceiling,
    };
    let mut mdp = gen_mdp(args.seed, &params)?;
    if let Some(w) = args.noise_half_width {
        mdp = gen_stochastic_rewards(&mdp, args.seed.wrapping_add(1), NoiseFamily::TwoPoint { half_width: w })?;
    }
    emit(&mdp.to_json()?, args.out.as_deref())?;
    let truth = solve_dp(&mdp)?;
    if let (Some(d), Some(out)) = (args.features, &args.features_out) {
        let (fm, _) = gen_linear_features(&truth, d, args.delta_target, args.seed.wrapping_add(2))?;
        emit(&fm.to_json()?, Some(out))?;
    }
    if let (Some(m), Some(out)) = (args.class_size, &args.class_out) {
        let class = gen_finite_class(&truth, m, args.delta_target, args.seed.wrapping_add(3))?;
        emit(&class.to_json()?, Some(out))?;
    }
    Ok(())
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_json(&read(path)?)?;
    overrides.apply(&mut cfg);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen(args) => gen(&args)?,
        Command::Solve { mdp, out } => {
            let mdp = load_mdp(&mdp)?;
            emit_json(&solve_dp(&mdp)?, out.as_deref())?;
        }
        Command::LearnLinear { mdp, features, rho, memoize, log_base, out } => {
            let mdp = load_mdp(&mdp)?;
            let fm = FeatureMap::from_json(&read(&features)?)?;
            let options = LinearOptions { memoize, log_base: parse_log_base(&log_base)?, ..Default::default() };
            let (policy, stats) = learn_linear(&mut Env::new(&mdp, 0), &fm, rho, &options)?;
            let truth = solve_dp(&mdp)?;
            let output = LearnOutput {
                matched_pi_star: truth.policy_matches(&mdp, &policy),
                policy,
                recur_line_executions: stats.recur_line_executions,
                data_additions: stats.data_additions,
                value_at_root: stats.value_at_root,
            };
            emit_json(&output, out.as_deref())?;
        }
        Command::LearnGeneral { common } => {
            let mdp = load_mdp(&common.mdp)?;
            let mut env = Env::new(&mdp, 0);
            let (policy, stats) = match load_class(&common.class)? {
                LoadedClass::Finite(c) => run_agent(&mut env, &c, &common, None)?,
                LoadedClass::Linear(c) => run_agent(&mut env, &c, &common, None)?,
            };
            emit_json(&general_output(&mdp, policy, stats, None)?, common.out.as_deref())?;
        }
        Command::LearnStochastic { common, delta_r, p, dim_e, seed } => {
            let mdp = load_mdp(&common.mdp)?;
            let class = load_class(&common.class)?;
            let dim = match (dim_e, &class) {
                (Some(k), _) => k,
                (None, LoadedClass::Finite(c)) => {
                    eluder_dim_bruteforce(c, &mdp.sa_pairs().collect::<Vec<SaPair>>(), common.rho / 4.0)?
                }
                (None, LoadedClass::Linear(_)) => bail!("--dim-e is required for feature maps"),
            };
            let cfg = StochasticConfig::new(mdp.horizon(), delta_r, p, dim.max(1))?;
            let mut env = Env::new(&mdp, seed);
            let (policy, stats) = match &class {
                LoadedClass::Finite(c) => run_agent(&mut env, c, &common, Some(&cfg))?,
                LoadedClass::Linear(c) => run_agent(&mut env, c, &common, Some(&cfg))?,
            };
            emit_json(&general_output(&mdp, policy, stats, Some(cfg.n_samples))?, common.out.as_deref())?;
        }
        Command::Eluder { mdp, class, eps, greedy, out } => {
            let mdp = load_mdp(&mdp)?;
            let LoadedClass::Finite(class) = load_class(&class)? else {
                bail!("the Eluder dimension is computed for finite classes only");
            };
            let domain: Vec<SaPair> = mdp.sa_pairs().collect();
            #[derive(Serialize)]
            struct EluderOutput {
                domain_size: usize,
                eps: f64,
                dim: usize,
                greedy: Option<usize>,
            }
            let output = EluderOutput {
                domain_size: domain.len(),
                eps,
                dim: eluder_dim_bruteforce(&class, &domain, eps)?,
                greedy: if greedy { Some(eluder_dim_greedy(&class, &domain, eps)?) } else { None },
            };
            emit_json(&output, out.as_deref())?;
        }
        Command::Sweep { run, csv, json } => {
            let cfg = load_config(&run.config, &run.overrides)?;
            let report = run_sweep(&cfg)?;
            emit(report.to_csv()?.trim_end(), csv.as_deref())?;
            if let Some(path) = json {
                emit(&report.to_json()?, Some(&path))?;
            }
        }
        Command::Verify { report, run, out } => {
            let report = match (report, run.config) {
                (Some(path), _) => Report::from_json(&read(&path)?)?,
                (None, Some(path)) => run_sweep(&load_config(&path, &run.overrides)?)?,
                (None, None) => bail!("verify needs --report or --config"),
            };
            let summary = verify_bounds(&report)?;
            println!("{summary}");
            if let Some(path) = out {
                emit_json(&summary, Some(&path))?;
            }
            return Ok(summary.pass);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
