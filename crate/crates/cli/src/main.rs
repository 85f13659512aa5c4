use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mag_core::checkpoint;
use mag_core::config::{preset_names, ConfigError, ExperimentConfig, Mode};
use mag_core::harness::{self, HarnessError, POLICY_FILE};
use mag_core::local_models::ModelBackend;
use mag_core::policy::{JointPolicy, PolicyBackend};
use mag_core::rng::SeedKey;
use mag_core::rollout::Selection;

#[derive(Parser)]
#[command(name = "mag", version, about = "Model-based multi-agent RL with local models as agents")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the outer training loop and write metrics and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        out: PathBuf,
    },
    /// Compare accumulated model error of planned and greedy rollouts.
    AnalyzeError {
        #[command(flatten)]
        common: Common,
        /// Run directory produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_starts: usize,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit the return-gap bound on trained components or a random instance.
    VerifyBound {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Summary file; one row is appended per invocation.
        #[arg(long, default_value = "bound_results.csv")]
        results: PathBuf,
        /// Write the full record here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the exact equivalence checks and randomized inequality suites.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a stored policy in the real environment.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        eval_episodes: usize,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in environment or preset name.
    #[arg(long)]
    env: Option<String>,
    /// Environment description file.
    #[arg(long)]
    env_file: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Outer-loop iterations.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long = "H")]
    h: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long = "M")]
    m: Option<usize>,
    #[arg(long)]
    plan_discount: Option<f64>,
    #[arg(long)]
    selection: Option<Selection>,
    #[arg(long)]
    model_backend: Option<ModelBackend>,
    #[arg(long)]
    policy_backend: Option<PolicyBackend>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = match (&self.config, &self.env) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) if preset_names().contains(name) => ExperimentConfig::preset(name)?,
            _ => ExperimentConfig::default(),
        };
        if let Some(env) = &self.env {
            if self.config.is_some() && preset_names().contains(env) {
                let preset = ExperimentConfig::preset(env)?;
                cfg.env = preset.env;
            } else if !preset_names().contains(env) {
                cfg.env = env.clone();
            }
        }
        if let Some(f) = &self.env_file {
            cfg.env_file = Some(f.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(n) = self.episodes {
            cfg.episodes = n;
        }
        let r = &mut cfg.rollout;
        if let Some(v) = self.l {
            r.l = v;
        }
        if let Some(v) = self.h {
            r.h = v;
        }
        if let Some(v) = self.k {
            r.k = v;
        }
        if let Some(v) = self.m {
            r.m = v;
        }
        if let Some(v) = self.plan_discount {
            r.gamma_plan = v;
        }
        if let Some(v) = self.selection {
            r.selection = v;
        }
        if let Some(v) = self.model_backend {
            cfg.model.backend = v;
        }
        if let Some(v) = self.policy_backend {
            cfg.policy.backend = v;
        }
        cfg.validate()?;
        cfg.load_env()?;
        Ok(cfg)
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), HarnessError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|source| HarnessError::Io { path: p.into(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cmd: Command) -> Result<ExitCode, HarnessError> {
    match cmd {
        Command::Train { common, out } => {
            if common.config.is_none() && (common.env.is_none() || common.seed.is_none()) {
                return Err(ConfigError::Invalid("train needs --env and --seed (or a --config file)".into()).into());
            }
            let cfg = common.resolve()?;
            let run = harness::run_experiment(&cfg, Some(&out))?;
            if let Some(last) = run.records.last() {
                println!("{}", last.to_line());
            }
        }
        Command::AnalyzeError { common, checkpoint, n_starts, out } => {
            let cfg = match common.config {
                None => ExperimentConfig::load(&checkpoint.join(harness::CONFIG_FILE))?,
                Some(_) => common.resolve()?,
            };
            if n_starts < 200 {
                eprintln!("warning: fewer than 200 start states");
            }
            let trained = harness::load_trained(&cfg, &checkpoint)?;
            let seed = SeedKey::new(common.seed.unwrap_or(cfg.seed)).child("analyze-error");
            let table = harness::analyze_error(&cfg, &trained, n_starts, &seed)?;
            if !table.exact {
                eprintln!("warning: exact dynamics unavailable, reporting predicted errors");
            }
            write_or_print(out.as_deref(), &table.to_text())?;
        }
        Command::VerifyBound { common, checkpoint, results, out } => {
            let cfg = match (&checkpoint, &common.config) {
                (Some(dir), None) => ExperimentConfig::load(&dir.join(harness::CONFIG_FILE))?,
                _ => common.resolve()?,
            };
            let trained = checkpoint.as_deref().map(|d| harness::load_trained(&cfg, d)).transpose()?;
            let seed = SeedKey::new(common.seed.unwrap_or(cfg.seed)).child("verify-bound");
            let report = harness::verify_bound(&cfg, trained.as_ref(), &seed)?;
            write_or_print(out.as_deref(), &report.to_record())?;
            harness::append_bound_summary(&results, &cfg.env, cfg.seed, &report)?;
            if let Err(e) = report.check() {
                eprintln!("bound violated: {e}");
                return Ok(ExitCode::from(2));
            }
        }
        Command::OracleCheck { common, checkpoint } => {
            let cfg = common.resolve()?;
            let report = harness::oracle_check(&cfg, checkpoint.as_deref());
            print!("{}", report.to_text());
            if !report.all_passed() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Eval { common, checkpoint, eval_episodes } => {
            let cfg = match common.config {
                None => ExperimentConfig::load(&checkpoint.join(harness::CONFIG_FILE))?,
                Some(_) => common.resolve()?,
            };
            let policy: JointPolicy = checkpoint::load(&checkpoint.join(POLICY_FILE))?;
            let seed = SeedKey::new(common.seed.unwrap_or(cfg.seed)).child("eval");
            let r = harness::eval_policy(&cfg, &policy, eval_episodes, &seed)?;
            println!(
                "episodes={} mean_return={:.6} se={:.6} discounted_mean={:.6} exact_return={}",
                r.stats.episodes,
                r.stats.mean,
                r.stats.se,
                r.stats.discounted_mean,
                r.exact_return.map_or("NA".into(), |v| format!("{v:.6}"))
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
