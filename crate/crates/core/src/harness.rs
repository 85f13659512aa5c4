//! Experiment orchestration: the outer training loop, metrics persistence,
//! and the analysis commands built on top of trained checkpoints.
//!
//! Outer-loop steps are numbered as in the algorithm listing:
//! 3 collect a real episode, 4 train the local models, 5 train the error
//! predictor, 6-15 generate model rollouts, 16-18 update the policy.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::config::{check_scenario_presets, ConfigError, ExperimentConfig, Mode};
use crate::dataset::Dataset;
use crate::envs::{JointObsDynamics, TabularDecPomdp};
use crate::local_models::LocalModelSet;
use crate::model_reward::{train_error_predictor, ErrorOracle, ModelRewardPredictor};
use crate::policy::{collect_episode, evaluate_return, ppo_update, CentralizedCritic, JointPolicy, ReturnStats};
use crate::rng::SeedKey;
use crate::rollout::{
    brute_force_plan, greedy_rollout, planned_rollout, select_with, sequence_space_size, shoot_enumerated,
    ModelState, RolloutConfig, BRUTE_FORCE_LIMIT,
};
use crate::theory::{
    bound_report, cell_errors, default_truncation, exact_return, kl, lemma_tv_chain_check, perturb_policy,
    pinsker_check, random_distribution, random_model_near, random_policy, BoundInputs, BoundReport,
    DistributionTable, JointTable,
};
use crate::types::EnvTransition;

pub const MODELS_FILE: &str = "models.json";
pub const POLICY_FILE: &str = "policy.json";
pub const DATA_POLICY_FILE: &str = "policy_data.json";
pub const CRITIC_FILE: &str = "critic.json";
pub const PREDICTOR_FILE: &str = "error_predictor.json";
pub const ENV_DATASET_FILE: &str = "env_dataset.csv";
pub const MODEL_DATASET_FILE: &str = "model_dataset.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.txt";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.txt";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("algorithm line {line} ({step}): {msg}")]
    Line { line: &'static str, step: &'static str, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl HarnessError {
    /// Process exit code: 3 for configuration problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 3,
            _ => 2,
        }
    }
}

fn line_err(line: &'static str, step: &'static str) -> impl Fn(String) -> HarnessError {
    move |msg| HarnessError::Line { line, step, msg }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub env_steps: usize,
    pub eval_return: f64,
    pub eval_se: f64,
    pub eval_discounted: f64,
    /// Expected undiscounted episode return computed exactly.
    pub exact_return: Option<f64>,
    pub model_nll: f64,
    pub predictor_mse: Option<f64>,
    /// Mean accumulated exact model error at the last rollout step.
    pub rollout_error: Option<f64>,
    pub policy_version: u64,
    pub bound_gap: Option<f64>,
    pub bound_rhs: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.10e}"))
}

impl MetricsRecord {
    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("iteration", self.iteration.to_string()),
            ("env_steps", self.env_steps.to_string()),
            ("eval_return", format!("{:.10e}", self.eval_return)),
            ("eval_se", format!("{:.10e}", self.eval_se)),
            ("eval_discounted", format!("{:.10e}", self.eval_discounted)),
            ("exact_return", opt(self.exact_return)),
            ("model_nll", format!("{:.10e}", self.model_nll)),
            ("predictor_mse", opt(self.predictor_mse)),
            ("rollout_error", opt(self.rollout_error)),
            ("policy_version", self.policy_version.to_string()),
            ("bound_gap", opt(self.bound_gap)),
            ("bound_rhs", opt(self.bound_rhs)),
        ]
    }

    pub fn to_line(&self) -> String {
        self.fields().iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
    }

    pub fn csv_header() -> String {
        Self {
            iteration: 0,
            env_steps: 0,
            eval_return: 0.0,
            eval_se: 0.0,
            eval_discounted: 0.0,
            exact_return: None,
            model_nll: 0.0,
            predictor_mse: None,
            rollout_error: None,
            policy_version: 0,
            bound_gap: None,
            bound_rhs: None,
        }
        .fields()
        .iter()
        .map(|(k, _)| *k)
        .collect::<Vec<_>>()
        .join(",")
    }

    pub fn to_csv(&self) -> String {
        self.fields().into_iter().map(|(_, v)| v).collect::<Vec<_>>().join(",")
    }

    /// Parse a line produced by [`MetricsRecord::to_line`] into key/value pairs.
    pub fn parse_line(line: &str) -> HashMap<String, String> {
        line.split_whitespace()
            .filter_map(|kv| kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
            .collect()
    }
}

struct MetricsSink {
    txt: File,
    csv: File,
    txt_path: PathBuf,
}

impl MetricsSink {
    fn create(dir: &Path) -> Result<Self, HarnessError> {
        let txt_path = dir.join(METRICS_FILE);
        let csv_path = dir.join(METRICS_CSV_FILE);
        let txt = File::create(&txt_path).map_err(io_err(&txt_path))?;
        let mut csv = File::create(&csv_path).map_err(io_err(&csv_path))?;
        writeln!(csv, "{}", MetricsRecord::csv_header()).map_err(io_err(&csv_path))?;
        Ok(Self { txt, csv, txt_path })
    }

    fn push(&mut self, r: &MetricsRecord) -> Result<(), HarnessError> {
        let p = self.txt_path.clone();
        writeln!(self.txt, "{}", r.to_line()).map_err(io_err(&p))?;
        writeln!(self.csv, "{}", r.to_csv()).map_err(io_err(&p))?;
        self.txt.flush().map_err(io_err(&p))?;
        self.csv.flush().map_err(io_err(&p))
    }
}

/// Everything a finished run leaves behind.
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub env: TabularDecPomdp,
    pub dynamics: Option<JointObsDynamics>,
    pub models: LocalModelSet,
    pub predictor: Option<ModelRewardPredictor>,
    pub policy: JointPolicy,
    pub data_policy: JointPolicy,
    pub critic: CentralizedCritic,
    pub env_dataset: Dataset,
}

impl RunOutput {
    pub fn into_trained(self) -> Trained {
        Trained {
            env: self.env,
            dynamics: self.dynamics,
            models: self.models,
            policy: self.policy,
            data_policy: Some(self.data_policy),
            predictor: self.predictor,
            env_dataset: self.env_dataset,
        }
    }
}

/// Mean accumulated exact model error per rollout step over `M` rollouts of
/// length `k` stored consecutively. The error of a step is
/// `KL(prod_i P_hat^i(.|o,a) || P(.|o,a))` at the visited cell.
pub fn accumulated_exact_error(
    transitions: &[EnvTransition],
    ms: &LocalModelSet,
    dyn_: &JointObsDynamics,
    k: usize,
) -> Vec<f64> {
    accumulated_error_with(transitions, k, |t| {
        let (o, a) = (ms.spaces.encode_obs(&t.obs), ms.spaces.encode_action(&t.act));
        kl(&ms.predict_joint_idx(o, a).table, dyn_.row(o, a))
    })
}

fn accumulated_error_with(transitions: &[EnvTransition], k: usize, f: impl Fn(&EnvTransition) -> f64) -> Vec<f64> {
    let mut cache: HashMap<(Vec<usize>, Vec<usize>), f64> = HashMap::new();
    let mut sums = vec![0.0; k];
    let n_roll = transitions.len() / k.max(1);
    for chunk in transitions.chunks(k) {
        let mut acc = 0.0;
        for (t, tr) in chunk.iter().enumerate() {
            let key = (tr.obs.0.clone(), tr.act.0.clone());
            let e = *cache.entry(key).or_insert_with(|| f(tr));
            acc += e;
            sums[t] += acc;
        }
    }
    sums.iter().map(|s| s / n_roll.max(1) as f64).collect()
}

fn empirical_obs_distribution(d: &Dataset) -> DistributionTable {
    let n = d.spaces().n_joint_obs();
    let mut probs = vec![0.0; n];
    for t in d.iter() {
        probs[d.spaces().encode_obs(&t.obs)] += 1.0;
    }
    let total = d.len().max(1) as f64;
    probs.iter_mut().for_each(|p| *p /= total);
    DistributionTable { probs }
}

/// Runs the outer loop for `cfg.episodes` iterations. With `out`, metrics
/// are written incrementally and checkpoints are saved at the end.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let env = cfg.load_env()?;
    let dynamics = env.derive_joint_obs_dynamics().ok();
    let spaces = env.spaces().clone();
    let gamma = cfg.gamma.unwrap_or(env.gamma());
    let root = SeedKey::new(cfg.seed);
    let mut sink = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            let cfg_path = dir.join(CONFIG_FILE);
            std::fs::write(&cfg_path, cfg.to_toml()).map_err(io_err(&cfg_path))?;
            Some(MetricsSink::create(dir)?)
        }
        None => None,
    };
    let started = Instant::now();

    let mut policy = JointPolicy::new(spaces.clone(), &cfg.policy, &root.child("init-policy"));
    let mut critic = CentralizedCritic::new(spaces.clone(), &cfg.policy, &root.child("init-critic"));
    let mut models = LocalModelSet::new(spaces.clone(), cfg.model.clone(), &root.child("init-models"));
    let mut predictor = (cfg.mode == Mode::Mag)
        .then(|| ModelRewardPredictor::new(spaces.clone(), cfg.reward.clone(), &root.child("init-predictor")));
    let mut d_e = Dataset::new(spaces.clone(), cfg.env_dataset_capacity)
        .map_err(|e| HarnessError::Config(ConfigError::Invalid(e.to_string())))?;
    let mut data_policy = policy.clone();
    let mut last_d_m = None;
    let mut env_steps = 0usize;
    let mut records = Vec::new();

    for ep in 0..cfg.episodes {
        let it = root.indexed("iteration", ep);

        let episode = collect_episode(&env, &policy, &it.child("collect"))
            .map_err(|e| line_err("3", "collect real episode")(e.to_string()))?;
        env_steps += episode.len();
        d_e.extend(episode).map_err(|e| line_err("3", "collect real episode")(e.to_string()))?;

        let model_stats = models
            .train_one_step(&d_e, cfg.model_epochs, &it.child("models"))
            .map_err(|e| line_err("4", "train local models")(e.to_string()))?;

        let mut predictor_mse = None;
        if let Some(rp) = predictor.as_mut() {
            let (trained, stats) = train_error_predictor(rp, &d_e, &models, cfg.reward_epochs, &it.child("predictor"))
                .map_err(|e| line_err("5", "train error predictor")(e.to_string()))?;
            *rp = trained;
            predictor_mse = stats.held_out_mse.or(stats.train_losses.last().copied());
        }

        let rollouts = match &predictor {
            Some(rp) => planned_rollout(&models, ErrorOracle::Learned(rp), &policy, &d_e, &cfg.rollout, &it.child("rollout")),
            None => greedy_rollout(&models, &policy, &d_e, &cfg.rollout, &it.child("rollout")),
        }
        .map_err(|e| line_err("6-15", "model rollouts")(e.to_string()))?;
        let rollout_error = dynamics
            .as_ref()
            .map(|d| accumulated_exact_error(&rollouts, &models, d, cfg.rollout.k).last().copied().unwrap_or(0.0));
        let mut d_m = Dataset::new(spaces.clone(), cfg.model_dataset_capacity())
            .map_err(|e| line_err("6-15", "model rollouts")(e.to_string()))?;
        d_m.extend(rollouts).map_err(|e| line_err("6-15", "model rollouts")(e.to_string()))?;

        data_policy = policy.clone();
        let (p, c, _) = ppo_update(&policy, &critic, &d_m, cfg.g, &cfg.policy, gamma, Some(cfg.rollout.k), &it.child("ppo"))
            .map_err(|e| line_err("16-18", "policy update")(e.to_string()))?;
        policy = p;
        critic = c;
        last_d_m = Some(d_m);

        let last = ep + 1 == cfg.episodes;
        if (ep + 1) % cfg.eval_every == 0 || last {
            let eval = evaluate_return(&env, &policy, cfg.eval_episodes, &it.child("eval"))
                .map_err(|e| HarnessError::Invariant(e.to_string()))?;
            if cfg.count_eval_steps {
                env_steps += eval.episodes * env.horizon();
            }
            let exact = dynamics.as_ref().map(|d| exact_return(d, &policy, 1.0, env.horizon()).value);
            let (mut bound_gap, mut bound_rhs) = (None, None);
            if cfg.audit_every > 0 && (ep + 1) % cfg.audit_every == 0 {
                if let Some(d) = &dynamics {
                    let r = audit(d, &models, &policy, &data_policy, &d_e, gamma)?;
                    bound_gap = Some(r.gap);
                    bound_rhs = Some(r.rhs_stepwise);
                }
            }
            let rec = MetricsRecord {
                iteration: ep + 1,
                env_steps,
                eval_return: eval.mean,
                eval_se: eval.se,
                eval_discounted: eval.discounted_mean,
                exact_return: exact,
                model_nll: model_stats.nll,
                predictor_mse,
                rollout_error,
                policy_version: policy.version,
                bound_gap,
                bound_rhs,
            };
            if let Some(s) = sink.as_mut() {
                s.push(&rec)?;
            }
            records.push(rec);
        }
    }

    if let Some(dir) = out {
        checkpoint::save(&models, &dir.join(MODELS_FILE))?;
        checkpoint::save(&policy, &dir.join(POLICY_FILE))?;
        checkpoint::save(&data_policy, &dir.join(DATA_POLICY_FILE))?;
        checkpoint::save(&critic, &dir.join(CRITIC_FILE))?;
        if let Some(rp) = &predictor {
            checkpoint::save(rp, &dir.join(PREDICTOR_FILE))?;
        }
        let ds_path = dir.join(ENV_DATASET_FILE);
        d_e.save(&ds_path).map_err(|e| HarnessError::Invariant(format!("{}: {e}", ds_path.display())))?;
        if let Some(d_m) = &last_d_m {
            let p = dir.join(MODEL_DATASET_FILE);
            d_m.save(&p).map_err(|e| HarnessError::Invariant(format!("{}: {e}", p.display())))?;
        }
        let timing = dir.join(TIMING_FILE);
        std::fs::write(&timing, format!("wall_clock_seconds={:.3}\n", started.elapsed().as_secs_f64()))
            .map_err(io_err(&timing))?;
    }

    Ok(RunOutput {
        records,
        env,
        dynamics,
        models,
        predictor,
        policy,
        data_policy,
        critic,
        env_dataset: d_e,
    })
}

fn audit(
    d: &JointObsDynamics,
    ms: &LocalModelSet,
    policy: &JointPolicy,
    pi_d: &JointPolicy,
    d_e: &Dataset,
    gamma: f64,
) -> Result<BoundReport, HarnessError> {
    let r = bound_report(&BoundInputs {
        dyn_: d,
        ms,
        policy,
        pi_d,
        init: Some(empirical_obs_distribution(d_e)),
        gamma,
        horizon: default_truncation(gamma, d.r_max(), 1e-6),
    })
    .map_err(|e| HarnessError::Invariant(e.to_string()))?;
    r.check().map_err(HarnessError::Invariant)?;
    Ok(r)
}

/// Components restored from a run directory.
pub struct Trained {
    pub env: TabularDecPomdp,
    pub dynamics: Option<JointObsDynamics>,
    pub models: LocalModelSet,
    pub policy: JointPolicy,
    pub data_policy: Option<JointPolicy>,
    pub predictor: Option<ModelRewardPredictor>,
    pub env_dataset: Dataset,
}

pub fn load_trained(cfg: &ExperimentConfig, dir: &Path) -> Result<Trained, HarnessError> {
    let env = cfg.load_env()?;
    let dynamics = env.derive_joint_obs_dynamics().ok();
    let models: LocalModelSet = checkpoint::load(&dir.join(MODELS_FILE))?;
    models.validate().map_err(|e| HarnessError::Invariant(e.to_string()))?;
    let policy: JointPolicy = checkpoint::load(&dir.join(POLICY_FILE))?;
    let dp = dir.join(DATA_POLICY_FILE);
    let data_policy = if dp.exists() { Some(checkpoint::load(&dp)?) } else { None };
    let pp = dir.join(PREDICTOR_FILE);
    let predictor = if pp.exists() { Some(checkpoint::load(&pp)?) } else { None };
    let ds = dir.join(ENV_DATASET_FILE);
    let env_dataset = Dataset::load(&ds).map_err(|e| HarnessError::Invariant(format!("{}: {e}", ds.display())))?;
    if models.spaces != *env.spaces() || policy.spaces != *env.spaces() {
        return Err(HarnessError::Invariant("checkpoint spaces do not match the environment".into()));
    }
    Ok(Trained { env, dynamics, models, policy, data_policy, predictor, env_dataset })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorTable {
    /// `(planned, greedy)` mean accumulated error after each rollout step.
    pub planned: Vec<f64>,
    pub greedy: Vec<f64>,
    pub n_starts: usize,
    /// False when the true dynamics is unavailable and predicted errors were
    /// accumulated instead.
    pub exact: bool,
}

impl ErrorTable {
    /// `greedy - planned` per step.
    pub fn difference(&self) -> Vec<f64> {
        self.greedy.iter().zip(&self.planned).map(|(g, p)| g - p).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("n_starts={} exact={}\n", self.n_starts, self.exact);
        if !self.exact {
            s.push_str("warning=true dynamics unavailable; errors are predicted, not exact\n");
        }
        s.push_str("step,planned,greedy,difference\n");
        for (t, ((p, g), d)) in self.planned.iter().zip(&self.greedy).zip(self.difference()).enumerate() {
            s.push_str(&format!("{},{p:.10e},{g:.10e},{d:.10e}\n", t + 1));
        }
        s
    }
}

/// Planned and greedy rollouts from the same `n_starts` start observations
/// with trained components; accumulated model error per step.
pub fn analyze_error(
    cfg: &ExperimentConfig,
    trained: &Trained,
    n_starts: usize,
    seed: &SeedKey,
) -> Result<ErrorTable, HarnessError> {
    let rc = RolloutConfig { m: n_starts, ..cfg.rollout.clone() };
    let greedy = greedy_rollout(&trained.models, &trained.policy, &trained.env_dataset, &rc, seed)
        .map_err(|e| HarnessError::Invariant(e.to_string()))?;
    let rp = match &trained.predictor {
        Some(rp) => rp.clone(),
        None => return Err(HarnessError::Invariant("error analysis needs a trained error predictor".into())),
    };
    let planned =
        planned_rollout(&trained.models, ErrorOracle::Learned(&rp), &trained.policy, &trained.env_dataset, &rc, seed)
            .map_err(|e| HarnessError::Invariant(e.to_string()))?;
    let (p, g, exact) = match &trained.dynamics {
        Some(d) => (
            accumulated_exact_error(&planned, &trained.models, d, rc.k),
            accumulated_exact_error(&greedy, &trained.models, d, rc.k),
            true,
        ),
        None => {
            let predicted = |t: &EnvTransition| {
                rp.predict(&crate::model_reward::ErrorQuery::from(t))
            };
            (accumulated_error_with(&planned, rc.k, predicted), accumulated_error_with(&greedy, rc.k, predicted), false)
        }
    };
    Ok(ErrorTable { planned: p, greedy: g, n_starts, exact })
}

/// Bound report for trained components (starting from the empirical
/// distribution of the environment dataset) or, without them, for a random
/// instance drawn from `seed`.
pub fn verify_bound(cfg: &ExperimentConfig, trained: Option<&Trained>, seed: &SeedKey) -> Result<BoundReport, HarnessError> {
    let env = cfg.load_env()?;
    let d = env
        .derive_joint_obs_dynamics()
        .map_err(|e| HarnessError::Invariant(format!("bound audit needs exact dynamics: {e}")))?;
    let gamma = cfg.gamma.unwrap_or(env.gamma());
    let horizon = default_truncation(gamma, d.r_max(), 1e-6);
    let report = match trained {
        Some(t) => {
            let pi_d = t.data_policy.clone().unwrap_or_else(|| t.policy.clone());
            bound_report(&BoundInputs {
                dyn_: &d,
                ms: &t.models,
                policy: &t.policy,
                pi_d: &pi_d,
                init: Some(empirical_obs_distribution(&t.env_dataset)),
                gamma,
                horizon,
            })
        }
        None => {
            let mut rng = seed.child("instance").rng();
            let ms = random_model_near(&d, 0.3, &mut rng);
            let policy = random_policy(&d.spaces, &mut rng);
            let pi_d = perturb_policy(&policy, 0.3, &mut rng);
            bound_report(&BoundInputs { dyn_: &d, ms: &ms, policy: &policy, pi_d: &pi_d, init: None, gamma, horizon })
        }
    }
    .map_err(|e| HarnessError::Invariant(e.to_string()))?;
    Ok(report)
}

/// Appends one summary row for `report` to `path`, writing a header first
/// when the file is new.
pub fn append_bound_summary(path: &Path, env: &str, seed: u64, report: &BoundReport) -> Result<(), HarnessError> {
    let new = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    if new {
        writeln!(f, "env,seed,gap,rhs_stepwise,rhs_scaled,eps_pi,truncation_t,holds").map_err(io_err(path))?;
    }
    writeln!(
        f,
        "{env},{seed},{:.10e},{:.10e},{:.10e},{:.10e},{},{}",
        report.gap,
        report.rhs_stepwise,
        report.rhs_scaled,
        report.eps_pi,
        report.truncation_t,
        report.check().is_ok()
    )
    .map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OracleReport {
    pub checks: Vec<CheckResult>,
}

impl OracleReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, r: Result<String, String>) {
        let (passed, detail) = match r {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.checks.push(CheckResult { name: name.into(), passed, detail });
    }

    pub fn to_text(&self) -> String {
        self.checks
            .iter()
            .map(|c| format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail))
            .collect()
    }
}

/// Configuration checks, exhaustive-planner equivalence, bound audits and
/// randomized inequality suites. With `checkpoint_dir`, the stored local
/// models are loaded and validated too.
pub fn oracle_check(cfg: &ExperimentConfig, checkpoint_dir: Option<&Path>) -> OracleReport {
    let mut rep = OracleReport::default();
    rep.push("config", cfg.validate().map(|_| "valid".into()).map_err(|e| e.to_string()));
    rep.push("presets", check_scenario_presets().map(|_| "planning settings and predictor architecture match".into()));

    if let Some(dir) = checkpoint_dir {
        let r = checkpoint::load::<LocalModelSet>(&dir.join(MODELS_FILE))
            .map_err(|e| format!("local_models: {e}"))
            .and_then(|ms| ms.validate().map(|_| "stored local models are valid".to_string()).map_err(|e| e.to_string()));
        rep.push("checkpoint-models", r);
    }

    let env = match cfg.load_env() {
        Ok(e) => e,
        Err(e) => {
            rep.push("environment", Err(e.to_string()));
            return rep;
        }
    };
    let d = match env.derive_joint_obs_dynamics() {
        Ok(d) => d,
        Err(e) => {
            rep.push("dynamics", Err(format!("exact dynamics unavailable: {e}")));
            return rep;
        }
    };
    let root = SeedKey::new(cfg.seed).child("oracle-check");
    let gamma = cfg.gamma.unwrap_or(env.gamma());

    let n_obs = d.spaces.n_joint_obs();
    let h = if sequence_space_size(n_obs, 2) <= BRUTE_FORCE_LIMIT { 2 } else { 1 };
    if sequence_space_size(n_obs, h) > BRUTE_FORCE_LIMIT {
        rep.push(
            "planner-equivalence",
            Err(format!("refused: sequence space {} exceeds {BRUTE_FORCE_LIMIT}", sequence_space_size(n_obs, h))),
        );
    } else {
        rep.push("planner-equivalence", planner_equivalence(&d, h, 5, &root.child("planner")));
    }
    rep.push("bound-audit", bound_audit(&d, gamma, 10, &root.child("bound")));
    rep.push("epsilon-identity", epsilon_identity(&d, &root.child("identity")));
    rep.push("tv-chain-lemma", lemma_suite(1000, &root.child("lemma")));
    rep.push("pinsker", pinsker_suite(1000, &root.child("pinsker")));
    rep
}

fn planner_equivalence(d: &JointObsDynamics, h: usize, instances: usize, seed: &SeedKey) -> Result<String, String> {
    for i in 0..instances {
        let mut rng = seed.indexed("instance", i).rng();
        let ms = random_model_near(d, 0.5, &mut rng);
        let pol = random_policy(&d.spaces, &mut rng);
        let s0 = ModelState {
            obs: d.spaces.decode_obs(rng.gen_range(0..d.spaces.n_joint_obs())),
            act: d.spaces.decode_action(rng.gen_range(0..d.spaces.n_joint_actions())),
        };
        for sel in [crate::rollout::Selection::MinError, crate::rollout::Selection::LiteralArgmax] {
            let trajs = shoot_enumerated(&ms, ErrorOracle::Exact(d), &pol, &s0, h, 1.0).map_err(|e| e.to_string())?;
            let chosen = select_with(&trajs, sel).map_err(|e| e.to_string())?;
            let (best, _) = brute_force_plan(&ms, ErrorOracle::Exact(d), &pol, &s0, h, 1.0, sel).map_err(|e| e.to_string())?;
            if chosen != best {
                return Err(format!("instance {i}: enumerated shooting chose {chosen:?}, exhaustive search {best:?}"));
            }
        }
    }
    Ok(format!("{instances} instances agree at H={h}"))
}

fn bound_audit(d: &JointObsDynamics, gamma: f64, instances: usize, seed: &SeedKey) -> Result<String, String> {
    let horizon = default_truncation(gamma, d.r_max(), 1e-6);
    for i in 0..instances {
        let mut rng = seed.indexed("instance", i).rng();
        let noise = rng.gen_range(0.0..0.6);
        let ms = random_model_near(d, noise, &mut rng);
        let policy = random_policy(&d.spaces, &mut rng);
        let pi_d = perturb_policy(&policy, rng.gen_range(0.0..0.5), &mut rng);
        let r = bound_report(&BoundInputs { dyn_: d, ms: &ms, policy: &policy, pi_d: &pi_d, init: None, gamma, horizon })
            .map_err(|e| e.to_string())?;
        r.check().map_err(|e| format!("instance {i}: {e}"))?;
    }
    Ok(format!("{instances} instances within both bounds"))
}

fn epsilon_identity(d: &JointObsDynamics, seed: &SeedKey) -> Result<String, String> {
    let ms = random_model_near(d, 0.3, &mut seed.rng());
    ms.validate().map_err(|e| e.to_string())?;
    let cells = cell_errors(&ms, d).map_err(|e| e.to_string())?;
    let worst = cells.iter().flatten().map(|c| (c.formula_inner - c.kl_direct).abs()).fold(0.0, f64::max);
    if worst > 1e-9 {
        return Err(format!("largest difference {worst:e}"));
    }
    Ok(format!("largest difference {worst:.2e} over {} cells", cells.len() * d.spaces.n_joint_actions()))
}

fn lemma_suite(trials: usize, seed: &SeedKey) -> Result<String, String> {
    let mut rng = seed.rng();
    for i in 0..trials {
        let sharp = rng.gen_range(0.5..4.0);
        let p1 = JointTable::new(4, 4, random_distribution(16, sharp, &mut rng)).map_err(|e| e.to_string())?;
        let p2 = JointTable::new(4, 4, random_distribution(16, sharp, &mut rng)).map_err(|e| e.to_string())?;
        let c = lemma_tv_chain_check(&p1, &p2).map_err(|e| e.to_string())?;
        if !c.holds(1e-12) {
            return Err(format!("trial {i}: {c:?}"));
        }
    }
    Ok(format!("{trials} random pairs"))
}

fn pinsker_suite(trials: usize, seed: &SeedKey) -> Result<String, String> {
    let mut rng = seed.rng();
    for i in 0..trials {
        let n = rng.gen_range(2..10);
        let sharp = rng.gen_range(0.5..4.0);
        let p = DistributionTable { probs: random_distribution(n, sharp, &mut rng) };
        let q = DistributionTable { probs: random_distribution(n, sharp, &mut rng) };
        let c = pinsker_check(&p, &q);
        if !c.holds(1e-12) {
            return Err(format!("trial {i}: {c:?}"));
        }
    }
    Ok(format!("{trials} random pairs"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub stats: ReturnStats,
    pub exact_return: Option<f64>,
}

/// Monte-Carlo evaluation of a stored policy, plus its exact expected
/// episode return when the dynamics is available.
pub fn eval_policy(
    cfg: &ExperimentConfig,
    policy: &JointPolicy,
    episodes: usize,
    seed: &SeedKey,
) -> Result<EvalReport, HarnessError> {
    let env = cfg.load_env()?;
    if policy.spaces != *env.spaces() {
        return Err(HarnessError::Invariant("policy spaces do not match the environment".into()));
    }
    let stats = evaluate_return(&env, policy, episodes, seed).map_err(|e| HarnessError::Invariant(e.to_string()))?;
    let exact_return = env.derive_joint_obs_dynamics().ok().map(|d| exact_return(&d, policy, 1.0, env.horizon()).value);
    Ok(EvalReport { stats, exact_return })
}
