//! Rollouts in the model MMDP, where the local models act as decision makers
//! against a frozen joint policy.
//!
//! A model state is `(o, a)`; a model action is the next joint observation
//! together with the predicted reward. Greedy rollouts sample the model
//! directly. Planned rollouts fix the policy's action first, then shoot `L`
//! random `H`-step continuations from `(o, a)` and keep the first model
//! action of the continuation with the least accumulated error.
//!
//! Every random draw is taken from a stream keyed by its position (rollout,
//! step, trajectory, step within trajectory), so results do not depend on
//! thread scheduling, and a planned rollout with `L = 1` consumes exactly the
//! draws of the greedy rollout with the same seed.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::local_models::LocalModelSet;
use crate::model_reward::{exact_model_reward, ErrorOracle, ErrorQuery, RewardError};
use crate::policy::JointPolicy;
use crate::rng::SeedKey;
use crate::types::{EnvTransition, JointAction, JointObservation};

/// Largest open-loop sequence space the exhaustive planner will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("rollout_engine: the environment dataset is empty")]
    EmptyDataset,
    #[error("rollout_engine: invalid config: {0}")]
    Config(String),
    #[error("rollout_engine: no trajectories to select from")]
    NoTrajectories,
    #[error("rollout_engine: sequence space of size {size} exceeds the limit {limit}")]
    Guard { size: u128, limit: u128 },
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelState {
    pub obs: JointObservation,
    pub act: JointAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelAction {
    pub next_obs: JointObservation,
    pub pred_reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedStep {
    pub state: ModelState,
    pub action: ModelAction,
    pub predicted_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedTrajectory {
    pub steps: Vec<PlannedStep>,
    /// `sum_t gamma_plan^t * predicted_error_t`.
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Keep the continuation with the smallest accumulated error.
    MinError,
    /// Keep the continuation with the largest accumulated error.
    LiteralArgmax,
}

impl FromStr for Selection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "min-error" => Ok(Self::MinError),
            "literal-argmax" => Ok(Self::LiteralArgmax),
            other => Err(format!("unknown selection `{other}` (expected min-error or literal-argmax)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    /// Steps per model rollout.
    pub k: usize,
    /// Number of model rollouts.
    pub m: usize,
    /// Planning horizon.
    pub h: usize,
    /// Shooting trajectories per planning call.
    pub l: usize,
    pub gamma_plan: f64,
    pub selection: Selection,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self { k: 10, m: 8, h: 10, l: 5, gamma_plan: 1.0, selection: Selection::MinError }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), RolloutError> {
        let bad = |m: &str| Err(RolloutError::Config(m.to_string()));
        if self.h == 0 {
            return bad("planning horizon H must be at least 1");
        }
        if self.h > self.k {
            return bad(&format!("planning horizon H={} exceeds rollout length k={}", self.h, self.k));
        }
        if self.l == 0 {
            return bad("L must be at least 1");
        }
        if self.m == 0 {
            return bad("M must be at least 1");
        }
        if !(self.gamma_plan > 0.0 && self.gamma_plan <= 1.0) {
            return bad("gamma_plan must lie in (0, 1]");
        }
        Ok(())
    }
}

fn rollout_key(seed: &SeedKey, m: usize) -> SeedKey {
    seed.indexed("rollout", m)
}

fn step_key(seed: &SeedKey, m: usize, t: usize) -> SeedKey {
    rollout_key(seed, m).indexed("t", t)
}

fn shoot_step_key(shoot: &SeedKey, j: usize, s: usize) -> SeedKey {
    shoot.indexed("traj", j).indexed("step", s)
}

fn start_obs(d_e: &Dataset, seed: &SeedKey, m: usize) -> Result<JointObservation, RolloutError> {
    let idx = d_e.sample_indices(1, &rollout_key(seed, m).child("start")).map_err(|_| RolloutError::EmptyDataset)?;
    Ok(d_e.get(idx[0]).expect("sampled index is in range").obs.clone())
}

fn model_step(ms: &LocalModelSet, o: &JointObservation, a: &JointAction, key: &SeedKey) -> ModelAction {
    let (next_obs, pred_reward) = ms.sample_joint(o, a, &key.child("model"));
    ModelAction { next_obs, pred_reward }
}

/// `M` rollouts of `k` steps sampling the model directly.
pub fn greedy_rollout(
    ms: &LocalModelSet,
    policy: &JointPolicy,
    d_e: &Dataset,
    cfg: &RolloutConfig,
    seed: &SeedKey,
) -> Result<Vec<EnvTransition>, RolloutError> {
    if d_e.is_empty() {
        return Err(RolloutError::EmptyDataset);
    }
    let per: Vec<Result<Vec<EnvTransition>, RolloutError>> = (0..cfg.m)
        .into_par_iter()
        .map(|m| {
            let mut o = start_obs(d_e, seed, m)?;
            let mut out = Vec::with_capacity(cfg.k);
            for t in 0..cfg.k {
                let key = step_key(seed, m, t);
                let a = policy.act(&o, &key.child("act"));
                let step = model_step(ms, &o, &a, &shoot_step_key(&key.child("shoot"), 0, 0));
                out.push(transition(o, a, &step));
                o = step.next_obs;
            }
            Ok(out)
        })
        .collect();
    flatten(per)
}

fn transition(o: JointObservation, a: JointAction, step: &ModelAction) -> EnvTransition {
    EnvTransition { obs: o, act: a, reward: step.pred_reward, next_obs: step.next_obs.clone(), terminal: false }
}

fn flatten(per: Vec<Result<Vec<EnvTransition>, RolloutError>>) -> Result<Vec<EnvTransition>, RolloutError> {
    let mut out = Vec::new();
    for r in per {
        out.extend(r?);
    }
    Ok(out)
}

/// `L` sampled `H`-step continuations from `s0`. Every trajectory starts at
/// `s0`; later steps sample the policy and then the model.
pub fn shoot(
    ms: &LocalModelSet,
    oracle: ErrorOracle<'_>,
    policy: &JointPolicy,
    s0: &ModelState,
    cfg: &RolloutConfig,
    seed: &SeedKey,
) -> Result<Vec<PlannedTrajectory>, RolloutError> {
    if cfg.h == 0 {
        return Err(RolloutError::Config("planning horizon H must be at least 1".into()));
    }
    if cfg.l == 0 {
        return Err(RolloutError::Config("L must be at least 1".into()));
    }
    (0..cfg.l)
        .into_par_iter()
        .map(|j| shoot_one(ms, oracle, policy, s0, cfg.h, cfg.gamma_plan, seed, j))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn shoot_one(
    ms: &LocalModelSet,
    oracle: ErrorOracle<'_>,
    policy: &JointPolicy,
    s0: &ModelState,
    h: usize,
    gamma_plan: f64,
    seed: &SeedKey,
    j: usize,
) -> Result<PlannedTrajectory, RolloutError> {
    let mut steps = Vec::with_capacity(h);
    let mut score = 0.0;
    let mut state = s0.clone();
    for s in 0..h {
        let key = shoot_step_key(seed, j, s);
        if s > 0 {
            state.act = policy.act(&state.obs, &key.child("act"));
        }
        let action = model_step(ms, &state.obs, &state.act, &key);
        let err = oracle.error(ms, &state.obs, &state.act, action.pred_reward, &action.next_obs)?;
        score += gamma_plan.powi(s as i32) * err;
        let next = ModelState { obs: action.next_obs.clone(), act: state.act.clone() };
        steps.push(PlannedStep { state, action, predicted_error: err });
        state = next;
    }
    Ok(PlannedTrajectory { steps, score })
}

/// Index of the selected trajectory; ties go to the lowest index.
pub fn select_index(trajs: &[PlannedTrajectory], selection: Selection) -> Result<usize, RolloutError> {
    if trajs.is_empty() {
        return Err(RolloutError::NoTrajectories);
    }
    let mut best = 0;
    for (j, t) in trajs.iter().enumerate().skip(1) {
        let better = match selection {
            Selection::MinError => t.score < trajs[best].score,
            Selection::LiteralArgmax => t.score > trajs[best].score,
        };
        if better {
            best = j;
        }
    }
    Ok(best)
}

/// First model action of the trajectory with the least accumulated error.
pub fn select_prediction(trajs: &[PlannedTrajectory]) -> Result<ModelAction, RolloutError> {
    select_with(trajs, Selection::MinError)
}

pub fn select_with(trajs: &[PlannedTrajectory], selection: Selection) -> Result<ModelAction, RolloutError> {
    let j = select_index(trajs, selection)?;
    trajs[j].steps.first().map(|s| s.action.clone()).ok_or(RolloutError::NoTrajectories)
}

/// `M` rollouts of `k` steps where every model step is chosen by shooting.
pub fn planned_rollout(
    ms: &LocalModelSet,
    oracle: ErrorOracle<'_>,
    policy: &JointPolicy,
    d_e: &Dataset,
    cfg: &RolloutConfig,
    seed: &SeedKey,
) -> Result<Vec<EnvTransition>, RolloutError> {
    cfg.validate()?;
    if d_e.is_empty() {
        return Err(RolloutError::EmptyDataset);
    }
    let per: Vec<Result<Vec<EnvTransition>, RolloutError>> = (0..cfg.m)
        .into_par_iter()
        .map(|m| {
            let mut o = start_obs(d_e, seed, m)?;
            let mut out = Vec::with_capacity(cfg.k);
            for t in 0..cfg.k {
                let key = step_key(seed, m, t);
                let a = policy.act(&o, &key.child("act"));
                let s0 = ModelState { obs: o.clone(), act: a.clone() };
                let shoot_key = key.child("shoot");
                let trajs: Vec<PlannedTrajectory> = (0..cfg.l)
                    .map(|j| shoot_one(ms, oracle, policy, &s0, cfg.h, cfg.gamma_plan, &shoot_key, j))
                    .collect::<Result<_, _>>()?;
                let step = select_with(&trajs, cfg.selection)?;
                out.push(transition(o, a, &step));
                o = step.next_obs;
            }
            Ok(out)
        })
        .collect();
    flatten(per)
}

/// Errors `err(o, a, o')` for every next joint observation.
pub fn step_error_row(
    ms: &LocalModelSet,
    oracle: ErrorOracle<'_>,
    o: usize,
    a: usize,
) -> Result<Vec<f64>, RolloutError> {
    let sp = &ms.spaces;
    match oracle {
        ErrorOracle::Exact(d) => (0..sp.n_joint_obs()).map(|n| Ok(exact_model_reward(d, ms, o, a, n)?)).collect(),
        ErrorOracle::Learned(rp) => {
            let r_hat = ms.predict_joint_idx(o, a).mean_reward();
            let (obs, act) = (sp.decode_obs(o), sp.decode_action(a));
            Ok((0..sp.n_joint_obs())
                .map(|n| rp.predict(&ErrorQuery { obs: obs.clone(), act: act.clone(), reward: r_hat, next_obs: sp.decode_obs(n) }))
                .collect())
        }
    }
}

/// Policy-averaged step errors `E[o][o'] = sum_a pi(a|o) err(o, a, o')`,
/// summed over joint actions in ascending order.
pub fn expected_error_matrix(
    ms: &LocalModelSet,
    oracle: ErrorOracle<'_>,
    policy: &JointPolicy,
) -> Result<Vec<Vec<f64>>, RolloutError> {
    let sp = &ms.spaces;
    (0..sp.n_joint_obs())
        .into_par_iter()
        .map(|o| {
            let pa = policy.joint_action_dist(&sp.decode_obs(o));
            let mut row = vec![0.0; sp.n_joint_obs()];
            for (a, &p) in pa.iter().enumerate() {
                let errs = step_error_row(ms, oracle, o, a)?;
                for (r, e) in row.iter_mut().zip(errs) {
                    *r += p * e;
                }
            }
            Ok(row)
        })
        .collect()
}

/// Number of open-loop `H`-step joint-observation sequences.
pub fn sequence_space_size(n_joint_obs: usize, h: usize) -> u128 {
    let mut size: u128 = 1;
    for _ in 0..h {
        size = size.saturating_mul(n_joint_obs as u128);
    }
    size
}

/// Exact expected score of the open-loop sequence `seq` (the `H` next joint
/// observations, by index) from `s0`, given the error row at `s0` and the
/// policy-averaged matrix for later steps. Accumulates left to right.
pub fn sequence_score(first_row: &[f64], matrix: &[Vec<f64>], seq: &[usize], gamma_plan: f64) -> f64 {
    let mut score = first_row[seq[0]];
    for t in 1..seq.len() {
        score += gamma_plan.powi(t as i32) * matrix[seq[t - 1]][seq[t]];
    }
    score
}

/// Enumeration-mode shooting: one trajectory per open-loop sequence in
/// lexicographic order (first step most significant), each scored by its
/// exact expectation over policy actions after the first step. Steps after
/// the first carry the first joint action as a placeholder.
pub fn shoot_enumerated(
    ms: &LocalModelSet,
    oracle: ErrorOracle<'_>,
    policy: &JointPolicy,
    s0: &ModelState,
    h: usize,
    gamma_plan: f64,
) -> Result<Vec<PlannedTrajectory>, RolloutError> {
    let sp = &ms.spaces;
    let n = sp.n_joint_obs();
    let size = sequence_space_size(n, h);
    if h == 0 {
        return Err(RolloutError::Config("planning horizon H must be at least 1".into()));
    }
    if size > BRUTE_FORCE_LIMIT {
        return Err(RolloutError::Guard { size, limit: BRUTE_FORCE_LIMIT });
    }
    let (o0, a0) = (sp.encode_obs(&s0.obs), sp.encode_action(&s0.act));
    let first_row = step_error_row(ms, oracle, o0, a0)?;
    let matrix = expected_error_matrix(ms, oracle, policy)?;
    let pred_reward = ms.predict_joint_idx(o0, a0).mean_reward();
    let mut out = Vec::with_capacity(size as usize);
    for code in 0..size as usize {
        let mut seq = vec![0usize; h];
        let mut rest = code;
        for t in (0..h).rev() {
            seq[t] = rest % n;
            rest /= n;
        }
        let score = sequence_score(&first_row, &matrix, &seq, gamma_plan);
        let mut prev = o0;
        let steps = seq
            .iter()
            .enumerate()
            .map(|(t, &next)| {
                let err = if t == 0 { first_row[next] } else { matrix[prev][next] };
                let step = PlannedStep {
                    state: ModelState { obs: sp.decode_obs(prev), act: s0.act.clone() },
                    action: ModelAction {
                        next_obs: sp.decode_obs(next),
                        pred_reward: if t == 0 { pred_reward } else { ms.predict_joint_idx(prev, a0).mean_reward() },
                    },
                    predicted_error: err,
                };
                prev = next;
                step
            })
            .collect();
        out.push(PlannedTrajectory { steps, score });
    }
    Ok(out)
}

/// Exhaustive planner: depth-first search over every open-loop `H`-step
/// sequence with exact expectations over policy actions after the first step.
/// Returns the first model action of the optimum and its expected score,
/// under the same selection rule and tie-breaking as [`select_with`].
pub fn brute_force_plan(
    ms: &LocalModelSet,
    oracle: ErrorOracle<'_>,
    policy: &JointPolicy,
    s0: &ModelState,
    h: usize,
    gamma_plan: f64,
    selection: Selection,
) -> Result<(ModelAction, f64), RolloutError> {
    let sp = &ms.spaces;
    let n = sp.n_joint_obs();
    let size = sequence_space_size(n, h);
    if h == 0 {
        return Err(RolloutError::Config("planning horizon H must be at least 1".into()));
    }
    if size > BRUTE_FORCE_LIMIT {
        return Err(RolloutError::Guard { size, limit: BRUTE_FORCE_LIMIT });
    }
    let (o0, a0) = (sp.encode_obs(&s0.obs), sp.encode_action(&s0.act));
    let first_row = step_error_row(ms, oracle, o0, a0)?;
    let matrix = if h > 1 { expected_error_matrix(ms, oracle, policy)? } else { Vec::new() };

    struct Search<'a> {
        matrix: &'a [Vec<f64>],
        h: usize,
        gamma: f64,
        selection: Selection,
        best: Option<(f64, usize)>,
    }
    impl Search<'_> {
        fn visit(&mut self, first: usize, prev: usize, depth: usize, score: f64) {
            if depth == self.h {
                let better = match self.best {
                    None => true,
                    Some((b, _)) => match self.selection {
                        Selection::MinError => score < b,
                        Selection::LiteralArgmax => score > b,
                    },
                };
                if better {
                    self.best = Some((score, first));
                }
                return;
            }
            for next in 0..self.matrix.len() {
                let s = score + self.gamma.powi(depth as i32) * self.matrix[prev][next];
                self.visit(first, next, depth + 1, s);
            }
        }
    }
    let mut search = Search { matrix: &matrix, h, gamma: gamma_plan, selection, best: None };
    for (first, &e0) in first_row.iter().enumerate() {
        search.visit(first, first, 1, e0);
    }
    let (score, first) = search.best.expect("at least one sequence");
    let action = ModelAction { next_obs: sp.decode_obs(first), pred_reward: ms.predict_joint_idx(o0, a0).mean_reward() };
    Ok((action, score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SpaceSpec;

    fn traj(score: f64, tag: usize) -> PlannedTrajectory {
        PlannedTrajectory {
            steps: vec![PlannedStep {
                state: ModelState { obs: JointObservation(vec![0]), act: JointAction(vec![0]) },
                action: ModelAction { next_obs: JointObservation(vec![tag]), pred_reward: 0.0 },
                predicted_error: score,
            }],
            score,
        }
    }

    #[test]
    fn selection_rules() {
        assert_eq!(select_prediction(&[traj(1.0, 7)]).unwrap().next_obs, JointObservation(vec![7]));
        let ts = [traj(3.0, 0), traj(1.0, 1), traj(2.0, 2)];
        assert_eq!(select_prediction(&ts).unwrap().next_obs, JointObservation(vec![1]));
        assert_eq!(select_with(&ts, Selection::LiteralArgmax).unwrap().next_obs, JointObservation(vec![0]));
        let tied = [traj(1.0, 4), traj(1.0, 5)];
        assert_eq!(select_prediction(&tied).unwrap().next_obs, JointObservation(vec![4]));
        assert!(matches!(select_prediction(&[]), Err(RolloutError::NoTrajectories)));
    }

    #[test]
    fn config_validation() {
        let ok = RolloutConfig::default();
        ok.validate().unwrap();
        assert!(RolloutConfig { h: 0, ..ok.clone() }.validate().is_err());
        assert!(RolloutConfig { h: 11, ..ok.clone() }.validate().is_err());
        assert!(RolloutConfig { l: 0, ..ok.clone() }.validate().is_err());
        assert!(RolloutConfig { m: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn sequence_space_saturates() {
        assert_eq!(sequence_space_size(4, 2), 16);
        assert!(sequence_space_size(256, 40) > BRUTE_FORCE_LIMIT);
    }

    #[test]
    fn guard_refuses_large_spaces() {
        let sp = SpaceSpec::new(vec![16, 16], 1);
        let n = sp.n_cells();
        let uni = vec![vec![1.0 / 16.0; 16]; n];
        let ms = LocalModelSet::from_tables(sp.clone(), vec![uni.clone(), uni], vec![vec![0.0; n]; 2]).unwrap();
        let pol = JointPolicy::from_tables(sp.clone(), &[vec![vec![1.0]; 16], vec![vec![1.0]; 16]]).unwrap();
        let dyn_ = crate::envs::JointObsDynamics::from_tables(
            sp.clone(),
            vec![vec![1.0 / 256.0; 256]; n],
            vec![0.0; n],
            {
                let mut v = vec![0.0; 256];
                v[0] = 1.0;
                v
            },
            0.9,
        )
        .unwrap();
        let s0 = ModelState { obs: JointObservation(vec![0, 0]), act: JointAction(vec![0, 0]) };
        match brute_force_plan(&ms, ErrorOracle::Exact(&dyn_), &pol, &s0, 3, 1.0, Selection::MinError) {
            Err(RolloutError::Guard { size, .. }) => assert_eq!(size, 256u128.pow(3)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
