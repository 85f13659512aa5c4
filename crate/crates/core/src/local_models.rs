//! Per-agent predictive models `P^i(o^i', R^i | o, a)`.
//!
//! Each agent's model sees the full joint observation and joint action and
//! predicts a categorical distribution over that agent's next observation plus
//! a scalar estimate of the shared reward. The joint prediction is the product
//! of the per-agent categoricals; the global reward estimate is the mean of
//! the per-agent reward heads.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::envs::JointObsDynamics;
use crate::nn::{one_hot_blocks, softmax, Adam, Mlp, SparseInput};
use crate::rng::SeedKey;
use crate::types::{sample_categorical, JointAction, JointObservation, SpaceSpec};

const NORM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("local_models: training needs a non-empty dataset")]
    EmptyDataset,
    #[error("local_models: epochs must be at least 1")]
    Epochs,
    #[error("local_models: dataset spaces {got:?} do not match model spaces {expected:?}")]
    SpaceMismatch { expected: SpaceSpec, got: SpaceSpec },
    #[error("local_models: agent {agent} cell {cell}: {msg}")]
    Invalid { agent: usize, cell: usize, msg: String },
    #[error("local_models: {0}")]
    Shape(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelBackend {
    Tabular,
    Mlp,
}

impl FromStr for ModelBackend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tabular" => Ok(Self::Tabular),
            "mlp" => Ok(Self::Mlp),
            other => Err(format!("unknown backend `{other}` (expected tabular or mlp)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelHyper {
    pub backend: ModelBackend,
    /// Laplace smoothing for the tabular backend.
    pub alpha: f64,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    /// Cap on samples visited per epoch by the mlp backend.
    pub samples_per_epoch: usize,
}

impl Default for ModelHyper {
    fn default() -> Self {
        Self {
            backend: ModelBackend::Tabular,
            alpha: 0.5,
            hidden: vec![64],
            lr: 5e-4,
            batch_size: 64,
            samples_per_epoch: 2048,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Predictor {
    /// Row-major `[cell][next obs]` probabilities and per-cell rewards.
    Table { probs: Vec<f64>, reward: Vec<f64> },
    Mlp { net: Mlp, opt: Adam },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    pub agent: usize,
    pub obs_size: usize,
    pub predictor: Predictor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalModelSet {
    pub spaces: SpaceSpec,
    pub models: Vec<LocalModel>,
    pub trained_steps: u64,
    pub hyper: ModelHyper,
}

/// Factored joint prediction for one `(o, a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointPrediction {
    /// Probability of every joint next observation, indexed by
    /// [`SpaceSpec::encode_obs`].
    pub table: Vec<f64>,
    pub agent_rewards: Vec<f64>,
}

impl JointPrediction {
    pub fn mean_reward(&self) -> f64 {
        self.agent_rewards.iter().sum::<f64>() / self.agent_rewards.len() as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelTrainStats {
    /// Mean next-observation negative log-likelihood (summed over agents).
    pub nll: f64,
    pub reward_mse: f64,
}

fn model_input(spaces: &SpaceSpec, o: &JointObservation, a: &JointAction) -> SparseInput {
    let mut ids = o.0.clone();
    ids.extend_from_slice(&a.0);
    let mut sizes = spaces.obs_sizes.clone();
    sizes.extend(std::iter::repeat(spaces.n_actions).take(spaces.n_agents()));
    one_hot_blocks(&ids, &sizes)
}

impl LocalModelSet {
    pub fn new(spaces: SpaceSpec, hyper: ModelHyper, seed: &SeedKey) -> Self {
        let n_cells = spaces.n_cells();
        let input_dim: usize = spaces.obs_sizes.iter().sum::<usize>() + spaces.n_agents() * spaces.n_actions;
        let models = spaces
            .obs_sizes
            .iter()
            .enumerate()
            .map(|(agent, &size)| {
                let predictor = match hyper.backend {
                    ModelBackend::Tabular => Predictor::Table {
                        probs: vec![1.0 / size as f64; n_cells * size],
                        reward: vec![0.0; n_cells],
                    },
                    ModelBackend::Mlp => {
                        let net = Mlp::new(input_dim, &hyper.hidden, size + 1, &mut seed.indexed("agent", agent).rng());
                        let opt = Adam::new(net.n_params(), hyper.lr);
                        Predictor::Mlp { net, opt }
                    }
                };
                LocalModel { agent, obs_size: size, predictor }
            })
            .collect();
        Self { spaces, models, trained_steps: 0, hyper }
    }

    /// Table-backed set from explicit per-agent distributions
    /// `probs[agent][cell]` and reward estimates `rewards[agent][cell]`.
    pub fn from_tables(spaces: SpaceSpec, probs: Vec<Vec<Vec<f64>>>, rewards: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let n_cells = spaces.n_cells();
        if probs.len() != spaces.n_agents() || rewards.len() != spaces.n_agents() {
            return Err(ModelError::Shape("one table per agent required".into()));
        }
        let mut models = Vec::new();
        for (agent, (rows, rew)) in probs.into_iter().zip(rewards).enumerate() {
            let size = spaces.obs_sizes[agent];
            if rows.len() != n_cells || rew.len() != n_cells || rows.iter().any(|r| r.len() != size) {
                return Err(ModelError::Shape(format!("agent {agent} table has wrong shape")));
            }
            models.push(LocalModel {
                agent,
                obs_size: size,
                predictor: Predictor::Table { probs: rows.into_iter().flatten().collect(), reward: rew },
            });
        }
        let set = Self { spaces, models, trained_steps: 0, hyper: ModelHyper::default() };
        set.validate()?;
        Ok(set)
    }

    /// Per-agent marginals and rewards of `dyn_`. Exact whenever the true
    /// dynamics factor across agents.
    pub fn from_dynamics(dyn_: &JointObsDynamics) -> Self {
        let spaces = dyn_.spaces.clone();
        let nja = spaces.n_joint_actions();
        let probs = (0..spaces.n_agents())
            .map(|i| {
                (0..spaces.n_cells()).map(|c| dyn_.agent_marginal(c / nja, c % nja, i)).collect::<Vec<_>>()
            })
            .collect();
        let rewards = vec![dyn_.reward.clone(); spaces.n_agents()];
        Self::from_tables(spaces, probs, rewards).expect("marginals of valid dynamics are valid")
    }

    pub fn n_agents(&self) -> usize {
        self.models.len()
    }

    /// Agent `i`'s next-observation distribution at the encoded cell.
    pub fn agent_dist(&self, i: usize, o: usize, a: usize) -> Vec<f64> {
        let m = &self.models[i];
        match &m.predictor {
            Predictor::Table { probs, .. } => {
                let c = self.spaces.cell(o, a);
                probs[c * m.obs_size..(c + 1) * m.obs_size].to_vec()
            }
            Predictor::Mlp { net, .. } => {
                let out = net.forward(&self.input(o, a));
                softmax(&out[..m.obs_size])
            }
        }
    }

    pub fn agent_reward(&self, i: usize, o: usize, a: usize) -> f64 {
        match &self.models[i].predictor {
            Predictor::Table { reward, .. } => reward[self.spaces.cell(o, a)],
            Predictor::Mlp { net, .. } => net.forward(&self.input(o, a))[self.models[i].obs_size],
        }
    }

    /// All agents' distributions and reward estimates at one cell.
    pub fn agent_outputs(&self, o: usize, a: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        (0..self.n_agents())
            .map(|i| match &self.models[i].predictor {
                Predictor::Mlp { net, .. } => {
                    let out = net.forward(&self.input(o, a));
                    let size = self.models[i].obs_size;
                    (softmax(&out[..size]), out[size])
                }
                Predictor::Table { .. } => (self.agent_dist(i, o, a), self.agent_reward(i, o, a)),
            })
            .unzip()
    }

    fn input(&self, o: usize, a: usize) -> SparseInput {
        model_input(&self.spaces, &self.spaces.decode_obs(o), &self.spaces.decode_action(a))
    }

    pub fn predict_joint(&self, o: &JointObservation, a: &JointAction) -> JointPrediction {
        self.predict_joint_idx(self.spaces.encode_obs(o), self.spaces.encode_action(a))
    }

    pub fn predict_joint_idx(&self, o: usize, a: usize) -> JointPrediction {
        let (dists, agent_rewards) = self.agent_outputs(o, a);
        let table = (0..self.spaces.n_joint_obs())
            .map(|o2| {
                let ids = self.spaces.decode_obs(o2);
                dists.iter().enumerate().map(|(i, d)| d[ids.agent(i)]).product()
            })
            .collect();
        JointPrediction { table, agent_rewards }
    }

    /// Draw each agent's next observation from its own categorical. Returns the
    /// next joint observation and the mean of the reward heads.
    pub fn sample_joint_with<R: Rng + ?Sized>(
        &self,
        o: &JointObservation,
        a: &JointAction,
        rng: &mut R,
    ) -> (JointObservation, f64) {
        let (oi, ai) = (self.spaces.encode_obs(o), self.spaces.encode_action(a));
        let (dists, rewards) = self.agent_outputs(oi, ai);
        let next = dists.iter().map(|d| sample_categorical(d, rng)).collect();
        (JointObservation(next), rewards.iter().sum::<f64>() / rewards.len() as f64)
    }

    pub fn sample_joint(&self, o: &JointObservation, a: &JointAction, seed: &SeedKey) -> (JointObservation, f64) {
        self.sample_joint_with(o, a, &mut seed.rng())
    }

    /// One-step supervised fit on `d`. The tabular backend recomputes smoothed
    /// conditional frequencies and per-cell mean rewards from the whole
    /// dataset; the mlp backend runs `epochs` passes of categorical
    /// cross-entropy plus squared reward error.
    pub fn train_one_step(&mut self, d: &Dataset, epochs: usize, seed: &SeedKey) -> Result<ModelTrainStats, ModelError> {
        if epochs < 1 {
            return Err(ModelError::Epochs);
        }
        if d.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        if d.spaces() != &self.spaces {
            return Err(ModelError::SpaceMismatch { expected: self.spaces.clone(), got: d.spaces().clone() });
        }
        match self.hyper.backend {
            ModelBackend::Tabular => self.fit_tabular(d),
            ModelBackend::Mlp => self.fit_mlp(d, epochs, seed),
        }
        self.trained_steps += 1;
        Ok(ModelTrainStats { nll: self.nll(d), reward_mse: self.reward_mse(d) })
    }

    fn fit_tabular(&mut self, d: &Dataset) {
        let n_cells = self.spaces.n_cells();
        let alpha = self.hyper.alpha;
        let mut visits = vec![0.0; n_cells];
        let mut reward_sum = vec![0.0; n_cells];
        let mut counts: Vec<Vec<f64>> = self.models.iter().map(|m| vec![0.0; n_cells * m.obs_size]).collect();
        for t in d.iter() {
            let c = self.spaces.cell(self.spaces.encode_obs(&t.obs), self.spaces.encode_action(&t.act));
            visits[c] += 1.0;
            reward_sum[c] += t.reward;
            for (i, m) in self.models.iter().enumerate() {
                counts[i][c * m.obs_size + t.next_obs.agent(i)] += 1.0;
            }
        }
        let global_mean = d.iter().map(|t| t.reward).sum::<f64>() / d.len() as f64;
        let reward: Vec<f64> =
            (0..n_cells).map(|c| if visits[c] > 0.0 { reward_sum[c] / visits[c] } else { global_mean }).collect();
        for (m, cnt) in self.models.iter_mut().zip(counts) {
            let size = m.obs_size;
            let mut probs = vec![0.0; n_cells * size];
            for c in 0..n_cells {
                let denom = visits[c] + alpha * size as f64;
                for k in 0..size {
                    probs[c * size + k] =
                        if denom > 0.0 { (cnt[c * size + k] + alpha) / denom } else { 1.0 / size as f64 };
                }
            }
            m.predictor = Predictor::Table { probs, reward: reward.clone() };
        }
    }

    fn fit_mlp(&mut self, d: &Dataset, epochs: usize, seed: &SeedKey) {
        let inputs: Vec<SparseInput> = d.iter().map(|t| model_input(&self.spaces, &t.obs, &t.act)).collect();
        let batch = self.hyper.batch_size.max(1);
        let per_epoch = self.hyper.samples_per_epoch.min(d.len()).max(1);
        for (i, m) in self.models.iter_mut().enumerate() {
            let size = m.obs_size;
            let Predictor::Mlp { net, opt } = &mut m.predictor else { continue };
            opt.lr = self.hyper.lr;
            for epoch in 0..epochs {
                let mut order: Vec<usize> = (0..d.len()).collect();
                order.shuffle(&mut seed.indexed("agent", i).indexed("epoch", epoch).rng());
                order.truncate(per_epoch);
                for chunk in order.chunks(batch) {
                    let mut grad = vec![0.0; net.n_params()];
                    let scale = 1.0 / chunk.len() as f64;
                    for &j in chunk {
                        let t = d.get(j).unwrap();
                        let trace = net.forward_trace(&inputs[j]);
                        let mut d_out = softmax(&trace.output[..size]);
                        d_out[t.next_obs.agent(i)] -= 1.0;
                        d_out.push(2.0 * (trace.output[size] - t.reward));
                        d_out.iter_mut().for_each(|v| *v *= scale);
                        net.backward(&inputs[j], &trace, &d_out, &mut grad);
                    }
                    opt.step(net.params_mut(), &grad);
                }
            }
        }
    }

    /// Mean over `d` of `-sum_i log P^i(o^i' | o, a)`.
    pub fn nll(&self, d: &Dataset) -> f64 {
        if d.is_empty() {
            return 0.0;
        }
        let total: f64 = d
            .iter()
            .map(|t| {
                let (o, a) = (self.spaces.encode_obs(&t.obs), self.spaces.encode_action(&t.act));
                (0..self.n_agents()).map(|i| -self.agent_dist(i, o, a)[t.next_obs.agent(i)].max(1e-300).ln()).sum::<f64>()
            })
            .sum();
        total / d.len() as f64
    }

    fn reward_mse(&self, d: &Dataset) -> f64 {
        let total: f64 = d
            .iter()
            .map(|t| {
                let (o, a) = (self.spaces.encode_obs(&t.obs), self.spaces.encode_action(&t.act));
                (0..self.n_agents()).map(|i| (self.agent_reward(i, o, a) - t.reward).powi(2)).sum::<f64>()
                    / self.n_agents() as f64
            })
            .sum();
        total / d.len() as f64
    }

    /// Every predicted distribution is non-negative and sums to one, and
    /// every reward estimate is finite.
    pub fn validate(&self) -> Result<(), ModelError> {
        for (agent, m) in self.models.iter().enumerate() {
            match &m.predictor {
                Predictor::Table { probs, reward } => {
                    if probs.len() != self.spaces.n_cells() * m.obs_size || reward.len() != self.spaces.n_cells() {
                        return Err(ModelError::Shape(format!("agent {agent} table has wrong shape")));
                    }
                    for (cell, row) in probs.chunks(m.obs_size).enumerate() {
                        check_row(agent, cell, row, reward[cell])?;
                    }
                }
                Predictor::Mlp { net, .. } => {
                    if net.params().iter().any(|p| !p.is_finite()) {
                        return Err(ModelError::Invalid { agent, cell: 0, msg: "non-finite network parameter".into() });
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_row(agent: usize, cell: usize, row: &[f64], reward: f64) -> Result<(), ModelError> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(ModelError::Invalid { agent, cell, msg: "negative or non-finite probability".into() });
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > NORM_TOL {
        return Err(ModelError::Invalid { agent, cell, msg: format!("distribution sums to {sum}") });
    }
    if !reward.is_finite() {
        return Err(ModelError::Invalid { agent, cell, msg: "non-finite reward estimate".into() });
    }
    Ok(())
}
