//! The model-MMDP reward: per-transition prediction-error labels, a learned
//! regressor of those labels, and the exact log-ratio error available when
//! the true joint-observation dynamics is known.
//!
//! Planning treats these quantities as errors to be minimised, i.e. the
//! planner's reward is their negation.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::envs::JointObsDynamics;
use crate::local_models::LocalModelSet;
use crate::nn::{one_hot_blocks, Adam, Mlp, SparseInput};
use crate::rng::SeedKey;
use crate::types::{sample_categorical, EnvTransition, JointAction, JointObservation, SpaceSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SupportSide {
    /// The true dynamics gives zero probability to the queried outcome.
    True,
    /// The given agent's local model gives zero probability to its component.
    Model { agent: usize },
}

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("model_reward: training needs a non-empty dataset")]
    EmptyDataset,
    #[error("model_reward: epochs must be at least 1")]
    Epochs,
    #[error("model_reward: {queries} queries but {labels} labels")]
    LabelCount { queries: usize, labels: usize },
    #[error("model_reward: support mismatch at (o={o}, a={a}, o'={next}): {side:?} probability is zero")]
    SupportMismatch { o: usize, a: usize, next: usize, side: SupportSide },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardHyper {
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// Model draws averaged per label.
    pub n_draws: usize,
    pub batch_size: usize,
    pub holdout_fraction: f64,
    /// Cap on samples visited per epoch.
    pub samples_per_epoch: usize,
}

impl Default for RewardHyper {
    fn default() -> Self {
        Self { hidden: vec![64], lr: 1e-3, n_draws: 4, batch_size: 64, holdout_fraction: 0.2, samples_per_epoch: 2048 }
    }
}

/// Input of the error regressor: a transition whose reward is either the
/// true reward (training) or the model's own reward estimate (rollout).
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorQuery {
    pub obs: JointObservation,
    pub act: JointAction,
    pub reward: f64,
    pub next_obs: JointObservation,
}

impl From<&EnvTransition> for ErrorQuery {
    fn from(t: &EnvTransition) -> Self {
        Self { obs: t.obs.clone(), act: t.act.clone(), reward: t.reward, next_obs: t.next_obs.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRewardPredictor {
    pub spaces: SpaceSpec,
    pub hyper: RewardHyper,
    pub net: Mlp,
    pub opt: Adam,
    /// Training-set MSE after each epoch of the most recent fit.
    pub train_losses: Vec<f64>,
    pub held_out_mse: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorPredictorStats {
    pub train_losses: Vec<f64>,
    pub held_out_mse: Option<f64>,
    pub n_train: usize,
    pub n_held_out: usize,
}

impl ModelRewardPredictor {
    pub fn new(spaces: SpaceSpec, hyper: RewardHyper, seed: &SeedKey) -> Self {
        let n = spaces.n_agents();
        let input = 2 * spaces.obs_sizes.iter().sum::<usize>() + n * spaces.n_actions + 1;
        let net = Mlp::new(input, &hyper.hidden, 1, &mut seed.child("error-predictor").rng());
        let opt = Adam::new(net.n_params(), hyper.lr);
        Self { spaces, hyper, net, opt, train_losses: Vec::new(), held_out_mse: None }
    }

    fn input(&self, o: &JointObservation, a: &JointAction, reward: f64, o2: &JointObservation) -> SparseInput {
        let sp = &self.spaces;
        let obs_dim: usize = sp.obs_sizes.iter().sum();
        let act_dim = sp.n_agents() * sp.n_actions;
        let mut x = one_hot_blocks(&o.0, &sp.obs_sizes);
        let acts = vec![sp.n_actions; sp.n_agents()];
        x.extend(one_hot_blocks(&a.0, &acts).into_iter().map(|(j, v)| (j + obs_dim, v)));
        x.push((obs_dim + act_dim, reward));
        x.extend(one_hot_blocks(&o2.0, &sp.obs_sizes).into_iter().map(|(j, v)| (j + obs_dim + act_dim + 1, v)));
        x
    }

    fn raw(&self, q: &ErrorQuery) -> f64 {
        self.net.forward(&self.input(&q.obs, &q.act, q.reward, &q.next_obs))[0]
    }

    /// Predicted error, clamped at zero.
    pub fn predict(&self, q: &ErrorQuery) -> f64 {
        let v = self.raw(q);
        if v.is_finite() {
            v.max(0.0)
        } else {
            0.0
        }
    }

    fn mse(&self, queries: &[ErrorQuery], labels: &[f64], idx: &[usize]) -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        idx.iter().map(|&j| (self.raw(&queries[j]) - labels[j]).powi(2)).sum::<f64>() / idx.len() as f64
    }

    /// Squared-error regression onto `labels`, holding out a seeded fraction
    /// of the samples for evaluation.
    pub fn train_on_labels(
        &mut self,
        queries: &[ErrorQuery],
        labels: &[f64],
        epochs: usize,
        seed: &SeedKey,
    ) -> Result<ErrorPredictorStats, RewardError> {
        if queries.len() != labels.len() {
            return Err(RewardError::LabelCount { queries: queries.len(), labels: labels.len() });
        }
        if queries.is_empty() {
            return Err(RewardError::EmptyDataset);
        }
        if epochs < 1 {
            return Err(RewardError::Epochs);
        }
        let n = queries.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed.child("split").rng());
        let n_held = if n >= 2 { ((n as f64 * self.hyper.holdout_fraction).floor() as usize).min(n - 1) } else { 0 };
        let (held, train) = order.split_at(n_held);
        let train = train.to_vec();
        let inputs: Vec<SparseInput> =
            queries.iter().map(|q| self.input(&q.obs, &q.act, q.reward, &q.next_obs)).collect();
        let per_epoch = self.hyper.samples_per_epoch.min(train.len()).max(1);
        let monitor: Vec<usize> = train.iter().copied().take(self.hyper.samples_per_epoch.max(1)).collect();
        let batch = self.hyper.batch_size.max(1);
        self.opt.lr = self.hyper.lr;
        let mut losses = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let mut ord = train.clone();
            ord.shuffle(&mut seed.indexed("epoch", epoch).rng());
            ord.truncate(per_epoch);
            for chunk in ord.chunks(batch) {
                let mut grad = vec![0.0; self.net.n_params()];
                let scale = 1.0 / chunk.len() as f64;
                for &j in chunk {
                    let trace = self.net.forward_trace(&inputs[j]);
                    let d = 2.0 * scale * (trace.output[0] - labels[j]);
                    self.net.backward(&inputs[j], &trace, &[d], &mut grad);
                }
                self.opt.step(self.net.params_mut(), &grad);
            }
            losses.push(self.mse(queries, labels, &monitor));
        }
        let held_out_mse = if held.is_empty() { None } else { Some(self.mse(queries, labels, held)) };
        self.train_losses = losses.clone();
        self.held_out_mse = held_out_mse;
        Ok(ErrorPredictorStats { train_losses: losses, held_out_mse, n_train: train.len(), n_held_out: held.len() })
    }
}

/// Average over `n_draws` model draws of
/// `sum_i [o^i_hat != o^i'] + |R^i_hat - R|`.
pub fn label_error(t: &EnvTransition, ms: &LocalModelSet, n_draws: usize, seed: &SeedKey) -> f64 {
    let n_draws = n_draws.max(1);
    let (o, a) = (ms.spaces.encode_obs(&t.obs), ms.spaces.encode_action(&t.act));
    let (dists, rewards) = ms.agent_outputs(o, a);
    let reward_term: f64 = rewards.iter().map(|r| (r - t.reward).abs()).sum();
    let mut rng = seed.rng();
    let mut misses = 0usize;
    for _ in 0..n_draws {
        for (i, d) in dists.iter().enumerate() {
            if sample_categorical(d, &mut rng) != t.next_obs.agent(i) {
                misses += 1;
            }
        }
    }
    misses as f64 / n_draws as f64 + reward_term
}

/// Expectation of [`label_error`] over model draws.
pub fn expected_label_error(t: &EnvTransition, ms: &LocalModelSet) -> f64 {
    let (o, a) = (ms.spaces.encode_obs(&t.obs), ms.spaces.encode_action(&t.act));
    let (dists, rewards) = ms.agent_outputs(o, a);
    dists
        .iter()
        .zip(&rewards)
        .enumerate()
        .map(|(i, (d, r))| 1.0 - d[t.next_obs.agent(i)] + (r - t.reward).abs())
        .sum()
}

/// Labels every transition of `d` with [`label_error`] under `ms` and fits a
/// copy of `rp` to them.
pub fn train_error_predictor(
    rp: &ModelRewardPredictor,
    d: &Dataset,
    ms: &LocalModelSet,
    epochs: usize,
    seed: &SeedKey,
) -> Result<(ModelRewardPredictor, ErrorPredictorStats), RewardError> {
    if d.is_empty() {
        return Err(RewardError::EmptyDataset);
    }
    let entries: Vec<&EnvTransition> = d.iter().collect();
    let labels: Vec<f64> = entries
        .par_iter()
        .enumerate()
        .map(|(j, t)| label_error(t, ms, rp.hyper.n_draws, &seed.indexed("label", j)))
        .collect();
    let queries: Vec<ErrorQuery> = entries.iter().map(|t| ErrorQuery::from(*t)).collect();
    let mut out = rp.clone();
    let stats = out.train_on_labels(&queries, &labels, epochs, &seed.child("fit"))?;
    Ok((out, stats))
}

/// Exact errors smaller than this in magnitude are reported as zero.
pub const LOG_RATIO_FLOOR: f64 = 1e-12;

/// `sum_i log P^i_hat(o^i' | o, a) - log P(o' | o, a)` at encoded indices.
pub fn exact_model_reward(
    dyn_: &JointObsDynamics,
    ms: &LocalModelSet,
    o: usize,
    a: usize,
    next: usize,
) -> Result<f64, RewardError> {
    let p = dyn_.row(o, a)[next];
    if p <= 0.0 {
        return Err(RewardError::SupportMismatch { o, a, next, side: SupportSide::True });
    }
    let ids = ms.spaces.decode_obs(next);
    let mut total = -p.ln();
    for i in 0..ms.n_agents() {
        let q = ms.agent_dist(i, o, a)[ids.agent(i)];
        if q <= 0.0 {
            return Err(RewardError::SupportMismatch { o, a, next, side: SupportSide::Model { agent: i } });
        }
        total += q.ln();
    }
    // Log-space rounding leaves ~1e-16 residue where the model is exact;
    // left alone it would break planner ties systematically.
    Ok(if total.abs() < LOG_RATIO_FLOOR { 0.0 } else { total })
}

/// `E_{o' ~ prod_i P^i_hat}[exact_model_reward]`, summing only outcomes the
/// factored model can produce.
pub fn expected_exact_model_reward(
    dyn_: &JointObsDynamics,
    ms: &LocalModelSet,
    o: usize,
    a: usize,
) -> Result<f64, RewardError> {
    let q = ms.predict_joint_idx(o, a).table;
    let mut total = 0.0;
    for (next, &qn) in q.iter().enumerate() {
        if qn > 0.0 {
            total += qn * exact_model_reward(dyn_, ms, o, a, next)?;
        }
    }
    Ok(total)
}

/// Error signal used inside planning: the learned regressor or the exact
/// log-ratio when true dynamics is available.
#[derive(Clone, Copy, Debug)]
pub enum ErrorOracle<'a> {
    Learned(&'a ModelRewardPredictor),
    Exact(&'a JointObsDynamics),
}

impl ErrorOracle<'_> {
    /// Error of the model step `(o, a) -> (o', r_hat)`.
    pub fn error(
        &self,
        ms: &LocalModelSet,
        o: &JointObservation,
        a: &JointAction,
        r_hat: f64,
        next: &JointObservation,
    ) -> Result<f64, RewardError> {
        match self {
            ErrorOracle::Learned(rp) => Ok(rp.predict(&ErrorQuery {
                obs: o.clone(),
                act: a.clone(),
                reward: r_hat,
                next_obs: next.clone(),
            })),
            ErrorOracle::Exact(d) => {
                exact_model_reward(d, ms, ms.spaces.encode_obs(o), ms.spaces.encode_action(a), ms.spaces.encode_obs(next))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::preset;

    fn spaces() -> SpaceSpec {
        SpaceSpec::new(vec![2, 2], 1)
    }

    fn set(p1: [f64; 2], p2: [f64; 2], r: f64) -> LocalModelSet {
        let sp = spaces();
        let n = sp.n_cells();
        LocalModelSet::from_tables(sp, vec![vec![p1.to_vec(); n], vec![p2.to_vec(); n]], vec![vec![r; n]; 2]).unwrap()
    }

    fn tr(next: [usize; 2], r: f64) -> EnvTransition {
        EnvTransition {
            obs: JointObservation(vec![0, 0]),
            act: JointAction(vec![0, 0]),
            reward: r,
            next_obs: JointObservation(next.to_vec()),
            terminal: false,
        }
    }

    #[test]
    fn perfect_deterministic_model_labels_zero() {
        let ms = set([1.0, 0.0], [0.0, 1.0], 0.5);
        assert_eq!(label_error(&tr([0, 1], 0.5), &ms, 4, &SeedKey::new(0)), 0.0);
    }

    #[test]
    fn both_agents_wrong_counts_two() {
        let ms = set([1.0, 0.0], [1.0, 0.0], 0.5);
        assert_eq!(label_error(&tr([1, 1], 0.5), &ms, 3, &SeedKey::new(0)), 2.0);
    }

    #[test]
    fn reward_term_is_absolute_difference_per_agent() {
        let ms = set([1.0, 0.0], [1.0, 0.0], 0.25);
        let l = label_error(&tr([0, 0], 1.0), &ms, 1, &SeedKey::new(0));
        assert!((l - 1.5).abs() < 1e-12);
        assert!((expected_label_error(&tr([0, 0], 1.0), &ms) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn label_is_symmetric_under_agent_swap_for_deterministic_models() {
        let ms = set([0.0, 1.0], [1.0, 0.0], 0.0);
        let swapped = set([1.0, 0.0], [0.0, 1.0], 0.0);
        let t = tr([1, 1], 0.0);
        let ts = tr([1, 1], 0.0);
        assert_eq!(label_error(&t, &ms, 2, &SeedKey::new(1)), label_error(&ts, &swapped, 2, &SeedKey::new(1)));
    }

    #[test]
    fn exact_reward_matches_analytic_log_half() {
        // Model joint [0.5, 0.5] over one agent's two outcomes; true [1, 0]
        // realised as a near point mass so the row stays valid.
        let sp = SpaceSpec::new(vec![2], 1);
        let dyn_ = JointObsDynamics::from_tables(sp.clone(), vec![vec![1.0, 0.0]; 2], vec![0.0; 2], vec![1.0, 0.0], 0.9)
            .unwrap();
        let ms = LocalModelSet::from_tables(sp, vec![vec![vec![0.5, 0.5]; 2]], vec![vec![0.0; 2]]).unwrap();
        let r = exact_model_reward(&dyn_, &ms, 0, 0, 0).unwrap();
        assert!((r - 0.5f64.ln()).abs() < 1e-12);
        match exact_model_reward(&dyn_, &ms, 0, 0, 1) {
            Err(RewardError::SupportMismatch { side: SupportSide::True, next: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn model_side_zero_is_named() {
        let sp = SpaceSpec::new(vec![2], 1);
        let dyn_ =
            JointObsDynamics::from_tables(sp.clone(), vec![vec![0.5, 0.5]; 2], vec![0.0; 2], vec![1.0, 0.0], 0.9).unwrap();
        let ms = LocalModelSet::from_tables(sp, vec![vec![vec![1.0, 0.0]; 2]], vec![vec![0.0; 2]]).unwrap();
        match exact_model_reward(&dyn_, &ms, 0, 0, 1) {
            Err(RewardError::SupportMismatch { side: SupportSide::Model { agent: 0 }, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn factored_truth_gives_zero_everywhere() {
        let env = preset("coop_matrix_chain").unwrap();
        let d = env.derive_joint_obs_dynamics().unwrap();
        let ms = LocalModelSet::from_dynamics(&d);
        for o in 0..d.spaces.n_joint_obs() {
            for a in 0..d.spaces.n_joint_actions() {
                for n in 0..d.spaces.n_joint_obs() {
                    assert!(exact_model_reward(&d, &ms, o, a, n).unwrap().abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_zero_labels_fit_to_zero() {
        let sp = SpaceSpec::new(vec![2, 2], 2);
        let mut rp = ModelRewardPredictor::new(sp.clone(), RewardHyper::default(), &SeedKey::new(0));
        let qs: Vec<ErrorQuery> = (0..64)
            .map(|k| ErrorQuery {
                obs: sp.decode_obs(k % 4),
                act: sp.decode_action(k % 3),
                reward: 0.0,
                next_obs: sp.decode_obs((k / 4) % 4),
            })
            .collect();
        let labels = vec![0.0; qs.len()];
        rp.train_on_labels(&qs, &labels, 100, &SeedKey::new(1)).unwrap();
        assert!(qs.iter().all(|q| rp.predict(q) < 0.05));
    }

    #[test]
    fn predictor_training_is_deterministic_and_rejects_empty() {
        let sp = SpaceSpec::new(vec![2], 2);
        let rp = ModelRewardPredictor::new(sp.clone(), RewardHyper::default(), &SeedKey::new(0));
        let ms = LocalModelSet::from_tables(sp.clone(), vec![vec![vec![0.5, 0.5]; 4]], vec![vec![0.0; 4]]).unwrap();
        let empty = Dataset::new(sp.clone(), 4).unwrap();
        assert!(matches!(train_error_predictor(&rp, &empty, &ms, 1, &SeedKey::new(0)), Err(RewardError::EmptyDataset)));
        let mut d = Dataset::new(sp, 100).unwrap();
        for k in 0..20 {
            d.append(EnvTransition {
                obs: JointObservation(vec![k % 2]),
                act: JointAction(vec![k % 2]),
                reward: 0.0,
                next_obs: JointObservation(vec![(k / 2) % 2]),
                terminal: false,
            })
            .unwrap();
        }
        let a = train_error_predictor(&rp, &d, &ms, 3, &SeedKey::new(5)).unwrap().0;
        let b = train_error_predictor(&rp, &d, &ms, 3, &SeedKey::new(5)).unwrap().0;
        assert_eq!(a, b);
    }
}
