//! Decentralized actors `pi^i(a^i | o^i)`, a centralized critic over the joint
//! observation, and the clipped-ratio policy-gradient update trained on the
//! model dataset.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::envs::{EnvError, TabularDecPomdp};
use crate::nn::{one_hot_blocks, softmax, Adam, Mlp, SparseInput};
use crate::rng::SeedKey;
use crate::stats::mean_and_se;
use crate::types::{sample_categorical, EnvTransition, JointAction, JointObservation, SpaceSpec};

/// Smallest probability any actor assigns to an action.
pub const PROB_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy_learner: model dataset is empty")]
    EmptyDataset,
    #[error("policy_learner: at least one gradient step is required")]
    NoSteps,
    #[error("policy_learner: {0}")]
    Shape(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyBackend {
    Tabular,
    Mlp,
}

impl FromStr for PolicyBackend {
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
pub struct PolicyHyper {
    pub backend: PolicyBackend,
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub clip: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub batch_size: usize,
    pub normalize_advantages: bool,
}

impl Default for PolicyHyper {
    fn default() -> Self {
        Self {
            backend: PolicyBackend::Tabular,
            hidden: vec![64],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            clip: 0.2,
            gae_lambda: 0.95,
            entropy_coef: 0.0,
            batch_size: 256,
            normalize_advantages: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub obs_size: usize,
    pub net: Mlp,
    pub opt: Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointPolicy {
    pub spaces: SpaceSpec,
    pub actors: Vec<Actor>,
    pub version: u64,
}

fn floored(logits: &[f64]) -> Vec<f64> {
    let n = logits.len() as f64;
    let c = 1.0 - n * PROB_FLOOR;
    softmax(logits).into_iter().map(|s| c * s + PROB_FLOOR).collect()
}

impl JointPolicy {
    pub fn new(spaces: SpaceSpec, hyper: &PolicyHyper, seed: &SeedKey) -> Self {
        let hidden: &[usize] = match hyper.backend {
            PolicyBackend::Tabular => &[],
            PolicyBackend::Mlp => &hyper.hidden,
        };
        let actors = spaces
            .obs_sizes
            .iter()
            .enumerate()
            .map(|(i, &size)| {
                let net = Mlp::new(size, hidden, spaces.n_actions, &mut seed.indexed("actor", i).rng());
                let opt = Adam::new(net.n_params(), hyper.actor_lr);
                Actor { obs_size: size, net, opt }
            })
            .collect();
        Self { spaces, actors, version: 0 }
    }

    /// Tabular policy reproducing `tables[agent][obs]` (up to the floor).
    pub fn from_tables(spaces: SpaceSpec, tables: &[Vec<Vec<f64>>]) -> Result<Self, PolicyError> {
        if tables.len() != spaces.n_agents() {
            return Err(PolicyError::Shape("one table per agent required".into()));
        }
        let n_actions = spaces.n_actions;
        let mut policy = Self::new(spaces.clone(), &PolicyHyper::default(), &SeedKey::new(0));
        for (i, table) in tables.iter().enumerate() {
            let size = spaces.obs_sizes[i];
            if table.len() != size || table.iter().any(|r| r.len() != n_actions) {
                return Err(PolicyError::Shape(format!("agent {i} table has wrong shape")));
            }
            let params = policy.actors[i].net.params_mut();
            for (j, row) in table.iter().enumerate() {
                for (k, &p) in row.iter().enumerate() {
                    params[k * size + j] = p.max(1e-300).ln();
                }
            }
        }
        Ok(policy)
    }

    pub fn n_agents(&self) -> usize {
        self.actors.len()
    }

    /// `pi^i(. | o^i)` including the probability floor.
    pub fn agent_probs(&self, agent: usize, obs: usize) -> Vec<f64> {
        floored(&self.actors[agent].net.forward(&[(obs, 1.0)]))
    }

    /// Product distribution over joint actions at `o`.
    pub fn joint_action_dist(&self, o: &JointObservation) -> Vec<f64> {
        let per: Vec<Vec<f64>> = (0..self.n_agents()).map(|i| self.agent_probs(i, o.agent(i))).collect();
        (0..self.spaces.n_joint_actions())
            .map(|ja| {
                let a = self.spaces.decode_action(ja);
                per.iter().enumerate().map(|(i, p)| p[a.agent(i)]).product()
            })
            .collect()
    }

    /// Joint action distributions for every joint observation index.
    pub fn joint_action_table(&self) -> Vec<Vec<f64>> {
        (0..self.spaces.n_joint_obs()).map(|o| self.joint_action_dist(&self.spaces.decode_obs(o))).collect()
    }

    pub fn act_with<R: Rng + ?Sized>(&self, o: &JointObservation, rng: &mut R) -> JointAction {
        JointAction((0..self.n_agents()).map(|i| sample_categorical(&self.agent_probs(i, o.agent(i)), rng)).collect())
    }

    pub fn act(&self, o: &JointObservation, seed: &SeedKey) -> JointAction {
        self.act_with(o, &mut seed.rng())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentralizedCritic {
    pub spaces: SpaceSpec,
    pub backend: PolicyBackend,
    pub net: Mlp,
    pub opt: Adam,
}

impl CentralizedCritic {
    pub fn new(spaces: SpaceSpec, hyper: &PolicyHyper, seed: &SeedKey) -> Self {
        let mut rng = seed.child("critic").rng();
        let net = match hyper.backend {
            PolicyBackend::Tabular => Mlp::new(spaces.n_joint_obs(), &[], 1, &mut rng),
            PolicyBackend::Mlp => Mlp::new(spaces.obs_sizes.iter().sum(), &hyper.hidden, 1, &mut rng),
        };
        let opt = Adam::new(net.n_params(), hyper.critic_lr);
        Self { spaces, backend: hyper.backend, net, opt }
    }

    fn input(&self, o: &JointObservation) -> SparseInput {
        match self.backend {
            PolicyBackend::Tabular => vec![(self.spaces.encode_obs(o), 1.0)],
            PolicyBackend::Mlp => one_hot_blocks(&o.0, &self.spaces.obs_sizes),
        }
    }

    pub fn value(&self, o: &JointObservation) -> f64 {
        self.net.forward(&self.input(o))[0]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PpoStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub clip_fraction: f64,
    pub mean_abs_advantage: f64,
}

/// Generalized advantage estimates over consecutive segments.
///
/// A segment ends at a terminal transition or where `segment_len` entries
/// have been consumed; without `segment_len`, where the next entry does not
/// start from this entry's successor. Segments that end without a terminal
/// bootstrap from the critic.
pub fn gae(
    entries: &[EnvTransition],
    values: &[f64],
    next_values: &[f64],
    gamma: f64,
    lambda: f64,
    segment_len: Option<usize>,
) -> Vec<f64> {
    let n = entries.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let t_ = &entries[t];
        let ends_segment = t + 1 == n
            || match segment_len {
                Some(len) => (t + 1) % len == 0,
                None => entries[t + 1].obs != t_.next_obs,
            };
        let not_done = if t_.terminal { 0.0 } else { 1.0 };
        let delta = t_.reward + gamma * not_done * next_values[t] - values[t];
        running = if ends_segment || t_.terminal { delta } else { delta + gamma * lambda * running };
        adv[t] = running;
    }
    adv
}

/// `steps` clipped-ratio gradient steps on minibatches drawn from `d_m`.
///
/// Advantages and critic targets are computed once from the critic before
/// the update. Each agent's ratio is clipped separately against the shared
/// advantage. Returns the updated policy (version incremented once) and
/// critic.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    policy: &JointPolicy,
    critic: &CentralizedCritic,
    d_m: &Dataset,
    steps: usize,
    hyper: &PolicyHyper,
    gamma: f64,
    segment_len: Option<usize>,
    seed: &SeedKey,
) -> Result<(JointPolicy, CentralizedCritic, PpoStats), PolicyError> {
    ppo_update_against(policy, policy, critic, d_m, steps, hyper, gamma, segment_len, seed)
}

/// Like [`ppo_update`] but starts from `current` while taking the ratio
/// denominators from `old`.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update_against(
    current: &JointPolicy,
    old: &JointPolicy,
    critic: &CentralizedCritic,
    d_m: &Dataset,
    steps: usize,
    hyper: &PolicyHyper,
    gamma: f64,
    segment_len: Option<usize>,
    seed: &SeedKey,
) -> Result<(JointPolicy, CentralizedCritic, PpoStats), PolicyError> {
    if d_m.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    if steps == 0 {
        return Err(PolicyError::NoSteps);
    }
    let entries: Vec<EnvTransition> = d_m.iter().cloned().collect();
    let values: Vec<f64> = entries.iter().map(|t| critic.value(&t.obs)).collect();
    let next_values: Vec<f64> = entries.iter().map(|t| critic.value(&t.next_obs)).collect();
    let raw_adv = gae(&entries, &values, &next_values, gamma, hyper.gae_lambda, segment_len);
    let targets: Vec<f64> = raw_adv.iter().zip(&values).map(|(a, v)| a + v).collect();
    let mut adv = raw_adv.clone();
    if hyper.normalize_advantages && adv.len() > 1 {
        let m = adv.iter().sum::<f64>() / adv.len() as f64;
        let var = adv.iter().map(|a| (a - m).powi(2)).sum::<f64>() / adv.len() as f64;
        let sd = var.sqrt();
        adv.iter_mut().for_each(|a| *a = if sd > 1e-8 { (*a - m) / sd } else { *a - m });
    }
    let old_probs: Vec<Vec<f64>> = entries
        .iter()
        .map(|t| (0..old.n_agents()).map(|i| old.agent_probs(i, t.obs.agent(i))[t.act.agent(i)]).collect())
        .collect();

    let mut new_policy = current.clone();
    let mut new_critic = critic.clone();
    let n_actions = current.spaces.n_actions;
    let c = 1.0 - n_actions as f64 * PROB_FLOOR;
    let mut stats = PpoStats {
        mean_abs_advantage: raw_adv.iter().map(|a| a.abs()).sum::<f64>() / raw_adv.len() as f64,
        ..PpoStats::default()
    };
    let batch = hyper.batch_size.min(entries.len()).max(1);
    let mut clipped = 0usize;
    let mut counted = 0usize;
    for step in 0..steps {
        let idx = d_m.sample_indices(batch, &seed.indexed("minibatch", step)).expect("non-empty");
        let scale = 1.0 / batch as f64;
        for (i, actor) in new_policy.actors.iter_mut().enumerate() {
            actor.opt.lr = hyper.actor_lr;
            let mut grad = vec![0.0; actor.net.n_params()];
            let mut loss = 0.0;
            for &j in &idx {
                let t = &entries[j];
                let x = [(t.obs.agent(i), 1.0)];
                let trace = actor.net.forward_trace(&x);
                let s = softmax(&trace.output);
                let p: Vec<f64> = s.iter().map(|v| c * v + PROB_FLOOR).collect();
                let a = t.act.agent(i);
                let ratio = p[a] / old_probs[j][i];
                let advantage = adv[j];
                let clipped_ratio = ratio.clamp(1.0 - hyper.clip, 1.0 + hyper.clip);
                loss -= scale * (ratio * advantage).min(clipped_ratio * advantage);
                let inactive = (advantage > 0.0 && ratio > 1.0 + hyper.clip)
                    || (advantage < 0.0 && ratio < 1.0 - hyper.clip);
                counted += 1;
                let mut d_logits = vec![0.0; n_actions];
                if inactive {
                    clipped += 1;
                } else {
                    // d ratio / d z_b = c * s_a (delta_ab - s_b) / p_old
                    for (b, d) in d_logits.iter_mut().enumerate() {
                        let dp = c * s[a] * (if a == b { 1.0 } else { 0.0 } - s[b]);
                        *d -= scale * advantage * dp / old_probs[j][i];
                    }
                }
                if hyper.entropy_coef > 0.0 {
                    let mean_term: f64 = s.iter().zip(&p).map(|(sk, pk)| sk * (pk.ln() + 1.0)).sum();
                    for (b, d) in d_logits.iter_mut().enumerate() {
                        let d_entropy = -c * s[b] * ((p[b].ln() + 1.0) - mean_term);
                        *d -= scale * hyper.entropy_coef * d_entropy;
                    }
                }
                actor.net.backward(&x, &trace, &d_logits, &mut grad);
            }
            stats.actor_loss = loss;
            actor.opt.step(actor.net.params_mut(), &grad);
        }

        new_critic.opt.lr = hyper.critic_lr;
        let mut grad = vec![0.0; new_critic.net.n_params()];
        let mut loss = 0.0;
        for &j in &idx {
            let x = new_critic.input(&entries[j].obs);
            let trace = new_critic.net.forward_trace(&x);
            let err = trace.output[0] - targets[j];
            loss += scale * err * err;
            new_critic.net.backward(&x, &trace, &[2.0 * scale * err], &mut grad);
        }
        stats.critic_loss = loss;
        let (net, opt) = (&mut new_critic.net, &mut new_critic.opt);
        opt.step(net.params_mut(), &grad);
    }
    stats.clip_fraction = clipped as f64 / counted.max(1) as f64;
    new_policy.version += 1;
    Ok((new_policy, new_critic, stats))
}

/// One real-environment episode under `policy`.
pub fn collect_episode(env: &TabularDecPomdp, policy: &JointPolicy, seed: &SeedKey) -> Result<Vec<EnvTransition>, EnvError> {
    let (mut ep, mut o) = env.reset(&seed.child("reset"));
    let mut out = Vec::with_capacity(env.horizon());
    let mut act_rng = seed.child("act").rng();
    let mut env_rng = seed.child("env").rng();
    while !ep.done {
        let a = policy.act_with(&o, &mut act_rng);
        let step = env.step_with(&mut ep, &a, &mut env_rng)?;
        out.push(EnvTransition {
            obs: o,
            act: a,
            reward: step.reward,
            next_obs: step.next_obs.clone(),
            terminal: step.terminal,
        });
        o = step.next_obs;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReturnStats {
    pub episodes: usize,
    pub mean: f64,
    pub se: f64,
    pub discounted_mean: f64,
    pub discounted_se: f64,
}

/// Monte-Carlo undiscounted and discounted returns over fresh episodes.
pub fn evaluate_return(
    env: &TabularDecPomdp,
    policy: &JointPolicy,
    episodes: usize,
    seed: &SeedKey,
) -> Result<ReturnStats, EnvError> {
    let mut undiscounted = Vec::with_capacity(episodes);
    let mut discounted = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let traj = collect_episode(env, policy, &seed.indexed("episode", e))?;
        undiscounted.push(traj.iter().map(|t| t.reward).sum::<f64>());
        let mut g = 0.0;
        for t in traj.iter().rev() {
            g = t.reward + env.gamma() * g;
        }
        discounted.push(g);
    }
    let (mean, se) = mean_and_se(&undiscounted);
    let (discounted_mean, discounted_se) = mean_and_se(&discounted);
    Ok(ReturnStats { episodes, mean, se, discounted_mean, discounted_se })
}
