//! Finite cooperative Dec-POMDPs with exact table access.
//!
//! A [`TabularDecPomdp`] is simulated episode by episode for training and, via
//! [`TabularDecPomdp::derive_joint_obs_dynamics`], exposes the exact
//! observation-level process used as ground truth by the theory lab.

mod file;
pub mod presets;

use rand::Rng;
use thiserror::Error;

use crate::rng::SeedKey;
use crate::types::{sample_categorical, JointAction, JointObservation, SpaceError, SpaceSpec};

pub use file::{parse_env_file, write_env_file};
pub use presets::{preset, PRESET_NAMES};

const ROW_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("table `{table}` has wrong shape: {msg}")]
    Shape { table: &'static str, msg: String },
    #[error("{table} row {row} sums to {sum}, expected 1")]
    RowSum { table: &'static str, row: usize, sum: f64 },
    #[error("{table} row {row} has invalid entry {value}")]
    BadEntry { table: &'static str, row: usize, value: f64 },
    #[error("discount {0} outside [0, 1)")]
    Gamma(f64),
    #[error("horizon must be positive")]
    Horizon,
    #[error("episode already terminated")]
    EpisodeTerminated,
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(
        "observation-insufficiency: states {state_a} and {state_b} share joint observation {obs:?} \
         but differ under joint action {action} ({what})"
    )]
    Insufficient { obs: Vec<usize>, state_a: usize, state_b: usize, action: usize, what: &'static str },
    #[error("unknown environment preset `{0}`")]
    UnknownPreset(String),
    #[error("env file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularDecPomdp {
    name: String,
    spaces: SpaceSpec,
    n_states: usize,
    obs_fn: Vec<Vec<usize>>,
    transition: Vec<Vec<f64>>,
    reward: Vec<f64>,
    gamma: f64,
    init_dist: Vec<f64>,
    horizon: usize,
    terminal: Vec<bool>,
}

/// Tables describing a [`TabularDecPomdp`]. `transition` and `reward` are
/// indexed by `state * n_joint_actions + joint_action`.
#[derive(Clone, Debug)]
pub struct EnvTables {
    pub name: String,
    pub spaces: SpaceSpec,
    pub n_states: usize,
    pub obs_fn: Vec<Vec<usize>>,
    pub transition: Vec<Vec<f64>>,
    pub reward: Vec<f64>,
    pub gamma: f64,
    pub init_dist: Vec<f64>,
    pub horizon: usize,
    pub terminal: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeState {
    pub state: usize,
    pub t: usize,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_obs: JointObservation,
    pub reward: f64,
    pub terminal: bool,
}

fn check_distribution(table: &'static str, row: usize, p: &[f64]) -> Result<(), EnvError> {
    for &v in p {
        if !v.is_finite() || v < 0.0 {
            return Err(EnvError::BadEntry { table, row, value: v });
        }
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(EnvError::RowSum { table, row, sum });
    }
    Ok(())
}

impl TabularDecPomdp {
    pub fn new(t: EnvTables) -> Result<Self, EnvError> {
        let nja = t.spaces.n_joint_actions();
        let shape = |table, msg: String| EnvError::Shape { table, msg };
        if t.n_states == 0 {
            return Err(shape("states", "no states".into()));
        }
        if t.obs_fn.len() != t.n_states {
            return Err(shape("obs_fn", format!("{} rows for {} states", t.obs_fn.len(), t.n_states)));
        }
        for row in &t.obs_fn {
            t.spaces.check_obs(&JointObservation(row.clone()))?;
        }
        if t.transition.len() != t.n_states * nja || t.reward.len() != t.n_states * nja {
            return Err(shape("transition/reward", format!("expected {} rows", t.n_states * nja)));
        }
        for (i, row) in t.transition.iter().enumerate() {
            if row.len() != t.n_states {
                return Err(shape("transition", format!("row {i} has {} entries", row.len())));
            }
            check_distribution("transition", i, row)?;
        }
        for (i, &r) in t.reward.iter().enumerate() {
            if !r.is_finite() {
                return Err(EnvError::BadEntry { table: "reward", row: i, value: r });
            }
        }
        if t.init_dist.len() != t.n_states {
            return Err(shape("init", format!("{} entries for {} states", t.init_dist.len(), t.n_states)));
        }
        check_distribution("init", 0, &t.init_dist)?;
        if !(0.0..1.0).contains(&t.gamma) {
            return Err(EnvError::Gamma(t.gamma));
        }
        if t.horizon == 0 {
            return Err(EnvError::Horizon);
        }
        let terminal = if t.terminal.is_empty() { vec![false; t.n_states] } else { t.terminal };
        if terminal.len() != t.n_states {
            return Err(shape("terminal", format!("{} flags for {} states", terminal.len(), t.n_states)));
        }
        Ok(Self {
            name: t.name,
            spaces: t.spaces,
            n_states: t.n_states,
            obs_fn: t.obs_fn,
            transition: t.transition,
            reward: t.reward,
            gamma: t.gamma,
            init_dist: t.init_dist,
            horizon: t.horizon,
            terminal,
        })
    }

    pub fn tables(&self) -> EnvTables {
        EnvTables {
            name: self.name.clone(),
            spaces: self.spaces.clone(),
            n_states: self.n_states,
            obs_fn: self.obs_fn.clone(),
            transition: self.transition.clone(),
            reward: self.reward.clone(),
            gamma: self.gamma,
            init_dist: self.init_dist.clone(),
            horizon: self.horizon,
            terminal: self.terminal.clone(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn spaces(&self) -> &SpaceSpec {
        &self.spaces
    }
    pub fn n_agents(&self) -> usize {
        self.spaces.n_agents()
    }
    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }
    pub fn is_terminal_state(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn observe(&self, state: usize) -> JointObservation {
        JointObservation(self.obs_fn[state].clone())
    }

    pub fn transition_row(&self, state: usize, joint_action: usize) -> &[f64] {
        &self.transition[state * self.spaces.n_joint_actions() + joint_action]
    }

    pub fn reward(&self, state: usize, joint_action: usize) -> f64 {
        self.reward[state * self.spaces.n_joint_actions() + joint_action]
    }

    pub fn reset_with<R: Rng + ?Sized>(&self, rng: &mut R) -> (EpisodeState, JointObservation) {
        let state = sample_categorical(&self.init_dist, rng);
        let ep = EpisodeState { state, t: 0, done: self.terminal[state] };
        (ep, self.observe(state))
    }

    pub fn reset(&self, seed: &SeedKey) -> (EpisodeState, JointObservation) {
        self.reset_with(&mut seed.rng())
    }

    /// Advance one step. The episode ends when the horizon is reached or the
    /// successor is a terminal state.
    pub fn step_with<R: Rng + ?Sized>(
        &self,
        ep: &mut EpisodeState,
        act: &JointAction,
        rng: &mut R,
    ) -> Result<StepOutcome, EnvError> {
        if ep.done {
            return Err(EnvError::EpisodeTerminated);
        }
        self.spaces.check_action(act)?;
        let ja = self.spaces.encode_action(act);
        let reward = self.reward(ep.state, ja);
        let next = sample_categorical(self.transition_row(ep.state, ja), rng);
        ep.state = next;
        ep.t += 1;
        ep.done = self.terminal[next] || ep.t >= self.horizon;
        Ok(StepOutcome { next_obs: self.observe(next), reward, terminal: ep.done })
    }

    pub fn step(&self, ep: &mut EpisodeState, act: &JointAction, seed: &SeedKey) -> Result<StepOutcome, EnvError> {
        self.step_with(ep, act, &mut seed.rng())
    }

    /// Exact observation-level process obtained by lumping states that share a
    /// joint observation.
    ///
    /// Lumping is exact only when every state in a group induces the same
    /// distribution over next joint observations and the same reward for
    /// every joint action; otherwise the group is rejected. Terminal states
    /// become absorbing with zero reward, and joint observations that no
    /// state produces get a zero-reward self-loop and are flagged unrealizable.
    pub fn derive_joint_obs_dynamics(&self) -> Result<JointObsDynamics, EnvError> {
        let spaces = &self.spaces;
        let n_obs = spaces.n_joint_obs();
        let nja = spaces.n_joint_actions();
        let obs_index: Vec<usize> = (0..self.n_states).map(|s| spaces.encode_obs(&self.observe(s))).collect();

        let lumped_row = |s: usize, ja: usize| -> (Vec<f64>, f64) {
            let mut row = vec![0.0; n_obs];
            if self.terminal[s] {
                row[obs_index[s]] = 1.0;
                return (row, 0.0);
            }
            for (s2, &p) in self.transition_row(s, ja).iter().enumerate() {
                row[obs_index[s2]] += p;
            }
            (row, self.reward(s, ja))
        };

        let mut representative: Vec<Option<usize>> = vec![None; n_obs];
        let mut transition = vec![Vec::new(); n_obs * nja];
        let mut reward = vec![0.0; n_obs * nja];
        for s in 0..self.n_states {
            let o = obs_index[s];
            match representative[o] {
                None => {
                    representative[o] = Some(s);
                    for ja in 0..nja {
                        let (row, r) = lumped_row(s, ja);
                        transition[o * nja + ja] = row;
                        reward[o * nja + ja] = r;
                    }
                }
                Some(rep) => {
                    let insufficient = |action, what| EnvError::Insufficient {
                        obs: spaces.decode_obs(o).0,
                        state_a: rep,
                        state_b: s,
                        action,
                        what,
                    };
                    if self.terminal[rep] != self.terminal[s] {
                        return Err(insufficient(0, "terminal flag"));
                    }
                    for ja in 0..nja {
                        let (row, r) = lumped_row(s, ja);
                        let existing = &transition[o * nja + ja];
                        if row.iter().zip(existing).any(|(a, b)| (a - b).abs() > ROW_TOL) {
                            return Err(insufficient(ja, "transition"));
                        }
                        if (r - reward[o * nja + ja]).abs() > ROW_TOL {
                            return Err(insufficient(ja, "reward"));
                        }
                    }
                }
            }
        }

        let mut realizable = vec![false; n_obs];
        for o in 0..n_obs {
            if representative[o].is_some() {
                realizable[o] = true;
                continue;
            }
            for ja in 0..nja {
                let mut row = vec![0.0; n_obs];
                row[o] = 1.0;
                transition[o * nja + ja] = row;
            }
        }
        let mut init = vec![0.0; n_obs];
        for (s, &p) in self.init_dist.iter().enumerate() {
            init[obs_index[s]] += p;
        }
        Ok(JointObsDynamics { spaces: spaces.clone(), transition, reward, init, realizable, gamma: self.gamma })
    }
}

/// Observation-level transition and reward tables, indexed by
/// [`SpaceSpec::cell`].
#[derive(Clone, Debug, PartialEq)]
pub struct JointObsDynamics {
    pub spaces: SpaceSpec,
    pub transition: Vec<Vec<f64>>,
    pub reward: Vec<f64>,
    pub init: Vec<f64>,
    pub realizable: Vec<bool>,
    pub gamma: f64,
}

impl JointObsDynamics {
    /// Build directly from observation-level tables (every joint observation
    /// is treated as realizable).
    pub fn from_tables(
        spaces: SpaceSpec,
        transition: Vec<Vec<f64>>,
        reward: Vec<f64>,
        init: Vec<f64>,
        gamma: f64,
    ) -> Result<Self, EnvError> {
        let n_obs = spaces.n_joint_obs();
        let dyn_ = Self { realizable: vec![true; n_obs], spaces, transition, reward, init, gamma };
        dyn_.validate()?;
        Ok(dyn_)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let n_obs = self.spaces.n_joint_obs();
        let n_cells = self.spaces.n_cells();
        if self.transition.len() != n_cells || self.reward.len() != n_cells {
            return Err(EnvError::Shape { table: "transition_o", msg: format!("expected {n_cells} cells") });
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != n_obs {
                return Err(EnvError::Shape { table: "transition_o", msg: format!("row {i} length {}", row.len()) });
            }
            check_distribution("transition_o", i, row)?;
        }
        if let Some((i, &r)) = self.reward.iter().enumerate().find(|(_, r)| !r.is_finite()) {
            return Err(EnvError::BadEntry { table: "reward_o", row: i, value: r });
        }
        if self.init.len() != n_obs {
            return Err(EnvError::Shape { table: "init_o", msg: format!("expected {n_obs} entries") });
        }
        check_distribution("init_o", 0, &self.init)?;
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(EnvError::Gamma(self.gamma));
        }
        Ok(())
    }

    pub fn row(&self, o: usize, a: usize) -> &[f64] {
        &self.transition[self.spaces.cell(o, a)]
    }

    pub fn reward_at(&self, o: usize, a: usize) -> f64 {
        self.reward[self.spaces.cell(o, a)]
    }

    /// Largest absolute reward over all cells.
    pub fn r_max(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Marginal of agent `agent`'s next observation in row `(o, a)`.
    pub fn agent_marginal(&self, o: usize, a: usize, agent: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.spaces.obs_sizes[agent]];
        for (o2, &p) in self.row(o, a).iter().enumerate() {
            if p > 0.0 {
                m[self.spaces.decode_obs(o2).agent(agent)] += p;
            }
        }
        m
    }

    /// True when every row equals the product of its per-agent marginals.
    pub fn is_factored(&self, tol: f64) -> bool {
        let n_obs = self.spaces.n_joint_obs();
        let nja = self.spaces.n_joint_actions();
        for o in 0..n_obs {
            for a in 0..nja {
                let marg: Vec<Vec<f64>> = (0..self.spaces.n_agents()).map(|i| self.agent_marginal(o, a, i)).collect();
                for (o2, &p) in self.row(o, a).iter().enumerate() {
                    let ids = self.spaces.decode_obs(o2);
                    let q: f64 = marg.iter().enumerate().map(|(i, m)| m[ids.agent(i)]).product();
                    if (p - q).abs() > tol {
                        return false;
                    }
                }
            }
        }
        true
    }
}
