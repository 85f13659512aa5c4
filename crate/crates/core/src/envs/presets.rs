//! Built-in environments.
//!
//! Every preset identifies the state with the joint observation, so the
//! observation process is Markov and each joint observation is realizable.
//! Each preset also mixes a small slip probability into every transition so
//! that all rows have full support; learned local models then never put mass
//! on an outcome the environment cannot produce.

use super::{EnvError, EnvTables, TabularDecPomdp};
use crate::types::{JointAction, JointObservation, SpaceSpec};

pub const PRESET_NAMES: [&str; 3] = ["coop_matrix_chain", "coop_grid_nav", "figure1_toy"];

pub const DEFAULT_GAMMA: f64 = 0.95;
pub const DEFAULT_HORIZON: usize = 20;
const SLIP: f64 = 0.05;

pub fn preset(name: &str) -> Result<TabularDecPomdp, EnvError> {
    match name {
        "coop_matrix_chain" => Ok(coop_matrix_chain()),
        "coop_grid_nav" => Ok(coop_grid_nav()),
        "figure1_toy" => Ok(figure1_toy()),
        other => Err(EnvError::UnknownPreset(other.to_string())),
    }
}

/// Point mass on `target` mixed with a uniform slip over `size` outcomes.
fn slip(target: usize, size: usize, eps: f64) -> Vec<f64> {
    let mut p = vec![eps / size as f64; size];
    p[target] += 1.0 - eps;
    p
}

fn product(spaces: &SpaceSpec, marginals: &[Vec<f64>]) -> Vec<f64> {
    (0..spaces.n_joint_obs())
        .map(|o| {
            let ids = spaces.decode_obs(o);
            marginals.iter().enumerate().map(|(i, m)| m[ids.agent(i)]).product()
        })
        .collect()
}

/// Environment whose state space is the joint observation space.
/// `rule` returns the next-joint-observation distribution and the reward.
fn joint_obs_env(
    name: &str,
    spaces: SpaceSpec,
    init_obs: &JointObservation,
    rule: impl Fn(&JointObservation, &JointAction) -> (Vec<f64>, f64),
) -> TabularDecPomdp {
    let n = spaces.n_joint_obs();
    let nja = spaces.n_joint_actions();
    let mut transition = Vec::with_capacity(n * nja);
    let mut reward = Vec::with_capacity(n * nja);
    for s in 0..n {
        let o = spaces.decode_obs(s);
        for ja in 0..nja {
            let (row, r) = rule(&o, &spaces.decode_action(ja));
            transition.push(row);
            reward.push(r);
        }
    }
    let mut init_dist = vec![0.0; n];
    init_dist[spaces.encode_obs(init_obs)] = 1.0;
    TabularDecPomdp::new(EnvTables {
        name: name.to_string(),
        obs_fn: (0..n).map(|s| spaces.decode_obs(s).0).collect(),
        spaces,
        n_states: n,
        transition,
        reward,
        gamma: DEFAULT_GAMMA,
        init_dist,
        horizon: DEFAULT_HORIZON,
        terminal: vec![],
    })
    .expect("preset tables are valid")
}

/// Six-cell chain `p = 2q + r`; agent 0 observes the coarse stage `q`, agent 1
/// the parity `r`. Joint action (1,1) advances, (0,0) holds, a mismatch falls
/// back one cell. Reward 1 for (1,1) at the last cell.
pub fn coop_matrix_chain() -> TabularDecPomdp {
    let spaces = SpaceSpec::new(vec![3, 2], 2);
    let sp = spaces.clone();
    joint_obs_env("coop_matrix_chain", spaces, &JointObservation(vec![0, 0]), move |o, a| {
        let p = 2 * o.agent(0) + o.agent(1);
        let next = match (a.agent(0), a.agent(1)) {
            (1, 1) => (p + 1).min(5),
            (0, 0) => p,
            _ => p.saturating_sub(1),
        };
        let row = product(&sp, &[slip(next / 2, 3, SLIP), slip(next % 2, 2, SLIP)]);
        let r = if p == 5 && a.0 == [1, 1] { 1.0 } else { 0.0 };
        (row, r)
    })
}

pub const GRID_SIDE: usize = 4;

/// Two agents on a 4x4 grid, each observing only its own cell. Actions:
/// 0 stay, 1 east, 2 south (walls clamp). Shared reward 1 while both agents
/// occupy the goal corner simultaneously.
pub fn coop_grid_nav() -> TabularDecPomdp {
    let cells = GRID_SIDE * GRID_SIDE;
    let goal = cells - 1;
    let spaces = SpaceSpec::new(vec![cells, cells], 3);
    let sp = spaces.clone();
    joint_obs_env("coop_grid_nav", spaces, &JointObservation(vec![0, 0]), move |o, a| {
        let marginals: Vec<Vec<f64>> = (0..2)
            .map(|i| {
                let (x, y) = (o.agent(i) % GRID_SIDE, o.agent(i) / GRID_SIDE);
                let (x, y) = match a.agent(i) {
                    1 => ((x + 1).min(GRID_SIDE - 1), y),
                    2 => (x, (y + 1).min(GRID_SIDE - 1)),
                    _ => (x, y),
                };
                slip(y * GRID_SIDE + x, cells, SLIP)
            })
            .collect();
        let r = if o.agent(0) == goal && o.agent(1) == goal { 1.0 } else { 0.0 };
        (product(&sp, &marginals), r)
    })
}

pub const TOY_STAGES: usize = 6;
pub const LANE_START: usize = 0;
pub const LANE_UPPER: usize = 1;
pub const LANE_LOWER_A: usize = 2;
pub const LANE_LOWER_B: usize = 3;

/// Branching environment. Agent 0 observes a stage counter, agent 1 a lane.
///
/// At stage 0 agent 1's next lane is upper or lower with probability 1/2 each
/// while agent 0 deterministically moves to stage 1. The upper lane is a
/// deterministic corridor paying 1 for joint action (1,1). In the lower lane
/// joint action (1,1) couples the agents: with probability 1/2 both advance
/// one stage into lane A, otherwise both jump two stages into lane B. The
/// coupling cannot be represented by independent per-agent predictors. The
/// last stage returns to the start. A slip of 0.05 spreads over all joint
/// observations.
pub fn figure1_toy() -> TabularDecPomdp {
    let spaces = SpaceSpec::new(vec![TOY_STAGES, 4], 2);
    let sp = spaces.clone();
    let n = spaces.n_joint_obs();
    let last = TOY_STAGES - 1;
    joint_obs_env("figure1_toy", spaces, &JointObservation(vec![0, LANE_START]), move |o, a| {
        let (stage, lane) = (o.agent(0), o.agent(1));
        let mut designed = vec![0.0; n];
        let mut put = |s: usize, l: usize, p: f64| designed[sp.encode_obs(&JointObservation(vec![s, l]))] += p;
        let coordinated = a.0 == [1, 1];
        if stage == last {
            put(0, LANE_START, 1.0);
        } else if stage == 0 {
            put(1, LANE_UPPER, 0.5);
            put(1, LANE_LOWER_A, 0.5);
        } else if lane == LANE_LOWER_A || lane == LANE_LOWER_B {
            if coordinated {
                put(stage + 1, LANE_LOWER_A, 0.5);
                put((stage + 2).min(last), LANE_LOWER_B, 0.5);
            } else {
                put(stage + 1, LANE_LOWER_A, 1.0);
            }
        } else {
            put(stage + 1, LANE_UPPER, 1.0);
        }
        let row: Vec<f64> = designed.iter().map(|p| (1.0 - SLIP) * p + SLIP / n as f64).collect();
        let r = if lane == LANE_UPPER && stage != 0 && stage != last && coordinated { 1.0 } else { 0.0 };
        (row, r)
    })
}
