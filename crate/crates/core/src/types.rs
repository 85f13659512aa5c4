//! Shared domain types: joint observations, joint actions and transitions over
//! finite categorical spaces.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("expected {expected} agents, got {got}")]
    AgentCount { expected: usize, got: usize },
    #[error("agent {agent}: id {id} out of range 0..{size}")]
    OutOfRange { agent: usize, id: usize, size: usize },
    #[error("non-finite reward {0}")]
    NonFiniteReward(f64),
}

/// Sizes of the per-agent observation spaces and the shared action space.
///
/// Joint observations and joint actions are enumerated in mixed radix with
/// agent 0 as the most significant digit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub obs_sizes: Vec<usize>,
    pub n_actions: usize,
}

impl SpaceSpec {
    pub fn new(obs_sizes: Vec<usize>, n_actions: usize) -> Self {
        assert!(!obs_sizes.is_empty(), "at least one agent");
        assert!(obs_sizes.iter().all(|&s| s > 0) && n_actions > 0, "empty space");
        Self { obs_sizes, n_actions }
    }

    pub fn n_agents(&self) -> usize {
        self.obs_sizes.len()
    }

    pub fn n_joint_obs(&self) -> usize {
        self.obs_sizes.iter().product()
    }

    pub fn n_joint_actions(&self) -> usize {
        self.n_actions.pow(self.n_agents() as u32)
    }

    pub fn encode_obs(&self, o: &JointObservation) -> usize {
        o.0.iter().zip(&self.obs_sizes).fold(0, |acc, (&id, &size)| acc * size + id)
    }

    pub fn decode_obs(&self, mut index: usize) -> JointObservation {
        let mut ids = vec![0; self.n_agents()];
        for (slot, &size) in ids.iter_mut().zip(&self.obs_sizes).rev() {
            *slot = index % size;
            index /= size;
        }
        JointObservation(ids)
    }

    pub fn encode_action(&self, a: &JointAction) -> usize {
        a.0.iter().fold(0, |acc, &id| acc * self.n_actions + id)
    }

    pub fn decode_action(&self, mut index: usize) -> JointAction {
        let mut ids = vec![0; self.n_agents()];
        for slot in ids.iter_mut().rev() {
            *slot = index % self.n_actions;
            index /= self.n_actions;
        }
        JointAction(ids)
    }

    /// Flat index of a (joint observation, joint action) cell.
    pub fn cell(&self, o: usize, a: usize) -> usize {
        o * self.n_joint_actions() + a
    }

    pub fn n_cells(&self) -> usize {
        self.n_joint_obs() * self.n_joint_actions()
    }

    pub fn check_obs(&self, o: &JointObservation) -> Result<(), SpaceError> {
        if o.0.len() != self.n_agents() {
            return Err(SpaceError::AgentCount { expected: self.n_agents(), got: o.0.len() });
        }
        for (agent, (&id, &size)) in o.0.iter().zip(&self.obs_sizes).enumerate() {
            if id >= size {
                return Err(SpaceError::OutOfRange { agent, id, size });
            }
        }
        Ok(())
    }

    pub fn check_action(&self, a: &JointAction) -> Result<(), SpaceError> {
        if a.0.len() != self.n_agents() {
            return Err(SpaceError::AgentCount { expected: self.n_agents(), got: a.0.len() });
        }
        for (agent, &id) in a.0.iter().enumerate() {
            if id >= self.n_actions {
                return Err(SpaceError::OutOfRange { agent, id, size: self.n_actions });
            }
        }
        Ok(())
    }

    pub fn check_transition(&self, t: &EnvTransition) -> Result<(), SpaceError> {
        self.check_obs(&t.obs)?;
        self.check_action(&t.act)?;
        self.check_obs(&t.next_obs)?;
        if !t.reward.is_finite() {
            return Err(SpaceError::NonFiniteReward(t.reward));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JointObservation(pub Vec<usize>);

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JointAction(pub Vec<usize>);

impl JointObservation {
    pub fn agent(&self, i: usize) -> usize {
        self.0[i]
    }
}

impl JointAction {
    pub fn agent(&self, i: usize) -> usize {
        self.0[i]
    }
}

/// One stored `(o, a, R, o')` tuple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvTransition {
    pub obs: JointObservation,
    pub act: JointAction,
    pub reward: f64,
    pub next_obs: JointObservation,
    pub terminal: bool,
}

/// Draw an index from a probability vector by inverse CDF.
///
/// Falls back to the last index with positive mass when rounding leaves the
/// uniform draw above the accumulated total.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mixed_radix_agent_zero_most_significant() {
        let spec = SpaceSpec::new(vec![3, 2], 2);
        assert_eq!(spec.encode_obs(&JointObservation(vec![2, 1])), 5);
        assert_eq!(spec.decode_obs(3), JointObservation(vec![1, 1]));
        assert_eq!(spec.n_joint_actions(), 4);
        assert_eq!(spec.decode_action(2), JointAction(vec![1, 0]));
    }

    #[test]
    fn rejects_bad_dimensions() {
        let spec = SpaceSpec::new(vec![3, 2], 2);
        assert!(spec.check_obs(&JointObservation(vec![0])).is_err());
        assert_eq!(
            spec.check_obs(&JointObservation(vec![0, 2])),
            Err(SpaceError::OutOfRange { agent: 1, id: 2, size: 2 })
        );
        assert!(spec.check_action(&JointAction(vec![0, 2])).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(sizes in proptest::collection::vec(1usize..5, 1..4), seed in 0usize..10_000) {
            let spec = SpaceSpec::new(sizes, 3);
            let index = seed % spec.n_joint_obs();
            let o = spec.decode_obs(index);
            prop_assert!(spec.check_obs(&o).is_ok());
            prop_assert_eq!(spec.encode_obs(&o), index);
            let ai = seed % spec.n_joint_actions();
            prop_assert_eq!(spec.encode_action(&spec.decode_action(ai)), ai);
        }
    }
}
