pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod envs;
pub mod harness;
pub mod local_models;
pub mod model_reward;
pub mod nn;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod stats;
pub mod theory;
pub mod types;
