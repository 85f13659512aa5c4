//! JSON container shared by every persisted component.
//!
//! ```json
//! {"format": "mag-checkpoint", "version": 1, "kind": "local-models", "payload": {...}}
//! ```

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::local_models::LocalModelSet;
use crate::model_reward::ModelRewardPredictor;
use crate::policy::{CentralizedCritic, JointPolicy};

pub const FORMAT: &str = "mag-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint {path}: malformed: {msg}")]
    Malformed { path: PathBuf, msg: String },
    #[error("checkpoint {path}: expected kind `{expected}`, found `{found}`")]
    Kind { path: PathBuf, expected: String, found: String },
}

#[derive(Serialize, Deserialize)]
struct Container<T> {
    format: String,
    version: u32,
    kind: String,
    payload: T,
}

pub trait Checkpointable: Serialize + DeserializeOwned {
    const KIND: &'static str;
}

impl Checkpointable for LocalModelSet {
    const KIND: &'static str = "local-models";
}

impl Checkpointable for JointPolicy {
    const KIND: &'static str = "joint-policy";
}

impl Checkpointable for CentralizedCritic {
    const KIND: &'static str = "critic";
}

impl Checkpointable for ModelRewardPredictor {
    const KIND: &'static str = "error-predictor";
}

pub fn to_string<T: Checkpointable>(value: &T) -> String {
    let c = Container { format: FORMAT.into(), version: VERSION, kind: T::KIND.into(), payload: value };
    serde_json::to_string(&c).expect("checkpoint serializes") + "\n"
}

pub fn from_str<T: Checkpointable>(text: &str, path: &Path) -> Result<T, CheckpointError> {
    let malformed = |msg: String| CheckpointError::Malformed { path: path.into(), msg };
    let head: Container<serde_json::Value> = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    if head.format != FORMAT || head.version != VERSION {
        return Err(malformed(format!("unsupported container {} v{}", head.format, head.version)));
    }
    if head.kind != T::KIND {
        return Err(CheckpointError::Kind { path: path.into(), expected: T::KIND.into(), found: head.kind });
    }
    serde_json::from_value(head.payload).map_err(|e| malformed(e.to_string()))
}

pub fn save<T: Checkpointable>(value: &T, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, to_string(value)).map_err(|source| CheckpointError::Io { path: path.into(), source })
}

pub fn load<T: Checkpointable>(path: &Path) -> Result<T, CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io { path: path.into(), source })?;
    from_str(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_models::ModelHyper;
    use crate::rng::SeedKey;
    use crate::types::SpaceSpec;

    #[test]
    fn round_trip_and_kind_check() {
        let sp = SpaceSpec::new(vec![2, 3], 2);
        let hyper = ModelHyper { backend: crate::local_models::ModelBackend::Mlp, ..ModelHyper::default() };
        let ms = LocalModelSet::new(sp, hyper, &SeedKey::new(4));
        let text = to_string(&ms);
        let back: LocalModelSet = from_str(&text, Path::new("m.json")).unwrap();
        assert_eq!(back, ms);
        assert_eq!(to_string(&back), text);
        assert!(matches!(from_str::<JointPolicy>(&text, Path::new("m.json")), Err(CheckpointError::Kind { .. })));
        assert!(matches!(from_str::<JointPolicy>("{", Path::new("x")), Err(CheckpointError::Malformed { .. })));
    }
}
