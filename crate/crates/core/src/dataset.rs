//! Bounded FIFO replay datasets (the environment dataset and the model dataset)
//! and their line-delimited snapshot format.
//!
//! Snapshot layout, one record per line:
//!
//! ```text
//! mag-dataset,v1,agents=2,obs=3;2,actions=2,capacity=100000
//! 0;1,1;0,0.5,1;1,0
//! ```
//!
//! Data rows are `obs,act,reward,next_obs,terminal` with per-agent ids joined
//! by `;` and `terminal` written as `0`/`1`. Rewards use the shortest decimal
//! form that parses back to the same `f64`.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::rng::SeedKey;
use crate::types::{EnvTransition, JointAction, JointObservation, SpaceError, SpaceSpec};

pub const DEFAULT_CAPACITY: usize = 100_000;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("transition rejected: {0}")]
    Space(#[from] SpaceError),
    #[error("cannot sample from an empty dataset")]
    Empty,
    #[error("dataset capacity must be positive")]
    ZeroCapacity,
    #[error("snapshot line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    spaces: SpaceSpec,
    capacity: usize,
    entries: VecDeque<EnvTransition>,
}

impl Dataset {
    pub fn new(spaces: SpaceSpec, capacity: usize) -> Result<Self, DatasetError> {
        if capacity == 0 {
            return Err(DatasetError::ZeroCapacity);
        }
        Ok(Self { spaces, capacity, entries: VecDeque::new() })
    }

    pub fn spaces(&self) -> &SpaceSpec {
        &self.spaces
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl ExactSizeIterator<Item = &EnvTransition> + '_ {
        self.entries.iter()
    }

    pub fn get(&self, index: usize) -> Option<&EnvTransition> {
        self.entries.get(index)
    }

    /// Append `t` as the newest entry, evicting the oldest one when full.
    /// Returns the evicted transition, if any.
    pub fn append(&mut self, t: EnvTransition) -> Result<Option<EnvTransition>, DatasetError> {
        self.spaces.check_transition(&t)?;
        let evicted = if self.entries.len() == self.capacity { self.entries.pop_front() } else { None };
        self.entries.push_back(t);
        Ok(evicted)
    }

    pub fn extend<I: IntoIterator<Item = EnvTransition>>(&mut self, ts: I) -> Result<(), DatasetError> {
        for t in ts {
            self.append(t)?;
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// `n` indices drawn independently and uniformly with replacement.
    pub fn sample_indices(&self, n: usize, seed: &SeedKey) -> Result<Vec<usize>, DatasetError> {
        if self.entries.is_empty() {
            return Err(DatasetError::Empty);
        }
        let mut rng = seed.rng();
        Ok((0..n).map(|_| rng.gen_range(0..self.entries.len())).collect())
    }

    pub fn sample_uniform(&self, n: usize, seed: &SeedKey) -> Result<Vec<EnvTransition>, DatasetError> {
        Ok(self
            .sample_indices(n, seed)?
            .into_iter()
            .map(|i| self.entries[i].clone())
            .collect())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let obs = join_ids(&self.spaces.obs_sizes);
        writeln!(
            w,
            "mag-dataset,v1,agents={},obs={},actions={},capacity={}",
            self.spaces.n_agents(),
            obs,
            self.spaces.n_actions,
            self.capacity
        )?;
        for t in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{}",
                join_ids(&t.obs.0),
                join_ids(&t.act.0),
                t.reward,
                join_ids(&t.next_obs.0),
                u8::from(t.terminal)
            )?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, DatasetError> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "missing header"))??;
        let mut dataset = parse_header(&header)?;
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t = parse_row(&line).map_err(|msg| parse_err(i + 2, msg))?;
            dataset.append(t).map_err(|e| parse_err(i + 2, e.to_string()))?;
        }
        Ok(dataset)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

fn parse_ids(field: &str) -> Result<Vec<usize>, String> {
    field
        .split(';')
        .map(|v| v.trim().parse::<usize>().map_err(|e| format!("bad id {v:?}: {e}")))
        .collect()
}

fn parse_err(line: usize, msg: impl Into<String>) -> DatasetError {
    DatasetError::Parse { line, msg: msg.into() }
}

fn parse_header(header: &str) -> Result<Dataset, DatasetError> {
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != 6 || fields[0] != "mag-dataset" || fields[1] != "v1" {
        return Err(parse_err(1, format!("unrecognised header {header:?}")));
    }
    let value = |i: usize, key: &str| -> Result<&str, DatasetError> {
        fields[i]
            .strip_prefix(key)
            .and_then(|v| v.strip_prefix('='))
            .ok_or_else(|| parse_err(1, format!("expected {key}=..., got {:?}", fields[i])))
    };
    let agents: usize = value(2, "agents")?.parse().map_err(|_| parse_err(1, "bad agent count"))?;
    let obs = parse_ids(value(3, "obs")?).map_err(|m| parse_err(1, m))?;
    let actions: usize = value(4, "actions")?.parse().map_err(|_| parse_err(1, "bad action count"))?;
    let capacity: usize = value(5, "capacity")?.parse().map_err(|_| parse_err(1, "bad capacity"))?;
    if obs.len() != agents || obs.contains(&0) || actions == 0 {
        return Err(parse_err(1, "inconsistent space sizes"));
    }
    Dataset::new(SpaceSpec::new(obs, actions), capacity)
}

fn parse_row(line: &str) -> Result<EnvTransition, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 fields, got {}", fields.len()));
    }
    let reward: f64 = fields[2].trim().parse().map_err(|e| format!("bad reward: {e}"))?;
    let terminal = match fields[4].trim() {
        "0" => false,
        "1" => true,
        other => return Err(format!("bad terminal flag {other:?}")),
    };
    Ok(EnvTransition {
        obs: JointObservation(parse_ids(fields[0])?),
        act: JointAction(parse_ids(fields[1])?),
        reward,
        next_obs: JointObservation(parse_ids(fields[3])?),
        terminal,
    })
}
