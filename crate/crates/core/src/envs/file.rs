//! Declarative text format for custom environments.
//!
//! ```text
//! # comments and blank lines are ignored
//! name my_env
//! obs_sizes 2 2
//! actions 2
//! states 4
//! gamma 0.95
//! horizon 20
//! obs_fn        # one line per state: the N observation ids
//! 0 0
//! ...
//! transition    # one line per (state, joint action), state-major
//! 0.5 0.5 0 0
//! ...
//! reward        # one line per state: one value per joint action
//! 0 0 0 1
//! ...
//! init
//! 1 0 0 0
//! terminal      # optional: one 0/1 flag per state
//! 0 0 0 1
//! ```

use std::fmt::Write as _;

use super::{EnvError, EnvTables, TabularDecPomdp};
use crate::types::SpaceSpec;

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
                .filter(|(_, l)| !l.is_empty()),
        );
        Self { inner: it.peekable() }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        self.inner.next()
    }

    fn numbers<T: std::str::FromStr>(&mut self, what: &str, count: usize) -> Result<Vec<Vec<T>>, EnvError> {
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            let (line, text) = self
                .next()
                .ok_or_else(|| EnvError::Parse { line: 0, msg: format!("unexpected end of file in {what}") })?;
            let row = text
                .split_whitespace()
                .map(|tok| tok.parse::<T>().map_err(|_| EnvError::Parse { line, msg: format!("bad value {tok:?} in {what}") }))
                .collect::<Result<Vec<T>, _>>()?;
            rows.push(row);
        }
        Ok(rows)
    }
}

pub fn parse_env_file(text: &str) -> Result<TabularDecPomdp, EnvError> {
    let mut lines = Lines::new(text);
    let mut name = String::from("custom");
    let mut obs_sizes: Option<Vec<usize>> = None;
    let mut actions: Option<usize> = None;
    let mut states: Option<usize> = None;
    let mut gamma = super::presets::DEFAULT_GAMMA;
    let mut horizon = super::presets::DEFAULT_HORIZON;
    let mut obs_fn = None;
    let mut transition = None;
    let mut reward = None;
    let mut init = None;
    let mut terminal = Vec::new();

    let need = |line: usize, what: &str, v: Option<usize>| {
        v.ok_or_else(|| EnvError::Parse { line, msg: format!("{what} must be declared before this section") })
    };
    while let Some((line, text)) = lines.next() {
        let mut toks = text.split_whitespace();
        let key = toks.next().unwrap_or_default();
        let rest: Vec<&str> = toks.collect();
        let bad = |msg: &str| EnvError::Parse { line, msg: msg.to_string() };
        let one = || -> Result<&str, EnvError> {
            match rest.as_slice() {
                [v] => Ok(*v),
                _ => Err(EnvError::Parse { line, msg: format!("`{key}` takes one value") }),
            }
        };
        match key {
            "name" => name = one()?.to_string(),
            "obs_sizes" => {
                obs_sizes = Some(
                    rest.iter().map(|v| v.parse().map_err(|_| bad("bad observation size"))).collect::<Result<_, _>>()?,
                )
            }
            "actions" => actions = Some(one()?.parse().map_err(|_| bad("bad action count"))?),
            "states" => states = Some(one()?.parse().map_err(|_| bad("bad state count"))?),
            "gamma" => gamma = one()?.parse().map_err(|_| bad("bad gamma"))?,
            "horizon" => horizon = one()?.parse().map_err(|_| bad("bad horizon"))?,
            "obs_fn" => obs_fn = Some(lines.numbers::<usize>("obs_fn", need(line, "states", states)?)?),
            "transition" => {
                let sizes = obs_sizes.clone().ok_or_else(|| bad("obs_sizes must precede transition"))?;
                let nja = need(line, "actions", actions)?.pow(sizes.len() as u32);
                transition = Some(lines.numbers::<f64>("transition", need(line, "states", states)? * nja)?);
            }
            "reward" => {
                let rows = lines.numbers::<f64>("reward", need(line, "states", states)?)?;
                reward = Some(rows.into_iter().flatten().collect::<Vec<f64>>());
            }
            "init" => init = Some(lines.numbers::<f64>("init", 1)?.remove(0)),
            "terminal" => {
                terminal = lines.numbers::<u8>("terminal", 1)?.remove(0).into_iter().map(|f| f != 0).collect()
            }
            other => return Err(bad(&format!("unknown key `{other}`"))),
        }
    }
    let missing = |what: &str| EnvError::Parse { line: 0, msg: format!("missing `{what}`") };
    let obs_sizes = obs_sizes.ok_or_else(|| missing("obs_sizes"))?;
    if obs_sizes.is_empty() || obs_sizes.contains(&0) {
        return Err(EnvError::Parse { line: 0, msg: "observation sizes must be positive".into() });
    }
    let actions = actions.ok_or_else(|| missing("actions"))?;
    if actions == 0 {
        return Err(EnvError::Parse { line: 0, msg: "action count must be positive".into() });
    }
    TabularDecPomdp::new(EnvTables {
        name,
        spaces: SpaceSpec::new(obs_sizes, actions),
        n_states: states.ok_or_else(|| missing("states"))?,
        obs_fn: obs_fn.ok_or_else(|| missing("obs_fn"))?,
        transition: transition.ok_or_else(|| missing("transition"))?,
        reward: reward.ok_or_else(|| missing("reward"))?,
        gamma,
        init_dist: init.ok_or_else(|| missing("init"))?,
        horizon,
        terminal,
    })
}

fn row<T: std::fmt::Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_env_file(env: &TabularDecPomdp) -> String {
    let t = env.tables();
    let nja = t.spaces.n_joint_actions();
    let mut out = String::new();
    let _ = writeln!(out, "name {}", t.name);
    let _ = writeln!(out, "obs_sizes {}", row(&t.spaces.obs_sizes));
    let _ = writeln!(out, "actions {}", t.spaces.n_actions);
    let _ = writeln!(out, "states {}", t.n_states);
    let _ = writeln!(out, "gamma {}", t.gamma);
    let _ = writeln!(out, "horizon {}", t.horizon);
    out.push_str("obs_fn\n");
    for ids in &t.obs_fn {
        let _ = writeln!(out, "{}", row(ids));
    }
    out.push_str("transition\n");
    for r in &t.transition {
        let _ = writeln!(out, "{}", row(r));
    }
    out.push_str("reward\n");
    for chunk in t.reward.chunks(nja) {
        let _ = writeln!(out, "{}", row(chunk));
    }
    let _ = writeln!(out, "init\n{}", row(&t.init_dist));
    if t.terminal.iter().any(|&f| f) {
        let flags: Vec<u8> = t.terminal.iter().map(|&f| u8::from(f)).collect();
        let _ = writeln!(out, "terminal\n{}", row(&flags));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::presets::PRESET_NAMES;

    #[test]
    fn presets_roundtrip_through_text() {
        for name in PRESET_NAMES {
            let env = crate::envs::preset(name).unwrap();
            let text = write_env_file(&env);
            let back = parse_env_file(&text).unwrap();
            assert_eq!(back, env, "{name}");
        }
    }

    #[test]
    fn parses_small_file_with_comments() {
        let text = "\
# a coin
name coin
obs_sizes 2
actions 1
states 2
gamma 0.5
horizon 4
obs_fn
0
1
transition
0.5 0.5   # from state 0
0 1
reward
0
1
init
1 0
terminal
0 1
";
        let env = parse_env_file(text).unwrap();
        assert_eq!(env.n_states(), 2);
        assert!(env.is_terminal_state(1));
        assert_eq!(env.reward(1, 0), 1.0);
    }

    #[test]
    fn reports_line_of_bad_value() {
        let text = "obs_sizes 2\nactions 1\nstates 2\nobs_fn\n0\nx\n";
        match parse_env_file(text) {
            Err(EnvError::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
    }
}
