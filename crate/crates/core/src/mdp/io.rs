//! Line-oriented dataset format.
//!
//! ```text
//! # fqe-dataset v1 K=2 H=3 states=discrete env=cliff_walking config=noise=0.1;cliff_penalty=-50
//! 0 0 36 0 -1 24
//! ...
//! ```
//!
//! Each body line is `episode h state action reward next_state`. Absorbing
//! states are written `*`, continuous observations as comma-separated
//! floats. Floats use the shortest representation that parses back to the
//! same bits, so a write/read round trip is exact.

use std::io::{BufRead, Write};
use std::sync::Arc;

use super::{Dataset, Episode, State, Transition};
use crate::error::{FqeError, Result};

const MAGIC: &str = "# fqe-dataset v1";

fn state_kind(data: &Dataset) -> &'static str {
    let continuous = data.transitions().any(|t| matches!(t.state, State::Continuous(_)));
    if continuous {
        "continuous"
    } else {
        "discrete"
    }
}

pub fn write_dataset<W: Write>(mut out: W, data: &Dataset) -> Result<()> {
    for (label, text) in [("env", data.env_name()), ("config", data.env_config())] {
        if text.chars().any(char::is_whitespace) {
            return Err(FqeError::InvalidArgument(format!("{label} label `{text}` contains whitespace")));
        }
    }
    writeln!(
        out,
        "{MAGIC} K={} H={} states={} env={} config={}",
        data.n_episodes(),
        data.horizon(),
        state_kind(data),
        data.env_name(),
        data.env_config()
    )?;
    for (k, ep) in data.episodes().iter().enumerate() {
        for (h, t) in ep.transitions().iter().enumerate() {
            writeln!(out, "{k} {h} {} {} {} {}", t.state, t.action, t.reward, t.next_state)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> FqeError {
    FqeError::Parse { line, message: message.into() }
}

fn parse_state(token: &str, continuous: bool, line: usize) -> Result<State> {
    if token == "*" {
        return Ok(State::Absorbing);
    }
    if continuous {
        token
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|e| parse_err(line, format!("bad coordinate `{v}`: {e}"))))
            .collect::<Result<Vec<_>>>()
            .map(State::Continuous)
    } else {
        token.parse().map(State::Discrete).map_err(|e| parse_err(line, format!("bad state `{token}`: {e}")))
    }
}

fn header_field<'a>(fields: &'a [(&'a str, &'a str)], key: &str) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| parse_err(1, format!("header is missing `{key}`")))
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Dataset> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "empty input"))??;
    let rest = header.strip_prefix(MAGIC).ok_or_else(|| parse_err(1, "missing dataset header"))?;
    let fields: Vec<(&str, &str)> =
        rest.split_whitespace().filter_map(|tok| tok.split_once('=')).collect();
    let k: usize = header_field(&fields, "K")?.parse().map_err(|_| parse_err(1, "bad K"))?;
    let horizon: usize = header_field(&fields, "H")?.parse().map_err(|_| parse_err(1, "bad H"))?;
    let continuous = match header_field(&fields, "states")? {
        "continuous" => true,
        "discrete" => false,
        other => return Err(parse_err(1, format!("unknown state kind `{other}`"))),
    };
    let env = header_field(&fields, "env")?;
    let config = header_field(&fields, "config")?;

    let mut episodes = Vec::with_capacity(k);
    let mut current: Vec<Transition> = Vec::with_capacity(horizon);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 6 {
            return Err(parse_err(lineno, format!("expected 6 fields, found {}", tok.len())));
        }
        let ep: usize = tok[0].parse().map_err(|_| parse_err(lineno, "bad episode index"))?;
        let h: usize = tok[1].parse().map_err(|_| parse_err(lineno, "bad step index"))?;
        if ep != episodes.len() || h != current.len() {
            return Err(parse_err(lineno, format!("expected episode {} step {}", episodes.len(), current.len())));
        }
        current.push(Transition {
            state: parse_state(tok[2], continuous, lineno)?,
            action: tok[3].parse().map_err(|_| parse_err(lineno, "bad action"))?,
            reward: tok[4].parse().map_err(|_| parse_err(lineno, "bad reward"))?,
            next_state: parse_state(tok[5], continuous, lineno)?,
        });
        if current.len() == horizon {
            let done = std::mem::replace(&mut current, Vec::with_capacity(horizon));
            episodes.push(Arc::new(Episode::new(done).map_err(|e| parse_err(lineno, e.to_string()))?));
        }
    }
    if !current.is_empty() || episodes.len() != k {
        return Err(parse_err(0, format!("expected {k} complete episodes, found {}", episodes.len())));
    }
    Dataset::new(episodes, env, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{
        cliff_walking_env, generate_episodes, mountain_car_env, Environment, EnergyPumping, Policy, PolicyKind,
    };

    fn round_trip(data: &Dataset) -> Dataset {
        let mut buf = Vec::new();
        write_dataset(&mut buf, data).unwrap();
        read_dataset(buf.as_slice()).unwrap()
    }

    #[test]
    fn tabular_round_trip_is_exact() {
        let env = cliff_walking_env(0.2, -50.0).unwrap();
        let pi = Policy::uniform(48, 4).unwrap();
        let data = generate_episodes(&env, &pi, 5, 30, 9).unwrap();
        assert_eq!(round_trip(&data), data);
    }

    #[test]
    fn continuous_round_trip_is_bit_exact() {
        let env = mountain_car_env(0.3).unwrap();
        let pi = Policy::from_preferences(Arc::new(EnergyPumping), PolicyKind::EpsilonGreedy(0.5)).unwrap();
        let data = generate_episodes(&env, &pi, 4, 60, 2).unwrap();
        let back = round_trip(&data);
        for (a, b) in data.transitions().zip(back.transitions()) {
            if let (State::Continuous(x), State::Continuous(y)) = (&a.state, &b.state) {
                assert!(x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits()));
            }
        }
        assert_eq!(back, data);
        assert_eq!(back.env_config(), env.config());
    }

    #[test]
    fn single_transition_file() {
        let env = cliff_walking_env(0.0, -50.0).unwrap();
        let pi = Policy::uniform(48, 4).unwrap();
        let data = generate_episodes(&env, &pi, 1, 1, 0).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }

    #[test]
    fn truncated_input_is_an_error() {
        let text = "# fqe-dataset v1 K=2 H=1 states=discrete env=x config=\n0 0 0 0 1 0\n";
        assert!(matches!(read_dataset(text.as_bytes()), Err(FqeError::Parse { .. })));
        let bad = "# fqe-dataset v1 K=1 H=1 states=discrete env=x config=\n0 0 zero 0 1 0\n";
        assert!(matches!(read_dataset(bad.as_bytes()), Err(FqeError::Parse { line: 2, .. })));
    }
}
