//! Environments: exact tabular MDPs and a continuous point-mass task.
//!
//! Both families sit behind the [`Env`] state machine: seed it, call
//! [`Env::reset`], then step until `done`. Episodes always end at the
//! horizon; neither family terminates early. Tabular states and
//! actions are indices, point-mass states are `[px, py, vx, vy]` and
//! actions are planar accelerations.

mod pointmass;
mod tabular;

pub use pointmass::{PointMassCfg, PointMassEnv};
pub use tabular::{load_tabular_fixture, TabularEnv, TabularMdp};
pub(crate) use tabular::sample_index;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// State as seen by policies and datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Observation {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Observation {
    pub fn index(&self) -> Result<usize> {
        match self {
            Observation::Discrete(s) => Ok(*s),
            Observation::Continuous(_) => Err(Error::input("expected a discrete state")),
        }
    }

    pub fn vector(&self) -> Result<&[f64]> {
        match self {
            Observation::Continuous(v) => Ok(v),
            Observation::Discrete(_) => Err(Error::input("expected a continuous state")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn index(&self) -> Result<usize> {
        match self {
            Action::Discrete(a) => Ok(*a),
            Action::Continuous(_) => Err(Error::input("expected a discrete action")),
        }
    }

    pub fn vector(&self) -> Result<&[f64]> {
        match self {
            Action::Continuous(v) => Ok(v),
            Action::Discrete(_) => Err(Error::input("expected a continuous action")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub next_state: Observation,
    pub reward: f64,
    pub done: bool,
    /// Steps taken so far in the episode, counting this one.
    pub step_index: usize,
}

pub enum Env {
    Tabular(TabularEnv),
    PointMass(PointMassEnv),
}

impl Env {
    pub fn seed(&mut self, seed: u64) {
        match self {
            Env::Tabular(e) => e.seed(seed),
            Env::PointMass(e) => e.seed(seed),
        }
    }

    pub fn reset(&mut self) -> Observation {
        match self {
            Env::Tabular(e) => e.reset(),
            Env::PointMass(e) => e.reset(),
        }
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        match self {
            Env::Tabular(e) => e.step(action),
            Env::PointMass(e) => e.step(action),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Env::Tabular(e) => e.mdp.horizon,
            Env::PointMass(e) => e.cfg.horizon,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Env::Tabular(e) => &e.name,
            Env::PointMass(_) => "pointmass",
        }
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self, Env::Tabular(_))
    }

    pub fn tabular(&self) -> Option<&TabularMdp> {
        match self {
            Env::Tabular(e) => Some(&e.mdp),
            Env::PointMass(_) => None,
        }
    }
}

const BANDIT2: &str = include_str!("../../fixtures/bandit2.json");
const CHAIN5: &str = include_str!("../../fixtures/chain5.json");
const GRID4X4: &str = include_str!("../../fixtures/grid4x4.json");

/// Instantiates one of the in-repo benchmarks:
/// `bandit2`, `chain5`, `grid4x4` or `pointmass`.
pub fn make_benchmark(name: &str) -> Result<Env> {
    match name {
        "bandit2" => Ok(Env::Tabular(TabularEnv::new(name, TabularMdp::from_json_str(BANDIT2)?))),
        "chain5" => Ok(Env::Tabular(TabularEnv::new(name, TabularMdp::from_json_str(CHAIN5)?))),
        "grid4x4" => Ok(Env::Tabular(TabularEnv::new(name, TabularMdp::from_json_str(GRID4X4)?))),
        "pointmass" => Ok(Env::PointMass(PointMassEnv::new(PointMassCfg::default()))),
        other => Err(Error::input(format!(
            "unknown benchmark {other:?}, expected bandit2, chain5, grid4x4 or pointmass"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmarks_load() {
        for name in ["bandit2", "chain5", "grid4x4", "pointmass"] {
            let env = make_benchmark(name).unwrap();
            assert_eq!(env.name(), name);
        }
        assert!(make_benchmark("cartpole").is_err());
    }

    #[test]
    fn bandit_has_one_state_two_actions_horizon_one() {
        let env = make_benchmark("bandit2").unwrap();
        let mdp = env.tabular().unwrap();
        assert_eq!((mdp.n_states, mdp.n_actions, mdp.horizon), (1, 2, 1));
    }

    #[test]
    fn episodes_run_exactly_to_horizon() {
        for name in ["bandit2", "chain5", "grid4x4"] {
            let mut env = make_benchmark(name).unwrap();
            env.seed(3);
            env.reset();
            let h = env.horizon();
            for i in 1..=h {
                let r = env.step(&Action::Discrete(0)).unwrap();
                assert_eq!(r.step_index, i);
                assert_eq!(r.done, i == h);
            }
            assert!(env.step(&Action::Discrete(0)).is_err());
        }
    }

    #[test]
    fn observation_json_is_untagged() {
        let d: Observation = serde_json::from_str("3").unwrap();
        assert_eq!(d, Observation::Discrete(3));
        let c: Observation = serde_json::from_str("[0.5,-1.0]").unwrap();
        assert_eq!(c, Observation::Continuous(vec![0.5, -1.0]));
    }
}
