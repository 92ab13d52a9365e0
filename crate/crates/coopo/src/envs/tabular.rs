//! Finite MDPs with explicit transition tensors.

use super::{Action, Observation, StepResult};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

const ROW_SUM_TOL: f64 = 1e-12;

/// Dynamics `P[s][a][s']`, rewards `r[s][a]`, start distribution,
/// discount and episode horizon.
#[derive(Clone, Debug)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    p: Vec<f64>,
    r: Vec<f64>,
    pub d0: Vec<f64>,
    pub gamma: f64,
    pub horizon: usize,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        p: Vec<f64>,
        r: Vec<f64>,
        d0: Vec<f64>,
        gamma: f64,
        horizon: usize,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::input("n_states and n_actions must be positive"));
        }
        if p.len() != n_states * n_actions * n_states {
            return Err(Error::input("transition tensor has the wrong size"));
        }
        if r.len() != n_states * n_actions {
            return Err(Error::input("reward table has the wrong size"));
        }
        if d0.len() != n_states {
            return Err(Error::input("start distribution has the wrong size"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::input("gamma must lie in [0, 1)"));
        }
        if horizon == 0 {
            return Err(Error::input("horizon must be positive"));
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric("rewards must be finite"));
        }
        let mdp = TabularMdp { n_states, n_actions, p, r, d0, gamma, horizon };
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = mdp.p(s, a);
                if row.iter().any(|&x| x < 0.0) {
                    return Err(Error::input(format!("P[{s}][{a}] has a negative entry")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::input(format!("P[{s}][{a}] sums to {sum}, not 1")));
                }
            }
        }
        if mdp.d0.iter().any(|&x| x < 0.0) || (mdp.d0.iter().sum::<f64>() - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::input("d0 is not a probability vector"));
        }
        Ok(mdp)
    }

    pub fn p(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.p[base..base + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.r[s * self.n_actions + a]
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let fixture: TabularFixture =
            serde_json::from_str(text).map_err(|e| Error::schema(format!("tabular fixture: {e}")))?;
        fixture.into_mdp()
    }

    pub fn to_json_string(&self) -> String {
        let fixture = TabularFixture {
            n_states: self.n_states,
            n_actions: self.n_actions,
            p: (0..self.n_states)
                .map(|s| (0..self.n_actions).map(|a| self.p(s, a).to_vec()).collect())
                .collect(),
            r: (0..self.n_states)
                .map(|s| (0..self.n_actions).map(|a| self.reward(s, a)).collect())
                .collect(),
            d0: self.d0.clone(),
            gamma: self.gamma,
            horizon: self.horizon,
        };
        serde_json::to_string_pretty(&fixture).expect("fixture serializes")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TabularFixture {
    n_states: usize,
    n_actions: usize,
    #[serde(rename = "P")]
    p: Vec<Vec<Vec<f64>>>,
    r: Vec<Vec<f64>>,
    d0: Vec<f64>,
    gamma: f64,
    horizon: usize,
}

impl TabularFixture {
    fn into_mdp(self) -> Result<TabularMdp> {
        let flat_p: Vec<f64> = self.p.into_iter().flatten().flatten().collect();
        let flat_r: Vec<f64> = self.r.into_iter().flatten().collect();
        TabularMdp::new(self.n_states, self.n_actions, flat_p, flat_r, self.d0, self.gamma, self.horizon)
    }
}

pub fn load_tabular_fixture(path: &Path) -> Result<TabularMdp> {
    let text = std::fs::read_to_string(path)?;
    TabularMdp::from_json_str(&text).map_err(|e| Error::schema(format!("{}: {e}", path.display())))
}

/// Episode state machine over a [`TabularMdp`].
pub struct TabularEnv {
    pub name: String,
    pub mdp: TabularMdp,
    rng: ChaCha8Rng,
    state: usize,
    step_idx: usize,
    live: bool,
}

impl TabularEnv {
    pub fn new(name: &str, mdp: TabularMdp) -> Self {
        TabularEnv { name: name.to_string(), mdp, rng: seeded_rng(0), state: 0, step_idx: 0, live: false }
    }

    pub fn seed(&mut self, seed: u64) {
        self.rng = seeded_rng(seed);
        self.live = false;
    }

    pub fn reset(&mut self) -> Observation {
        self.state = sample_index(&self.mdp.d0, &mut self.rng);
        self.step_idx = 0;
        self.live = true;
        Observation::Discrete(self.state)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        if !self.live {
            return Err(Error::input("episode not running, call reset first"));
        }
        let a = action.index()?;
        if a >= self.mdp.n_actions {
            return Err(Error::input(format!("action {a} out of range, {} available", self.mdp.n_actions)));
        }
        let reward = self.mdp.reward(self.state, a);
        let next = sample_index(self.mdp.p(self.state, a), &mut self.rng);
        self.state = next;
        self.step_idx += 1;
        let done = self.step_idx >= self.mdp.horizon;
        if done {
            self.live = false;
        }
        Ok(StepResult { next_state: Observation::Discrete(next), reward, done, step_index: self.step_idx })
    }
}

pub(crate) fn sample_index(weights: &[f64], rng: &mut impl Rng) -> usize {
    let mut u: f64 = rng.gen::<f64>();
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // Rounding pushed u past the total mass; return the last positive entry.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}
