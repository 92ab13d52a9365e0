//! Planar point mass driven by bounded acceleration.
//!
//! State is `[px, py, vx, vy]`. Each step integrates
//! `v += a * dt; p += v * dt` with the acceleration clamped per
//! coordinate. Reward is `-|p - goal|^2 - 0.01 |a|^2` evaluated at the
//! pre-step position with the clamped acceleration, so it is never
//! positive and vanishes only while sitting at the goal doing nothing.

use super::{Action, Observation, StepResult};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct PointMassCfg {
    pub goal: [f64; 2],
    pub dt: f64,
    pub accel_limit: f64,
    pub horizon: usize,
    /// Starts are uniform on `[-start_spread, start_spread]^2`.
    pub start_spread: f64,
}

impl Default for PointMassCfg {
    fn default() -> Self {
        PointMassCfg { goal: [1.0, 1.0], dt: 0.1, accel_limit: 1.0, horizon: 50, start_spread: 0.1 }
    }
}

pub struct PointMassEnv {
    pub cfg: PointMassCfg,
    rng: ChaCha8Rng,
    state: [f64; 4],
    step_idx: usize,
    live: bool,
}

impl PointMassEnv {
    pub fn new(cfg: PointMassCfg) -> Self {
        PointMassEnv { cfg, rng: seeded_rng(0), state: [0.0; 4], step_idx: 0, live: false }
    }

    pub fn seed(&mut self, seed: u64) {
        self.rng = seeded_rng(seed);
        self.live = false;
    }

    pub fn reset(&mut self) -> Observation {
        let s = self.cfg.start_spread;
        self.state = [self.rng.gen_range(-s..=s), self.rng.gen_range(-s..=s), 0.0, 0.0];
        self.step_idx = 0;
        self.live = true;
        Observation::Continuous(self.state.to_vec())
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        if !self.live {
            return Err(Error::input("episode not running, call reset first"));
        }
        let raw = action.vector()?;
        if raw.len() != 2 {
            return Err(Error::input(format!("point-mass action has {} entries, expected 2", raw.len())));
        }
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric("non-finite action"));
        }
        let lim = self.cfg.accel_limit;
        let a = [raw[0].clamp(-lim, lim), raw[1].clamp(-lim, lim)];

        let [px, py, vx, vy] = self.state;
        let dx = px - self.cfg.goal[0];
        let dy = py - self.cfg.goal[1];
        let reward = -(dx * dx + dy * dy) - 0.01 * (a[0] * a[0] + a[1] * a[1]);

        let dt = self.cfg.dt;
        let nvx = vx + a[0] * dt;
        let nvy = vy + a[1] * dt;
        self.state = [px + nvx * dt, py + nvy * dt, nvx, nvy];
        self.step_idx += 1;
        let done = self.step_idx >= self.cfg.horizon;
        if done {
            self.live = false;
        }
        Ok(StepResult {
            next_state: Observation::Continuous(self.state.to_vec()),
            reward,
            done,
            step_index: self.step_idx,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> PointMassEnv {
        let mut e = PointMassEnv::new(PointMassCfg::default());
        e.seed(4);
        e
    }

    #[test]
    fn reward_is_nonpositive_and_zero_at_goal() {
        let mut e = env();
        e.reset();
        for _ in 0..20 {
            let r = e.step(&Action::Continuous(vec![0.3, -0.2])).unwrap();
            assert!(r.reward <= 0.0);
        }

        let mut at_goal = PointMassEnv::new(PointMassCfg { start_spread: 0.0, goal: [0.0, 0.0], ..Default::default() });
        at_goal.seed(1);
        at_goal.reset();
        let r = at_goal.step(&Action::Continuous(vec![0.0, 0.0])).unwrap();
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn actions_clamp_to_the_accel_limit() {
        let mut e = PointMassEnv::new(PointMassCfg { start_spread: 0.0, ..Default::default() });
        e.seed(2);
        e.reset();
        let r = e.step(&Action::Continuous(vec![100.0, -100.0])).unwrap();
        let v = r.next_state.vector().unwrap().to_vec();
        // One step at the limit: v = dt, p = dt^2.
        assert!((v[2] - 0.1).abs() < 1e-12);
        assert!((v[3] + 0.1).abs() < 1e-12);
        assert!((v[0] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn nan_action_is_a_numeric_error() {
        let mut e = env();
        e.reset();
        let err = e.step(&Action::Continuous(vec![f64::NAN, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn episode_ends_exactly_at_horizon() {
        let mut e = env();
        e.reset();
        for i in 1..=e.cfg.horizon {
            let r = e.step(&Action::Continuous(vec![0.0, 0.0])).unwrap();
            assert_eq!(r.done, i == e.cfg.horizon);
        }
        assert!(e.step(&Action::Continuous(vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn same_seed_same_starts() {
        let mut a = env();
        let mut b = env();
        for _ in 0..5 {
            assert_eq!(a.reset(), b.reset());
            a.step(&Action::Continuous(vec![1.0, 1.0])).unwrap();
            b.step(&Action::Continuous(vec![1.0, 1.0])).unwrap();
            while a.live {
                a.step(&Action::Continuous(vec![0.0, 0.0])).unwrap();
                b.step(&Action::Continuous(vec![0.0, 0.0])).unwrap();
            }
        }
    }
}
