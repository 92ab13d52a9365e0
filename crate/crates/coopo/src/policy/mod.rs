//! Stochastic policies.
//!
//! Two families share one interface: [`CategoricalPolicy`] turns a
//! state index into action logits (through a network over one-hot
//! inputs, or a plain logits table when the network has no hidden
//! layers), and [`GaussianPolicy`] maps a continuous state to a
//! diagonal Gaussian over actions with one global log-std vector.
//!
//! KL and entropy are exact in both families. Total variation is
//! exact for categorical rows; for Gaussians it is reported as the
//! `sqrt(KL/2)` upper bound, which is the quantity the monitoring
//! actually needs.

mod categorical;
mod gaussian;

pub use categorical::CategoricalPolicy;
pub use gaussian::GaussianPolicy;

use crate::envs::{Action, Observation};
use crate::error::{Error, Result};
use crate::nn::{MlpSpec, ParameterVector};
use rand_chacha::ChaCha8Rng;

#[derive(Clone)]
pub enum PolicyModel {
    Categorical(CategoricalPolicy),
    Gaussian(GaussianPolicy),
}

impl PolicyModel {
    pub fn log_prob(&self, obs: &Observation, action: &Action) -> Result<f64> {
        match self {
            PolicyModel::Categorical(p) => p.log_prob(obs.index()?, action.index()?),
            PolicyModel::Gaussian(p) => p.log_prob(obs.vector()?, action.vector()?),
        }
    }

    pub fn sample(&self, obs: &Observation, rng: &mut ChaCha8Rng) -> Result<Action> {
        match self {
            PolicyModel::Categorical(p) => Ok(Action::Discrete(p.sample(obs.index()?, rng)?)),
            PolicyModel::Gaussian(p) => Ok(Action::Continuous(p.sample(obs.vector()?, rng)?)),
        }
    }

    /// Action with the highest density: argmax for categorical, the
    /// mean for Gaussian.
    pub fn mode(&self, obs: &Observation) -> Result<Action> {
        match self {
            PolicyModel::Categorical(p) => {
                let probs = p.probs(obs.index()?)?;
                let best = probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("probs are finite"))
                    .map(|(i, _)| i)
                    .expect("at least one action");
                Ok(Action::Discrete(best))
            }
            PolicyModel::Gaussian(p) => Ok(Action::Continuous(p.mean(obs.vector()?)?)),
        }
    }

    pub fn kl_at(&self, other: &PolicyModel, obs: &Observation) -> Result<f64> {
        match (self, other) {
            (PolicyModel::Categorical(p), PolicyModel::Categorical(q)) => p.kl_at(q, obs.index()?),
            (PolicyModel::Gaussian(p), PolicyModel::Gaussian(q)) => p.kl_at(q, obs.vector()?),
            _ => Err(Error::input("KL between different policy families")),
        }
    }

    pub fn tv_at(&self, other: &PolicyModel, obs: &Observation) -> Result<f64> {
        match (self, other) {
            (PolicyModel::Categorical(p), PolicyModel::Categorical(q)) => p.tv_at(q, obs.index()?),
            (PolicyModel::Gaussian(p), PolicyModel::Gaussian(q)) => p.tv_at(q, obs.vector()?),
            _ => Err(Error::input("TV between different policy families")),
        }
    }

    pub fn entropy_at(&self, obs: &Observation) -> Result<f64> {
        match self {
            PolicyModel::Categorical(p) => p.entropy_at(obs.index()?),
            PolicyModel::Gaussian(p) => p.entropy_at(obs.vector()?),
        }
    }

    pub fn params(&self) -> &ParameterVector {
        match self {
            PolicyModel::Categorical(p) => &p.params,
            PolicyModel::Gaussian(p) => &p.params,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        match self {
            PolicyModel::Categorical(p) => &p.spec,
            PolicyModel::Gaussian(p) => &p.spec,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector {
        match self {
            PolicyModel::Categorical(p) => &mut p.params,
            PolicyModel::Gaussian(p) => &mut p.params,
        }
    }

    /// Adds `coeff * d log pi(action|obs) / d params` to `grad`.
    pub fn accumulate_logp_grad(
        &self,
        obs: &Observation,
        action: &Action,
        coeff: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        match self {
            PolicyModel::Categorical(p) => p.accumulate_logp_grad(obs.index()?, action.index()?, coeff, grad),
            PolicyModel::Gaussian(p) => p.accumulate_logp_grad(obs.vector()?, action.vector()?, coeff, grad),
        }
    }

    /// Adds `coeff * d KL(self || reference)(obs) / d params` to `grad`.
    pub fn accumulate_kl_grad(
        &self,
        reference: &PolicyModel,
        obs: &Observation,
        coeff: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        match (self, reference) {
            (PolicyModel::Categorical(p), PolicyModel::Categorical(q)) => {
                p.accumulate_kl_grad(q, obs.index()?, coeff, grad)
            }
            (PolicyModel::Gaussian(p), PolicyModel::Gaussian(q)) => {
                p.accumulate_kl_grad(q, obs.vector()?, coeff, grad)
            }
            _ => Err(Error::input("KL gradient between different policy families")),
        }
    }

    /// Exact action probabilities at one state; categorical only.
    pub fn action_probs(&self, obs: &Observation) -> Result<Vec<f64>> {
        match self {
            PolicyModel::Categorical(p) => p.probs(obs.index()?),
            PolicyModel::Gaussian(_) => {
                Err(Error::input("action probabilities need a categorical policy"))
            }
        }
    }

    /// Exact action distribution per state; categorical only.
    pub fn prob_table(&self) -> Result<ProbTable> {
        match self {
            PolicyModel::Categorical(p) => p.prob_table(),
            PolicyModel::Gaussian(_) => Err(Error::input("a Gaussian policy has no probability table")),
        }
    }
}

/// Row-stochastic matrix: one action distribution per state.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbTable {
    pub n_states: usize,
    pub n_actions: usize,
    rows: Vec<f64>,
}

impl ProbTable {
    pub fn new(n_states: usize, n_actions: usize, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != n_states * n_actions {
            return Err(Error::input("probability table has the wrong size"));
        }
        for s in 0..n_states {
            let row = &rows[s * n_actions..(s + 1) * n_actions];
            if row.iter().any(|&x| !(0.0..=1.0 + 1e-12).contains(&x)) {
                return Err(Error::input(format!("row {s} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::input(format!("row {s} sums to {sum}")));
            }
        }
        Ok(ProbTable { n_states, n_actions, rows })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        ProbTable {
            n_states,
            n_actions,
            rows: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.rows[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn kl_row(&self, other: &ProbTable, s: usize) -> f64 {
        kl_discrete(self.row(s), other.row(s))
    }

    pub fn tv_row(&self, other: &ProbTable, s: usize) -> f64 {
        tv_discrete(self.row(s), other.row(s))
    }

    pub fn entropy_row(&self, s: usize) -> f64 {
        entropy_discrete(self.row(s))
    }

    pub fn max_tv(&self, other: &ProbTable) -> f64 {
        (0..self.n_states).map(|s| self.tv_row(other, s)).fold(0.0, f64::max)
    }

    /// `sum_s weights[s] * KL(self(.|s) || other(.|s))`.
    pub fn weighted_kl(&self, other: &ProbTable, weights: &[f64]) -> f64 {
        (0..self.n_states).map(|s| weights[s] * self.kl_row(other, s)).sum()
    }
}

/// `sum p log(p/q)` with the `0 log 0 = 0` convention.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            if pi == 0.0 {
                0.0
            } else {
                pi * (pi.ln() - qi.ln())
            }
        })
        .sum()
}

pub fn tv_discrete(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(pi, qi)| (pi - qi).abs()).sum::<f64>()
}

pub fn entropy_discrete(p: &[f64]) -> f64 {
    -p.iter().map(|&pi| if pi == 0.0 { 0.0 } else { pi * pi.ln() }).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn discrete_kl_tv_entropy_hand_values() {
        let uniform = [0.5, 0.5];
        let tilted = [0.8807970779778823, 0.11920292202211755];
        assert!((kl_discrete(&tilted, &uniform) - 0.3278133254727375).abs() < 1e-12);
        assert!((tv_discrete(&tilted, &uniform) - 0.3807970779778823).abs() < 1e-12);
        assert_eq!(kl_discrete(&uniform, &uniform), 0.0);
        assert!((tv_discrete(&[0.7, 0.3], &[0.3, 0.7]) - 0.4).abs() < 1e-15);
        assert!((entropy_discrete(&[0.25; 4]) - 1.3862943611198906).abs() < 1e-12);
        assert_eq!(entropy_discrete(&[1.0, 0.0]), 0.0);
    }

    #[test]
    fn family_mismatch_is_an_input_error() {
        let cat = PolicyModel::Categorical(CategoricalPolicy::tabular_uniform(2, 2).unwrap());
        let gauss = PolicyModel::Gaussian(
            GaussianPolicy::with_init(crate::nn::MlpSpec::linear(2, 2).unwrap(), &mut crate::rng::seeded_rng(1))
                .unwrap(),
        );
        let obs = Observation::Discrete(0);
        assert!(cat.kl_at(&gauss, &obs).is_err());
    }

    proptest! {
        #[test]
        fn pinsker_holds_for_random_rows(
            a in proptest::collection::vec(1e-6f64..1.0, 4),
            b in proptest::collection::vec(1e-6f64..1.0, 4),
        ) {
            let norm = |v: &[f64]| {
                let s: f64 = v.iter().sum();
                v.iter().map(|x| x / s).collect::<Vec<_>>()
            };
            let p = norm(&a);
            let q = norm(&b);
            let tv = tv_discrete(&p, &q);
            let kl = kl_discrete(&p, &q);
            prop_assert!(tv <= (kl / 2.0).sqrt() + 1e-12);
        }
    }
}
