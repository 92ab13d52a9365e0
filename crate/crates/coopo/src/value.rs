//! Q and V function approximators.
//!
//! Tabular variants feed a one-hot state through the network; the Q
//! net then emits one output per action. Continuous variants take the
//! raw state (Q appends the action to it) and emit a single scalar.
//! Zero-hidden-layer tabular nets are plain lookup tables, which is
//! what the exact-arithmetic tests rely on.

use rand::Rng;

use crate::envs::{Action, Observation};
use crate::error::{Error, Result};
use crate::nn::{forward, init_params, loss_grad, Activation, FnLoss, MlpSpec, ParameterVector};
use crate::policy::PolicyModel;
use rand_chacha::ChaCha8Rng;

fn onehot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum QKind {
    PerAction { n_states: usize, n_actions: usize },
    StateAction { state_dim: usize, action_dim: usize },
}

/// Action-value approximator.
#[derive(Clone, Debug)]
pub struct QModel {
    kind: QKind,
    pub spec: MlpSpec,
    pub params: ParameterVector,
}

impl QModel {
    pub fn tabular(
        n_states: usize,
        n_actions: usize,
        hidden_layers: usize,
        hidden_units: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let spec = MlpSpec::new(n_states, hidden_layers, hidden_units, n_actions, activation)?;
        let params = init_params(&spec, rng);
        Ok(QModel { kind: QKind::PerAction { n_states, n_actions }, spec, params })
    }

    pub fn continuous(
        state_dim: usize,
        action_dim: usize,
        hidden_layers: usize,
        hidden_units: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let spec = MlpSpec::new(state_dim + action_dim, hidden_layers, hidden_units, 1, activation)?;
        let params = init_params(&spec, rng);
        Ok(QModel { kind: QKind::StateAction { state_dim, action_dim }, spec, params })
    }

    /// Lookup table realized as a bias-free linear net over one-hot
    /// states; `table` is `[s * n_actions + a]`-indexed.
    pub fn tabular_from_table(n_states: usize, n_actions: usize, table: &[f64]) -> Result<Self> {
        if table.len() != n_states * n_actions {
            return Err(Error::input("table size does not match n_states * n_actions"));
        }
        let spec = MlpSpec::linear(n_states, n_actions)?;
        let mut params = vec![0.0; spec.param_count()];
        for s in 0..n_states {
            for a in 0..n_actions {
                params[a * n_states + s] = table[s * n_actions + a];
            }
        }
        Ok(QModel {
            kind: QKind::PerAction { n_states, n_actions },
            spec,
            params: ParameterVector::from_vec(params),
        })
    }

    /// Rebuilds a tabular model around checkpointed parameters.
    pub fn tabular_from_parts(spec: MlpSpec, params: ParameterVector) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::schema("parameter count does not match the network shape"));
        }
        Ok(QModel {
            kind: QKind::PerAction { n_states: spec.input_dim, n_actions: spec.output_dim },
            spec,
            params,
        })
    }

    /// Rebuilds a continuous model around checkpointed parameters.
    pub fn continuous_from_parts(
        state_dim: usize,
        spec: MlpSpec,
        params: ParameterVector,
    ) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::schema("parameter count does not match the network shape"));
        }
        if spec.output_dim != 1 || spec.input_dim <= state_dim {
            return Err(Error::schema("network shape does not fit a state-action critic"));
        }
        let action_dim = spec.input_dim - state_dim;
        Ok(QModel { kind: QKind::StateAction { state_dim, action_dim }, spec, params })
    }

    fn encode(&self, s: &Observation, a: &Action) -> Result<Vec<f64>> {
        match self.kind {
            QKind::PerAction { n_states, .. } => {
                let idx = s.index()?;
                if idx >= n_states {
                    return Err(Error::input(format!("state {idx} outside {n_states} states")));
                }
                let _ = a;
                Ok(onehot(n_states, idx))
            }
            QKind::StateAction { state_dim, action_dim } => {
                let sv = s.vector()?;
                let av = a.vector()?;
                if sv.len() != state_dim || av.len() != action_dim {
                    return Err(Error::input("state or action dimension mismatch"));
                }
                let mut x = Vec::with_capacity(state_dim + action_dim);
                x.extend_from_slice(sv);
                x.extend_from_slice(av);
                Ok(x)
            }
        }
    }

    pub fn value(&self, s: &Observation, a: &Action) -> Result<f64> {
        match self.kind {
            QKind::PerAction { n_actions, .. } => {
                let idx = a.index()?;
                if idx >= n_actions {
                    return Err(Error::input(format!("action {idx} outside {n_actions} actions")));
                }
                Ok(self.values_all_actions(s)?[idx])
            }
            QKind::StateAction { .. } => {
                Ok(forward(&self.spec, &self.params, &self.encode(s, a)?)?[0])
            }
        }
    }

    /// All action values at one state; tabular only.
    pub fn values_all_actions(&self, s: &Observation) -> Result<Vec<f64>> {
        match self.kind {
            QKind::PerAction { n_states, .. } => {
                let idx = s.index()?;
                if idx >= n_states {
                    return Err(Error::input(format!("state {idx} outside {n_states} states")));
                }
                forward(&self.spec, &self.params, &onehot(n_states, idx))
            }
            QKind::StateAction { .. } => {
                Err(Error::input("per-action values need a tabular critic"))
            }
        }
    }

    /// `E_{a ~ pi}[Q(s, a)]`: the exact sum for tabular critics, a
    /// single sampled action for continuous ones.
    pub fn expected_under(
        &self,
        pi: &PolicyModel,
        s: &Observation,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        match self.kind {
            QKind::PerAction { .. } => {
                let qs = self.values_all_actions(s)?;
                let probs = pi.action_probs(s)?;
                if probs.len() != qs.len() {
                    return Err(Error::input("policy and critic disagree on the action count"));
                }
                Ok(probs.iter().zip(&qs).map(|(p, q)| p * q).sum())
            }
            QKind::StateAction { .. } => {
                let a = pi.sample(s, rng)?;
                self.value(s, &a)
            }
        }
    }

    /// Mean squared error against `targets` with its parameter
    /// gradient, differentiating only through the chosen action's
    /// output.
    pub fn mse_loss_grad(
        &self,
        batch: &[(&Observation, &Action)],
        targets: &[f64],
    ) -> Result<(f64, ParameterVector)> {
        if batch.is_empty() || batch.len() != targets.len() {
            return Err(Error::input("batch and targets must be non-empty and equal-length"));
        }
        let inputs: Vec<Vec<f64>> =
            batch.iter().map(|(s, a)| self.encode(s, a)).collect::<Result<_>>()?;
        let coords: Vec<usize> = match self.kind {
            QKind::PerAction { .. } => {
                batch.iter().map(|(_, a)| a.index()).collect::<Result<_>>()?
            }
            QKind::StateAction { .. } => vec![0; batch.len()],
        };
        let inv_b = 1.0 / batch.len() as f64;
        let loss = FnLoss(move |outputs: &[Vec<f64>]| {
            let mut value = 0.0;
            let mut d_outputs = Vec::with_capacity(outputs.len());
            for ((out, &c), &y) in outputs.iter().zip(&coords).zip(targets) {
                let err = out[c] - y;
                value += err * err * inv_b;
                let mut d = vec![0.0; out.len()];
                d[c] = 2.0 * err * inv_b;
                d_outputs.push(d);
            }
            (value, d_outputs)
        });
        loss_grad(&self.spec, &self.params, &inputs, &loss)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum VKind {
    OneHot { n_states: usize },
    Raw { state_dim: usize },
}

/// State-value approximator.
#[derive(Clone, Debug)]
pub struct VModel {
    kind: VKind,
    pub spec: MlpSpec,
    pub params: ParameterVector,
}

impl VModel {
    pub fn tabular(
        n_states: usize,
        hidden_layers: usize,
        hidden_units: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let spec = MlpSpec::new(n_states, hidden_layers, hidden_units, 1, activation)?;
        let params = init_params(&spec, rng);
        Ok(VModel { kind: VKind::OneHot { n_states }, spec, params })
    }

    pub fn continuous(
        state_dim: usize,
        hidden_layers: usize,
        hidden_units: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let spec = MlpSpec::new(state_dim, hidden_layers, hidden_units, 1, activation)?;
        let params = init_params(&spec, rng);
        Ok(VModel { kind: VKind::Raw { state_dim }, spec, params })
    }

    /// Exact lookup of per-state values through a bias-free linear
    /// net.
    pub fn tabular_from_values(values: &[f64]) -> Result<Self> {
        let n_states = values.len();
        let spec = MlpSpec::linear(n_states, 1)?;
        let mut params = vec![0.0; spec.param_count()];
        params[..n_states].copy_from_slice(values);
        Ok(VModel {
            kind: VKind::OneHot { n_states },
            spec,
            params: ParameterVector::from_vec(params),
        })
    }

    pub fn from_parts(tabular: bool, spec: MlpSpec, params: ParameterVector) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::schema("parameter count does not match the network shape"));
        }
        if spec.output_dim != 1 {
            return Err(Error::schema("a state-value net must have one output"));
        }
        let kind = if tabular {
            VKind::OneHot { n_states: spec.input_dim }
        } else {
            VKind::Raw { state_dim: spec.input_dim }
        };
        Ok(VModel { kind, spec, params })
    }

    fn encode(&self, s: &Observation) -> Result<Vec<f64>> {
        match self.kind {
            VKind::OneHot { n_states } => {
                let idx = s.index()?;
                if idx >= n_states {
                    return Err(Error::input(format!("state {idx} outside {n_states} states")));
                }
                Ok(onehot(n_states, idx))
            }
            VKind::Raw { state_dim } => {
                let sv = s.vector()?;
                if sv.len() != state_dim {
                    return Err(Error::input("state dimension mismatch"));
                }
                Ok(sv.to_vec())
            }
        }
    }

    pub fn value(&self, s: &Observation) -> Result<f64> {
        Ok(forward(&self.spec, &self.params, &self.encode(s)?)?[0])
    }

    pub fn mse_loss_grad(
        &self,
        states: &[&Observation],
        targets: &[f64],
    ) -> Result<(f64, ParameterVector)> {
        if states.is_empty() || states.len() != targets.len() {
            return Err(Error::input("batch and targets must be non-empty and equal-length"));
        }
        let inputs: Vec<Vec<f64>> = states.iter().map(|s| self.encode(s)).collect::<Result<_>>()?;
        let inv_b = 1.0 / states.len() as f64;
        let loss = FnLoss(move |outputs: &[Vec<f64>]| {
            let mut value = 0.0;
            let mut d_outputs = Vec::with_capacity(outputs.len());
            for (out, &y) in outputs.iter().zip(targets) {
                let err = out[0] - y;
                value += err * err * inv_b;
                d_outputs.push(vec![2.0 * err * inv_b]);
            }
            (value, d_outputs)
        });
        loss_grad(&self.spec, &self.params, &inputs, &loss)
    }
}
