//! Diagonal Gaussian policies for continuous actions.

use crate::error::{Error, Result};
use crate::nn::{forward, init_params, MlpSpec, ParameterVector};
use rand::Rng;
use std::sync::atomic::{AtomicU64, Ordering};

const LN_2PI: f64 = 1.8378770664093453;
const STD_FLOOR: f64 = 1e-4;
const STD_CEIL: f64 = 10.0;

/// Mean comes from a network over the state; the log-std vector is a
/// trailing block of free parameters shared across states. Evaluated
/// standard deviations are clamped to `[1e-4, 10]` and a counter
/// records how often the clamp fires.
pub struct GaussianPolicy {
    pub action_dim: usize,
    pub spec: MlpSpec,
    /// Mean-network parameters followed by `action_dim` log-stds.
    pub params: ParameterVector,
    clamp_events: AtomicU64,
}

impl Clone for GaussianPolicy {
    fn clone(&self) -> Self {
        GaussianPolicy {
            action_dim: self.action_dim,
            spec: self.spec.clone(),
            params: self.params.clone(),
            clamp_events: AtomicU64::new(self.clamp_events.load(Ordering::Relaxed)),
        }
    }
}

impl GaussianPolicy {
    pub fn new(spec: MlpSpec, params: ParameterVector) -> Result<Self> {
        let expected = spec.param_count() + spec.output_dim;
        if params.len() != expected {
            return Err(Error::input(format!(
                "parameter vector has {} entries, policy needs {expected}",
                params.len()
            )));
        }
        Ok(GaussianPolicy { action_dim: spec.output_dim, spec, params, clamp_events: AtomicU64::new(0) })
    }

    /// Network init for the mean, log-std at `ln 0.5` everywhere.
    pub fn with_init(spec: MlpSpec, rng: &mut impl Rng) -> Result<Self> {
        let mut raw = init_params(&spec, rng).into_vec();
        raw.extend(std::iter::repeat(0.5f64.ln()).take(spec.output_dim));
        Self::new(spec, ParameterVector::from_vec(raw))
    }

    fn split(&self) -> (ParameterVector, &[f64]) {
        let n = self.spec.param_count();
        (ParameterVector::from_vec(self.params[..n].to_vec()), &self.params[n..])
    }

    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let n = self.spec.param_count();
        let net = ParameterVector::from_vec(self.params[..n].to_vec());
        forward(&self.spec, &net, obs)
    }

    /// Clamped standard deviations.
    pub fn stds(&self) -> Vec<f64> {
        let n = self.spec.param_count();
        self.params[n..]
            .iter()
            .map(|&l| {
                let raw = l.exp();
                let clamped = raw.clamp(STD_FLOOR, STD_CEIL);
                if clamped != raw {
                    self.clamp_events.fetch_add(1, Ordering::Relaxed);
                }
                clamped
            })
            .collect()
    }

    pub fn clamp_events(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    fn check_action(&self, action: &[f64]) -> Result<()> {
        if action.len() != self.action_dim {
            return Err(Error::input(format!(
                "action has {} entries, policy emits {}",
                action.len(),
                self.action_dim
            )));
        }
        Ok(())
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        self.check_action(action)?;
        let mean = self.mean(obs)?;
        let stds = self.stds();
        let mut lp = 0.0;
        for d in 0..self.action_dim {
            let z = (action[d] - mean[d]) / stds[d];
            lp += -0.5 * LN_2PI - stds[d].ln() - 0.5 * z * z;
        }
        Ok(lp)
    }

    pub fn sample(&self, obs: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let mean = self.mean(obs)?;
        let stds = self.stds();
        Ok(mean
            .iter()
            .zip(&stds)
            .map(|(&m, &s)| m + s * standard_normal(rng))
            .collect())
    }

    pub fn kl_at(&self, other: &GaussianPolicy, obs: &[f64]) -> Result<f64> {
        if other.action_dim != self.action_dim {
            return Err(Error::input("policies have different action dimensions"));
        }
        let mp = self.mean(obs)?;
        let mq = other.mean(obs)?;
        let sp = self.stds();
        let sq = other.stds();
        let mut kl = 0.0;
        for d in 0..self.action_dim {
            let var_ratio = (sp[d] * sp[d]) / (sq[d] * sq[d]);
            let mean_term = (mp[d] - mq[d]).powi(2) / (sq[d] * sq[d]);
            kl += 0.5 * (var_ratio + mean_term - 1.0) + (sq[d] / sp[d]).ln();
        }
        Ok(kl)
    }

    /// Pinsker bound `sqrt(KL/2)` capped at 1; an upper bound, not the
    /// exact total variation.
    pub fn tv_at(&self, other: &GaussianPolicy, obs: &[f64]) -> Result<f64> {
        Ok((self.kl_at(other, obs)? / 2.0).sqrt().min(1.0))
    }

    pub fn entropy_at(&self, _obs: &[f64]) -> Result<f64> {
        Ok(self.stds().iter().map(|s| 0.5 * (LN_2PI + 1.0) + s.ln()).sum())
    }

    /// Adds `coeff * d log pi(action|obs) / d params` to `grad`.
    /// Log-std coordinates get no gradient while their clamp is active.
    pub fn accumulate_logp_grad(&self, obs: &[f64], action: &[f64], coeff: f64, grad: &mut [f64]) -> Result<()> {
        self.check_action(action)?;
        let (net, log_stds) = self.split();
        let trace = crate::nn::forward_traced(&self.spec, &net, obs)?;
        let mean = trace.output();
        let stds = self.stds();
        let n = self.spec.param_count();
        let mut d_mean = vec![0.0; self.action_dim];
        for d in 0..self.action_dim {
            let var = stds[d] * stds[d];
            let diff = action[d] - mean[d];
            d_mean[d] = coeff * diff / var;
            if (log_stds[d].exp() - stds[d]).abs() < f64::EPSILON * stds[d] {
                grad[n + d] += coeff * (diff * diff / var - 1.0);
            }
        }
        crate::nn::accumulate_grad(&self.spec, &net, &trace, &d_mean, &mut grad[..n]);
        Ok(())
    }

    /// Adds `coeff * d KL(self || reference)(obs) / d params` to `grad`.
    pub fn accumulate_kl_grad(
        &self,
        reference: &GaussianPolicy,
        obs: &[f64],
        coeff: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        if reference.action_dim != self.action_dim {
            return Err(Error::input("policies have different action dimensions"));
        }
        let (net, log_stds) = self.split();
        let trace = crate::nn::forward_traced(&self.spec, &net, obs)?;
        let mp = trace.output();
        let mq = reference.mean(obs)?;
        let sp = self.stds();
        let sq = reference.stds();
        let n = self.spec.param_count();
        let mut d_mean = vec![0.0; self.action_dim];
        for d in 0..self.action_dim {
            d_mean[d] = coeff * (mp[d] - mq[d]) / (sq[d] * sq[d]);
            if (log_stds[d].exp() - sp[d]).abs() < f64::EPSILON * sp[d] {
                grad[n + d] += coeff * ((sp[d] * sp[d]) / (sq[d] * sq[d]) - 1.0);
            }
        }
        crate::nn::accumulate_grad(&self.spec, &net, &trace, &d_mean, &mut grad[..n]);
        Ok(())
    }
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; u is bounded away from zero so ln stays finite.
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let v: f64 = rng.gen::<f64>();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}
