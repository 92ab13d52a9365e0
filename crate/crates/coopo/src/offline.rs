//! Offline phase: TD-target regression for Q and V, advantage
//! estimates, and the advantage-weighted actor update anchored by a
//! KL penalty to the epoch-start policy.
//!
//! One epoch is `ceil(|D| / batch)` minibatches. Within an epoch the
//! TD targets come from snapshots of Q and the policy taken at the
//! epoch start, so targets never chase the networks they train.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Transition};
use crate::envs::Observation;
use crate::error::{Error, Result};
use crate::nn::{AdamState, ParameterVector};
use crate::policy::PolicyModel;
use crate::value::{QModel, VModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineConfig {
    pub epochs: usize,
    pub batch: usize,
    /// Advantage temperature and KL penalty coefficient.
    pub lambda: f64,
    /// Cap on the advantage weight `exp(A / lambda)`.
    pub weight_clip: f64,
    /// `None` means use the environment's own discount.
    pub gamma: Option<f64>,
    pub lr: f64,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        OfflineConfig {
            epochs: 100,
            batch: 512,
            lambda: 0.05,
            weight_clip: 20.0,
            gamma: None,
            lr: 3e-4,
        }
    }
}

impl OfflineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::input("offline.epochs must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::input("offline.batch must be at least 1"));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::input("offline.lambda must be positive"));
        }
        if !(self.weight_clip >= 1.0) {
            return Err(Error::input("offline.weight_clip must be at least 1"));
        }
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::input("offline.gamma must lie in [0, 1)"));
            }
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::input("offline.lr must be positive"));
        }
        Ok(())
    }
}

/// Everything the offline phase trains.
#[derive(Clone)]
pub struct OfflineState {
    pub q: QModel,
    pub v: VModel,
    pub pi: PolicyModel,
}

#[derive(Clone, Debug, Serialize)]
pub struct OfflineEpochMetrics {
    pub epoch: usize,
    pub q_loss: f64,
    pub v_loss: f64,
    /// Weighted log-likelihood minus the KL penalty, before the step.
    pub actor_objective: f64,
    /// Mean KL of the updated policy to the epoch-start reference over
    /// the last minibatch's states.
    pub mean_kl: f64,
    /// Fraction of samples whose advantage weight hit the cap.
    pub weight_clip_frac: f64,
    /// Minibatches skipped because every weight underflowed to zero.
    pub skipped_steps: usize,
    pub adv_mean: f64,
    pub adv_absmax: f64,
}

/// TD targets `y = r + gamma * E_{a'}[Q(s', a')]`, with `y = r` on
/// terminal transitions. The expectation is exact for tabular critics
/// and a single sampled action otherwise.
pub fn td_target(
    batch: &[&Transition],
    q: &QModel,
    pi: &PolicyModel,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::input("td_target needs a non-empty batch"));
    }
    batch
        .iter()
        .map(|t| {
            if t.done || gamma == 0.0 {
                Ok(t.r)
            } else {
                Ok(t.r + gamma * q.expected_under(pi, &t.s2, rng)?)
            }
        })
        .collect()
}

/// One Adam step of Q toward the targets; returns the pre-step loss.
pub fn update_q(
    batch: &[&Transition],
    targets: &[f64],
    q: &mut QModel,
    opt: &mut AdamState,
) -> Result<f64> {
    let pairs: Vec<_> = batch.iter().map(|t| (&t.s, &t.a)).collect();
    let (loss, grad) = q.mse_loss_grad(&pairs, targets)?;
    if !loss.is_finite() {
        return Err(Error::numeric("Q loss is not finite"));
    }
    opt.step(&mut q.params, &grad)?;
    Ok(loss)
}

/// One Adam step of V toward the same targets.
pub fn update_v(
    batch: &[&Transition],
    targets: &[f64],
    v: &mut VModel,
    opt: &mut AdamState,
) -> Result<f64> {
    let states: Vec<_> = batch.iter().map(|t| &t.s).collect();
    let (loss, grad) = v.mse_loss_grad(&states, targets)?;
    if !loss.is_finite() {
        return Err(Error::numeric("V loss is not finite"));
    }
    opt.step(&mut v.params, &grad)?;
    Ok(loss)
}

pub fn advantage_hat(
    q: &QModel,
    v: &VModel,
    s: &Observation,
    a: &crate::envs::Action,
) -> Result<f64> {
    Ok(q.value(s, a)? - v.value(s)?)
}

/// Loss of the anchored weighted-likelihood objective:
/// `-(1/B) sum_i w_i log pi(a_i|s_i) + kl_coeff * (1/B) sum_i
/// KL(pi || reference)(s_i)`, with its gradient in the policy
/// parameters. Ascent on the objective is descent on this.
pub fn awac_loss(
    pi: &PolicyModel,
    reference: &PolicyModel,
    batch: &[&Transition],
    weights: &[f64],
    kl_coeff: f64,
) -> Result<(f64, ParameterVector)> {
    if batch.is_empty() || batch.len() != weights.len() {
        return Err(Error::input("batch and weights must be non-empty and equal-length"));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pi.params().len()];
    for (t, &w) in batch.iter().zip(weights) {
        loss -= w * pi.log_prob(&t.s, &t.a)? * inv_b;
        pi.accumulate_logp_grad(&t.s, &t.a, -w * inv_b, &mut grad)?;
        if kl_coeff != 0.0 {
            loss += kl_coeff * pi.kl_at(reference, &t.s)? * inv_b;
            pi.accumulate_kl_grad(reference, &t.s, kl_coeff * inv_b, &mut grad)?;
        }
    }
    if !loss.is_finite() {
        return Err(Error::numeric("actor loss is not finite"));
    }
    Ok((loss, ParameterVector::from_vec(grad)))
}

#[derive(Clone, Debug)]
pub struct ActorStepReport {
    pub objective: f64,
    pub mean_kl: f64,
    pub weight_clip_frac: f64,
    /// True when every weight underflowed to zero and no step ran.
    pub skipped: bool,
}

/// One ascent step on the advantage-weighted likelihood with a KL
/// anchor. `temperature` scales the advantages inside the exponential
/// weight; `kl_coeff` scales the anchor (the algorithm uses the same
/// lambda for both, tests may split them).
#[allow(clippy::too_many_arguments)]
pub fn actor_update(
    pi: &mut PolicyModel,
    reference: &PolicyModel,
    batch: &[&Transition],
    advantages: &[f64],
    temperature: f64,
    kl_coeff: f64,
    weight_clip: f64,
    opt: &mut AdamState,
) -> Result<ActorStepReport> {
    if !(temperature > 0.0) {
        return Err(Error::input("temperature must be positive"));
    }
    if batch.len() != advantages.len() {
        return Err(Error::input("batch and advantages must be equal-length"));
    }
    let mut clipped = 0usize;
    let weights: Vec<f64> = advantages
        .iter()
        .map(|&a| {
            let w = (a / temperature).exp();
            if w > weight_clip {
                clipped += 1;
                weight_clip
            } else {
                w
            }
        })
        .collect();
    let weight_clip_frac = clipped as f64 / batch.len() as f64;

    if weights.iter().all(|&w| w == 0.0) {
        let mean_kl = mean_kl_to(pi, reference, batch)?;
        return Ok(ActorStepReport { objective: 0.0, mean_kl, weight_clip_frac, skipped: true });
    }

    let (loss, grad) = awac_loss(pi, reference, batch, &weights, kl_coeff)?;
    opt.step(pi.params_mut(), &grad)?;
    let mean_kl = mean_kl_to(pi, reference, batch)?;
    Ok(ActorStepReport { objective: -loss, mean_kl, weight_clip_frac, skipped: false })
}

fn mean_kl_to(pi: &PolicyModel, reference: &PolicyModel, batch: &[&Transition]) -> Result<f64> {
    let mut acc = 0.0;
    for t in batch {
        acc += pi.kl_at(reference, &t.s)?;
    }
    Ok(acc / batch.len() as f64)
}

/// Runs the whole offline phase: `epochs` passes, each sampling
/// `ceil(|D| / batch)` minibatches and applying the Q, V and actor
/// steps in order. Optimizer state is fresh for each phase.
pub fn run_offline(
    dataset: &Dataset,
    mut state: OfflineState,
    cfg: &OfflineConfig,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(OfflineState, Vec<OfflineEpochMetrics>)> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::input("gamma must lie in [0, 1)"));
    }

    let mut q_opt = AdamState::new(state.q.params.len(), cfg.lr);
    let mut v_opt = AdamState::new(state.v.params.len(), cfg.lr);
    let mut pi_opt = AdamState::new(state.pi.params().len(), cfg.lr);
    let steps_per_epoch = dataset.len().div_ceil(cfg.batch);

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let reference = state.pi.clone();
        let q_frozen = state.q.clone();

        let (mut q_sum, mut v_sum, mut obj_sum, mut clip_sum) = (0.0, 0.0, 0.0, 0.0);
        let mut skipped_steps = 0usize;
        let mut last_kl = 0.0;
        let (mut adv_sum, mut adv_absmax, mut adv_count) = (0.0, 0.0f64, 0usize);
        for _ in 0..steps_per_epoch {
            let batch = dataset.sample_batch(cfg.batch, rng)?;
            let targets = td_target(&batch, &q_frozen, &reference, gamma, rng)?;
            q_sum += update_q(&batch, &targets, &mut state.q, &mut q_opt)?;
            v_sum += update_v(&batch, &targets, &mut state.v, &mut v_opt)?;

            let advantages: Vec<f64> = batch
                .iter()
                .map(|t| advantage_hat(&state.q, &state.v, &t.s, &t.a))
                .collect::<Result<_>>()?;
            adv_sum += advantages.iter().sum::<f64>();
            adv_absmax = advantages.iter().fold(adv_absmax, |m, a| m.max(a.abs()));
            adv_count += advantages.len();
            let report = actor_update(
                &mut state.pi,
                &reference,
                &batch,
                &advantages,
                cfg.lambda,
                cfg.lambda,
                cfg.weight_clip,
                &mut pi_opt,
            )?;
            obj_sum += report.objective;
            clip_sum += report.weight_clip_frac;
            last_kl = report.mean_kl;
            skipped_steps += report.skipped as usize;
        }

        let n = steps_per_epoch as f64;
        history.push(OfflineEpochMetrics {
            epoch,
            q_loss: q_sum / n,
            v_loss: v_sum / n,
            actor_objective: obj_sum / n,
            mean_kl: last_kl,
            weight_clip_frac: clip_sum / n,
            skipped_steps,
            adv_mean: adv_sum / adv_count as f64,
            adv_absmax,
        });
    }
    Ok((state, history))
}
