//! Online phase: collect rollouts with the current policy, compute
//! reward-to-go and baseline-subtracted advantages, then run clipped
//! ratio ascent on the actor and reward-to-go regression on the value
//! net. The action-value critic from the offline phase takes no part
//! here, which is what keeps it frozen across the phase.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Transition;
use crate::envs::{Action, Env, Observation};
use crate::error::{Error, Result};
use crate::nn::{AdamState, ParameterVector};
use crate::policy::PolicyModel;
use crate::value::VModel;

/// Ratios with |logp_new - logp_old| above this are dropped from the
/// surrogate instead of producing inf/NaN.
pub const RATIO_OVERFLOW: f64 = 20.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineConfig {
    /// Number of collect-update iterations per phase.
    pub episodes: usize,
    /// Trajectories gathered per iteration.
    pub episodes_per_collect: usize,
    pub batch: usize,
    /// Ratio clip half-width.
    pub clip: f64,
    /// Minibatch passes over each collected buffer.
    pub epochs_per_update: usize,
    /// `None` means use the environment's own discount.
    pub gamma: Option<f64>,
    pub lr: f64,
    /// `None` resolves to on for continuous tasks, off for tabular.
    pub adv_normalize: Option<bool>,
    /// `None` is plain reward-to-go minus baseline.
    pub gae_lambda: Option<f64>,
    /// Cap on cumulative env steps, enforced at episode granularity.
    pub total_step_budget: Option<u64>,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            episodes: 5,
            episodes_per_collect: 5,
            batch: 64,
            clip: 0.2,
            epochs_per_update: 5,
            gamma: None,
            lr: 3e-4,
            adv_normalize: None,
            gae_lambda: None,
            total_step_budget: None,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::input("online.episodes must be at least 1"));
        }
        if self.episodes_per_collect == 0 {
            return Err(Error::input("online.episodes_per_collect must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::input("online.batch must be at least 1"));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::input("online.clip must lie in (0, 1)"));
        }
        if self.epochs_per_update == 0 {
            return Err(Error::input("online.epochs_per_update must be at least 1"));
        }
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::input("online.gamma must lie in [0, 1)"));
            }
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::input("online.lr must be positive"));
        }
        if let Some(l) = self.gae_lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::input("online.gae_lambda must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// One environment step with the quantities frozen at collection
/// time. `logp_old` and `v_old` are never recomputed later.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub s: Observation,
    pub a: Action,
    pub r: f64,
    pub logp_old: f64,
    pub v_old: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    pub trajectories: Vec<Vec<StepRecord>>,
    /// Final observation of each trajectory, kept so rollouts can be
    /// turned back into full transitions.
    pub terminal_obs: Vec<Observation>,
    /// Flattened reward-to-go, trajectory-major, filled by
    /// [`compute_returns`].
    pub rtg: Vec<f64>,
    /// Flattened advantages, same order, filled by
    /// [`compute_advantages`].
    pub adv: Vec<f64>,
}

impl RolloutBuffer {
    pub fn n_steps(&self) -> usize {
        self.trajectories.iter().map(Vec::len).sum()
    }

    pub fn flat_steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.trajectories.iter().flatten()
    }

    /// Mean undiscounted episode return.
    pub fn mean_return(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        let total: f64 = self.flat_steps().map(|t| t.r).sum();
        total / self.trajectories.len() as f64
    }
}

/// Rolls `n_episodes` full episodes, caching log-probability and
/// baseline value at every step.
pub fn collect(
    env: &mut Env,
    pi: &PolicyModel,
    v: &VModel,
    n_episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutBuffer> {
    if n_episodes == 0 {
        return Err(Error::input("collect needs at least one episode"));
    }
    let mut buffer = RolloutBuffer::default();
    for episode in 0..n_episodes {
        let mut steps = Vec::with_capacity(env.horizon());
        let mut obs = env.reset();
        loop {
            let a = pi.sample(&obs, rng)?;
            let logp_old = pi.log_prob(&obs, &a)?;
            let v_old = v.value(&obs)?;
            let out = env
                .step(&a)
                .map_err(|e| Error::numeric(format!("episode {episode}: {e}")))?;
            steps.push(StepRecord { s: obs, a, r: out.reward, logp_old, v_old });
            obs = out.next_state;
            if out.done {
                break;
            }
        }
        buffer.trajectories.push(steps);
        buffer.terminal_obs.push(obs);
    }
    Ok(buffer)
}

/// Rebuilds full transitions from a collected buffer. The successor of
/// each step is the next step's observation, or the stored terminal
/// observation for the last step, which is also the only one flagged
/// done (episodes always run to the horizon).
pub fn buffer_transitions(buffer: &RolloutBuffer) -> Vec<Transition> {
    let mut out = Vec::with_capacity(buffer.n_steps());
    for (traj, terminal) in buffer.trajectories.iter().zip(&buffer.terminal_obs) {
        for (h, step) in traj.iter().enumerate() {
            let (s2, done) = match traj.get(h + 1) {
                Some(next) => (next.s.clone(), false),
                None => (terminal.clone(), true),
            };
            out.push(Transition {
                s: step.s.clone(),
                a: step.a.clone(),
                r: step.r,
                s2,
                done,
            });
        }
    }
    out
}

/// Discounted suffix sums via the backward recurrence
/// `R_h = r_h + gamma * R_{h+1}`.
pub fn reward_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (slot, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *slot = acc;
    }
    out
}

pub fn compute_returns(buffer: &mut RolloutBuffer, gamma: f64) {
    buffer.rtg.clear();
    for traj in &buffer.trajectories {
        let rewards: Vec<f64> = traj.iter().map(|t| t.r).collect();
        buffer.rtg.extend(reward_to_go(&rewards, gamma));
    }
}

/// Advantage estimates against the collection-time baseline:
/// `A_h = R_h - v_old(s_h)`, or the lambda-weighted TD-residual sum
/// when `gae_lambda` is set. Optionally standardized to mean 0 and
/// unit variance (std floor 1e-8).
pub fn compute_advantages(
    buffer: &mut RolloutBuffer,
    gamma: f64,
    gae_lambda: Option<f64>,
    normalize: bool,
) -> Result<()> {
    let n = buffer.n_steps();
    if buffer.rtg.len() != n || n == 0 {
        return Err(Error::input("reward-to-go must be computed before advantages"));
    }
    buffer.adv.clear();
    match gae_lambda {
        None => {
            let values: Vec<f64> = buffer.flat_steps().map(|t| t.v_old).collect();
            buffer.adv = buffer.rtg.iter().zip(values).map(|(r, v)| r - v).collect();
        }
        Some(lam) => {
            let mut adv = Vec::with_capacity(n);
            for traj in &buffer.trajectories {
                let start = adv.len();
                adv.resize(start + traj.len(), 0.0);
                let mut acc = 0.0;
                for (h, t) in traj.iter().enumerate().rev() {
                    // Episodes end at the horizon, so the value past
                    // the last step is zero.
                    let next_v = traj.get(h + 1).map_or(0.0, |t2| t2.v_old);
                    let delta = t.r + gamma * next_v - t.v_old;
                    acc = delta + gamma * lam * acc;
                    adv[start + h] = acc;
                }
            }
            buffer.adv = adv;
        }
    }
    if normalize {
        let mean = buffer.adv.iter().sum::<f64>() / n as f64;
        let var = buffer.adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt().max(1e-8);
        for a in &mut buffer.adv {
            *a = (*a - mean) / std;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PpoBatchStats {
    /// Mean per-sample clipped objective over the included samples.
    pub objective: f64,
    /// Fraction of included samples with |ratio - 1| > clip.
    pub fraction_clipped: f64,
    pub included: usize,
    /// Samples dropped for ratio overflow.
    pub excluded: usize,
}

/// Negated clipped surrogate
/// `-(1/n) sum_i min(c_i A_i, clamp(c_i, 1-clip, 1+clip) A_i)` with
/// its policy gradient, `n` counting only included samples. Samples
/// whose log-ratio magnitude exceeds [`RATIO_OVERFLOW`] are excluded
/// and counted.
pub fn ppo_loss(
    pi: &PolicyModel,
    samples: &[&StepRecord],
    advantages: &[f64],
    clip: f64,
) -> Result<(f64, ParameterVector, PpoBatchStats)> {
    if samples.is_empty() || samples.len() != advantages.len() {
        return Err(Error::input("samples and advantages must be non-empty and equal-length"));
    }
    if !(clip > 0.0 && clip < 1.0) {
        return Err(Error::input("clip must lie in (0, 1)"));
    }
    let mut stats = PpoBatchStats::default();
    let mut objective_sum = 0.0;
    // Per-sample d objective / d logp_new; the 1/n factor needs the
    // included count, so gradients accumulate in a second pass.
    let mut coeffs: Vec<Option<f64>> = Vec::with_capacity(samples.len());
    for (t, &adv) in samples.iter().zip(advantages) {
        let d = pi.log_prob(&t.s, &t.a)? - t.logp_old;
        if d.abs() > RATIO_OVERFLOW {
            stats.excluded += 1;
            coeffs.push(None);
            continue;
        }
        let c = d.exp();
        let unclipped = c * adv;
        let clipped = c.clamp(1.0 - clip, 1.0 + clip) * adv;
        objective_sum += unclipped.min(clipped);
        if (c - 1.0).abs() > clip {
            stats.fraction_clipped += 1.0;
        }
        stats.included += 1;
        // The clamp saturating on the active branch kills the
        // gradient; ties go to the unclipped branch.
        coeffs.push(if unclipped <= clipped { Some(c * adv) } else { Some(0.0) });
    }
    let mut grad = vec![0.0; pi.params().len()];
    if stats.included > 0 {
        let inv_n = 1.0 / stats.included as f64;
        stats.objective = objective_sum * inv_n;
        stats.fraction_clipped *= inv_n;
        for (t, coeff) in samples.iter().zip(&coeffs) {
            if let Some(k) = coeff {
                if *k != 0.0 {
                    pi.accumulate_logp_grad(&t.s, &t.a, -k * inv_n, &mut grad)?;
                }
            }
        }
    }
    if !stats.objective.is_finite() {
        return Err(Error::numeric("clipped surrogate is not finite"));
    }
    Ok((-stats.objective, ParameterVector::from_vec(grad), stats))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PpoUpdateReport {
    /// Mean pre-step minibatch objective across the whole update.
    pub objective: f64,
    pub fraction_clipped: f64,
    pub excluded: usize,
    /// Minibatches where every sample overflowed, so no step ran.
    pub skipped_minibatches: usize,
}

/// Minibatch ascent on the clipped surrogate: `epochs` shuffled
/// passes over the buffer in chunks of `batch`.
pub fn ppo_actor_update(
    buffer: &RolloutBuffer,
    pi: &mut PolicyModel,
    clip: f64,
    epochs: usize,
    batch: usize,
    opt: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<PpoUpdateReport> {
    let steps: Vec<&StepRecord> = buffer.flat_steps().collect();
    if steps.is_empty() || buffer.adv.len() != steps.len() {
        return Err(Error::input("advantages must be computed before the actor update"));
    }
    if epochs == 0 || batch == 0 {
        return Err(Error::input("epochs and batch must be at least 1"));
    }
    let mut report = PpoUpdateReport::default();
    let mut minibatches = 0usize;
    let mut indices: Vec<usize> = (0..steps.len()).collect();
    for _ in 0..epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(batch) {
            let mb: Vec<&StepRecord> = chunk.iter().map(|&i| steps[i]).collect();
            let adv: Vec<f64> = chunk.iter().map(|&i| buffer.adv[i]).collect();
            let (_, grad, stats) = ppo_loss(pi, &mb, &adv, clip)?;
            report.excluded += stats.excluded;
            if stats.included == 0 {
                report.skipped_minibatches += 1;
                continue;
            }
            report.objective += stats.objective;
            report.fraction_clipped += stats.fraction_clipped;
            minibatches += 1;
            opt.step(pi.params_mut(), &grad)?;
        }
    }
    if minibatches > 0 {
        report.objective /= minibatches as f64;
        report.fraction_clipped /= minibatches as f64;
    }
    Ok(report)
}

/// Minibatch MSE regression of the baseline toward reward-to-go.
/// Returns the mean pre-step loss.
pub fn value_update(
    buffer: &RolloutBuffer,
    v: &mut VModel,
    epochs: usize,
    batch: usize,
    opt: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let steps: Vec<&StepRecord> = buffer.flat_steps().collect();
    if steps.is_empty() || buffer.rtg.len() != steps.len() {
        return Err(Error::input("reward-to-go must be computed before the value update"));
    }
    let mut loss_sum = 0.0;
    let mut minibatches = 0usize;
    let mut indices: Vec<usize> = (0..steps.len()).collect();
    for _ in 0..epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(batch) {
            let states: Vec<&Observation> = chunk.iter().map(|&i| &steps[i].s).collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| buffer.rtg[i]).collect();
            let (loss, grad) = v.mse_loss_grad(&states, &targets)?;
            if !loss.is_finite() {
                return Err(Error::numeric("value loss is not finite"));
            }
            opt.step(&mut v.params, &grad)?;
            loss_sum += loss;
            minibatches += 1;
        }
    }
    Ok(loss_sum / minibatches as f64)
}

/// The actor and baseline the online phase trains. The action-value
/// critic is deliberately absent.
#[derive(Clone)]
pub struct OnlineState {
    pub pi: PolicyModel,
    pub v: VModel,
}

#[derive(Clone, Debug, Serialize)]
pub struct OnlineIterMetrics {
    pub iter: usize,
    pub mean_return: f64,
    pub policy_objective: f64,
    pub v_loss: f64,
    pub fraction_clipped: f64,
    pub excluded_samples: usize,
    /// Mean divergences from the pre-update policy over the buffer's
    /// states.
    pub kl_to_prev: f64,
    pub tv_to_prev: f64,
    /// Stats of the advantages as fed to the update (after any
    /// normalization).
    pub adv_mean: f64,
    pub adv_absmax: f64,
    pub env_steps: usize,
    pub trajectories: usize,
}

/// Runs `cfg.episodes` iterations of collect, reward-to-go,
/// advantages, clipped actor update, value regression. Stops early if
/// `cfg.total_step_budget` would be exceeded, at episode granularity
/// (environments have fixed episode length, the horizon). Also returns
/// everything it collected as transitions, for callers that feed
/// rollouts back into a replay set.
pub fn run_online(
    env: &mut Env,
    mut state: OnlineState,
    cfg: &OnlineConfig,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(OnlineState, Vec<OnlineIterMetrics>, Vec<Transition>)> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::input("gamma must lie in [0, 1)"));
    }
    let normalize = cfg.adv_normalize.unwrap_or(!env.is_tabular());
    let mut pi_opt = AdamState::new(state.pi.params().len(), cfg.lr);
    let mut v_opt = AdamState::new(state.v.params.len(), cfg.lr);

    let horizon = env.horizon() as u64;
    let mut steps_used: u64 = 0;
    let mut history = Vec::with_capacity(cfg.episodes);
    let mut collected = Vec::new();
    for iter in 0..cfg.episodes {
        let mut n_eps = cfg.episodes_per_collect;
        if let Some(budget) = cfg.total_step_budget {
            let remaining = budget.saturating_sub(steps_used);
            if remaining == 0 {
                break;
            }
            n_eps = n_eps.min(remaining.div_ceil(horizon) as usize);
        }

        let mut buffer = collect(env, &state.pi, &state.v, n_eps, rng)?;
        collected.extend(buffer_transitions(&buffer));
        compute_returns(&mut buffer, gamma);
        compute_advantages(&mut buffer, gamma, cfg.gae_lambda, normalize)?;
        let adv_mean = buffer.adv.iter().sum::<f64>() / buffer.adv.len() as f64;
        let adv_absmax = buffer.adv.iter().fold(0.0f64, |m, a| m.max(a.abs()));

        let prev_pi = state.pi.clone();
        let actor = ppo_actor_update(
            &buffer,
            &mut state.pi,
            cfg.clip,
            cfg.epochs_per_update,
            cfg.batch,
            &mut pi_opt,
            rng,
        )?;
        let v_loss = value_update(
            &buffer,
            &mut state.v,
            cfg.epochs_per_update,
            cfg.batch,
            &mut v_opt,
            rng,
        )?;

        let (mut kl, mut tv) = (0.0, 0.0);
        for t in buffer.flat_steps() {
            kl += state.pi.kl_at(&prev_pi, &t.s)?;
            tv += state.pi.tv_at(&prev_pi, &t.s)?;
        }
        let n = buffer.n_steps();
        steps_used += n as u64;
        history.push(OnlineIterMetrics {
            iter,
            mean_return: buffer.mean_return(),
            policy_objective: actor.objective,
            v_loss,
            fraction_clipped: actor.fraction_clipped,
            excluded_samples: actor.excluded,
            kl_to_prev: kl / n as f64,
            tv_to_prev: tv / n as f64,
            adv_mean,
            adv_absmax,
            env_steps: n,
            trajectories: buffer.trajectories.len(),
        });
    }
    Ok((state, history, collected))
}
