//! The cyclic orchestrator: K rounds of offline training on a fixed
//! dataset followed by online fine-tuning, with exact parameter
//! handoffs between the phases.
//!
//! Carryover at a cycle boundary: the action-value critic comes from
//! the end of the offline phase (the online phase never sees it), the
//! baseline and the policy come from the end of the online phase.
//! With one cycle this is plain offline-to-online training; the same
//! code path serves as that baseline.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::envs::{make_benchmark, Env, Observation};
use crate::error::{Error, Result};
use crate::metrics::{MetricRow, Phase, RowSink};
use crate::nn::{save_params, Activation, MlpSpec};
use crate::offline::{run_offline, OfflineConfig, OfflineState};
use crate::online::{run_online, OnlineConfig, OnlineState};
use crate::policy::{CategoricalPolicy, GaussianPolicy, PolicyModel};
use crate::rng::{derive_seed, fnv1a, phase_rng, seeded_rng};
use crate::value::{QModel, VModel};

/// Discount used for continuous tasks when the config does not set
/// one. Tabular tasks carry their own.
pub const DEFAULT_CONTINUOUS_GAMMA: f64 = 0.99;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden_layers: 2, hidden_units: 64, activation: Activation::Tanh }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers > 0 && self.hidden_units == 0 {
            return Err(Error::input("model.hidden_units must be positive with hidden layers"));
        }
        Ok(())
    }
}

/// Everything one training run needs. Built from the config file by
/// the config module; tests construct it directly.
#[derive(Clone, Debug)]
pub struct CoopoConfig {
    pub cycles: usize,
    pub env: String,
    pub dataset: PathBuf,
    pub seed: u64,
    pub eval_episodes: usize,
    /// Halt when eval return stops improving (window 10 cycles,
    /// relative improvement below 1e-3). Off by default.
    pub early_stop: bool,
    pub run_id: String,
    /// Record real elapsed milliseconds. Off keeps metrics bitwise
    /// reproducible.
    pub wall_clock: bool,
    /// Experimental: feed each cycle's online rollouts back into the
    /// offline dataset. The per-cycle dataset checksum then drifts by
    /// design.
    pub append_online_rollouts: bool,
    pub offline: OfflineConfig,
    pub online: OnlineConfig,
    pub model: ModelConfig,
}

impl CoopoConfig {
    pub fn desk(env: &str, dataset: impl Into<PathBuf>, seed: u64) -> Self {
        CoopoConfig {
            cycles: 2,
            env: env.to_string(),
            dataset: dataset.into(),
            seed,
            eval_episodes: 20,
            early_stop: false,
            run_id: format!("{env}_s{seed}"),
            wall_clock: false,
            append_online_rollouts: false,
            offline: OfflineConfig::default(),
            online: OnlineConfig::default(),
            model: ModelConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::input("cycles must be at least 1"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::input("eval_episodes must be at least 1"));
        }
        self.offline.validate()?;
        self.online.validate()?;
        self.model.validate()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CycleReport {
    pub k: usize,
    pub j_before: f64,
    pub j_mid: f64,
    pub j_after: f64,
    pub mean_kl_offline: f64,
    pub env_steps_this_cycle: u64,
    pub trajectories_this_cycle: u64,
    pub wall_ms: u64,
    /// FNV-1a over the parameter bit patterns at cycle end.
    pub pi_checksum: u64,
    pub q_checksum: u64,
    pub v_checksum: u64,
    /// Recomputed from the in-memory dataset every cycle. Constant
    /// across a run unless rollout appending is on, so an unexpected
    /// drift means corruption.
    pub dataset_checksum: u64,
}

pub struct RunOutcome {
    pub reports: Vec<CycleReport>,
    pub pi: PolicyModel,
    pub q: QModel,
    pub v: VModel,
    pub env_steps: u64,
    pub trajectories: u64,
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf29ce484222325)
    }

    fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }
}

pub fn params_checksum(params: &[f64]) -> u64 {
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for v in params {
        bytes.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fnv1a(&bytes)
}

fn hash_obs(h: &mut Fnv, obs: &Observation) {
    match obs {
        Observation::Discrete(s) => {
            h.update(&[0]);
            h.update(&(*s as u64).to_le_bytes());
        }
        Observation::Continuous(v) => {
            h.update(&[1]);
            for x in v {
                h.update(&x.to_bits().to_le_bytes());
            }
        }
    }
}

pub fn dataset_checksum(dataset: &Dataset) -> u64 {
    let mut h = Fnv::new();
    for t in dataset.transitions() {
        hash_obs(&mut h, &t.s);
        match &t.a {
            crate::envs::Action::Discrete(a) => {
                h.update(&[0]);
                h.update(&(*a as u64).to_le_bytes());
            }
            crate::envs::Action::Continuous(v) => {
                h.update(&[1]);
                for x in v {
                    h.update(&x.to_bits().to_le_bytes());
                }
            }
        }
        h.update(&t.r.to_bits().to_le_bytes());
        hash_obs(&mut h, &t.s2);
        h.update(&[t.done as u8]);
    }
    h.0
}

/// The environment's own discount: the MDP's for tabular tasks,
/// [`DEFAULT_CONTINUOUS_GAMMA`] otherwise.
pub fn env_gamma(env: &Env) -> f64 {
    env.tabular().map_or(DEFAULT_CONTINUOUS_GAMMA, |m| m.gamma)
}

/// Fresh policy, action-value and state-value models sized for the
/// environment.
pub fn init_models(
    env: &Env,
    model: &ModelConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(PolicyModel, QModel, VModel)> {
    let (l, u, act) = (model.hidden_layers, model.hidden_units, model.activation);
    match env.tabular() {
        Some(mdp) => {
            let (s, a) = (mdp.n_states, mdp.n_actions);
            let pi_spec = MlpSpec::new(s, l, u, a, act)?;
            let pi = PolicyModel::Categorical(CategoricalPolicy::with_init(pi_spec, rng)?);
            let q = QModel::tabular(s, a, l, u, act, rng)?;
            let v = VModel::tabular(s, l, u, act, rng)?;
            Ok((pi, q, v))
        }
        None => {
            let (s_dim, a_dim) = (4, 2);
            let pi_spec = MlpSpec::new(s_dim, l, u, a_dim, act)?;
            let pi = PolicyModel::Gaussian(GaussianPolicy::with_init(pi_spec, rng)?);
            let q = QModel::continuous(s_dim, a_dim, l, u, act, rng)?;
            let v = VModel::continuous(s_dim, l, u, act, rng)?;
            Ok((pi, q, v))
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EvalReport {
    /// Mean discounted return of the stochastic policy.
    pub mean_return: f64,
    /// Sample standard deviation of per-episode discounted returns.
    pub std_return: f64,
    pub undiscounted: f64,
    /// Same rollouts with the policy's mode (mean action for the
    /// Gaussian family).
    pub mode_return: f64,
    pub mode_undiscounted: f64,
    pub episodes: usize,
}

fn rollout_returns(
    env: &mut Env,
    pi: &PolicyModel,
    gamma: f64,
    n_episodes: usize,
    stochastic: bool,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(Vec<f64>, f64)> {
    let mut discounted = Vec::with_capacity(n_episodes);
    let mut undiscounted = 0.0;
    for _ in 0..n_episodes {
        let mut obs = env.reset();
        let (mut j, mut raw, mut w) = (0.0, 0.0, 1.0);
        loop {
            let a = if stochastic { pi.sample(&obs, rng)? } else { pi.mode(&obs)? };
            let out = env.step(&a)?;
            j += w * out.reward;
            raw += out.reward;
            w *= gamma;
            obs = out.next_state;
            if out.done {
                break;
            }
        }
        discounted.push(j);
        undiscounted += raw;
    }
    Ok((discounted, undiscounted / n_episodes as f64))
}

/// Monte-Carlo policy evaluation on dedicated seed streams, disjoint
/// from training. Runs the stochastic policy and its mode variant on
/// identically seeded environments.
pub fn evaluate(
    env: &mut Env,
    pi: &PolicyModel,
    gamma: f64,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_episodes == 0 {
        return Err(Error::input("evaluation needs at least one episode"));
    }
    env.seed(derive_seed(seed, "eval-env", &[]));
    let mut rng = seeded_rng(derive_seed(seed, "eval-act", &[]));
    let (returns, undiscounted) = rollout_returns(env, pi, gamma, n_episodes, true, &mut rng)?;

    env.seed(derive_seed(seed, "eval-env", &[1]));
    let (mode_returns, mode_undiscounted) =
        rollout_returns(env, pi, gamma, n_episodes, false, &mut rng)?;

    let n = n_episodes as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = if n_episodes > 1 {
        returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(EvalReport {
        mean_return: mean,
        std_return: var.sqrt(),
        undiscounted,
        mode_return: mode_returns.iter().sum::<f64>() / n,
        mode_undiscounted,
        episodes: n_episodes,
    })
}

fn with_cycle(k: usize, e: Error) -> Error {
    match e {
        Error::Input(m) => Error::Input(format!("cycle {k}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("cycle {k}: {m}")),
        Error::Schema(m) => Error::Schema(format!("cycle {k}: {m}")),
        other => other,
    }
}

struct ReportWriter {
    out: Option<BufWriter<File>>,
}

impl ReportWriter {
    fn create(out_dir: Option<&Path>) -> Result<Self> {
        let out = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                Some(BufWriter::new(File::create(dir.join("reports.jsonl"))?))
            }
            None => None,
        };
        Ok(ReportWriter { out })
    }

    fn append(&mut self, report: &CycleReport) -> Result<()> {
        if let Some(w) = &mut self.out {
            let line = serde_json::to_string(report)
                .map_err(|e| Error::schema(format!("report serialization: {e}")))?;
            writeln!(w, "{line}")?;
            w.flush()?;
        }
        Ok(())
    }
}

fn save_checkpoints(
    out_dir: Option<&Path>,
    k: usize,
    pi: &PolicyModel,
    q: Option<&QModel>,
    v: &VModel,
) -> Result<()> {
    let Some(dir) = out_dir else { return Ok(()) };
    let cycle_dir = dir.join(format!("cycle_{k}"));
    std::fs::create_dir_all(&cycle_dir)?;
    save_params(&cycle_dir.join("pi.ckpt"), pi.spec(), pi.params())?;
    if let Some(q) = q {
        save_params(&cycle_dir.join("q.ckpt"), &q.spec, &q.params)?;
    }
    save_params(&cycle_dir.join("v.ckpt"), &v.spec, &v.params)
}

struct RowCtx<'a> {
    sink: &'a mut dyn RowSink,
    run_id: String,
    env_steps: u64,
    trajectories: u64,
    wall_clock: bool,
    started: Instant,
}

impl RowCtx<'_> {
    fn wall_ms(&self) -> u64 {
        if self.wall_clock {
            self.started.elapsed().as_millis() as u64
        } else {
            0
        }
    }

    fn blank(&self, cycle: usize, phase: Phase, step: usize) -> MetricRow {
        MetricRow {
            run_id: self.run_id.clone(),
            cycle,
            phase,
            step,
            mean_return: f64::NAN,
            policy_loss: f64::NAN,
            q_loss: f64::NAN,
            v_loss: f64::NAN,
            kl_to_prev: f64::NAN,
            tv_to_prev: f64::NAN,
            adv_mean: f64::NAN,
            adv_absmax: f64::NAN,
            env_steps_cum: self.env_steps,
            traj_cum: self.trajectories,
            wall_ms: self.wall_ms(),
        }
    }

    fn eval_row(&mut self, cycle: usize, step: usize, eval: &EvalReport) -> Result<()> {
        let mut row = self.blank(cycle, Phase::Eval, step);
        row.mean_return = eval.mean_return;
        self.sink.row(row)
    }
}

/// Runs the full cyclic schedule. `out_dir`, when given, receives
/// `cycle_<k>/{pi,q,v}.ckpt` checkpoints and an append-only
/// `reports.jsonl`; rows stream into `sink` as they are produced.
/// A sub-phase failure aborts with the cycle index in the message,
/// after all completed cycles' reports have been flushed.
pub fn run_coopo(
    cfg: &CoopoConfig,
    out_dir: Option<&Path>,
    sink: &mut dyn RowSink,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut env = make_benchmark(&cfg.env)?;
    let mut dataset = Dataset::load(&cfg.dataset)?;
    if dataset.meta.env != cfg.env {
        return Err(Error::input(format!(
            "dataset was generated on {:?}, run targets {:?}",
            dataset.meta.env, cfg.env
        )));
    }

    let gamma_eval = env_gamma(&env);
    let gamma_off = cfg.offline.gamma.unwrap_or(gamma_eval);
    let gamma_on = cfg.online.gamma.unwrap_or(gamma_eval);

    let (mut pi, mut q, mut v) = init_models(&env, &cfg.model, &mut phase_rng(cfg.seed, 0, "init"))?;
    let mut reports = ReportWriter::create(out_dir)?;
    let mut ctx = RowCtx {
        sink,
        run_id: cfg.run_id.clone(),
        env_steps: 0,
        trajectories: 0,
        wall_clock: cfg.wall_clock,
        started: Instant::now(),
    };

    let mut outcome_reports = Vec::with_capacity(cfg.cycles);
    for k in 0..cfg.cycles {
        let cycle_started = Instant::now();

        let j_before = evaluate(&mut env, &pi, gamma_eval, cfg.eval_episodes, derive_seed(cfg.seed, "eval", &[k as u64, 0]))
            .map_err(|e| with_cycle(k, e))?;
        ctx.eval_row(k, 0, &j_before)?;

        let mut off_rng = phase_rng(cfg.seed, k, "offline");
        let (off_state, off_hist) =
            run_offline(&dataset, OfflineState { q, v, pi }, &cfg.offline, gamma_off, &mut off_rng)
                .map_err(|e| with_cycle(k, e))?;
        for m in &off_hist {
            let mut row = ctx.blank(k, Phase::Offline, m.epoch);
            row.policy_loss = -m.actor_objective;
            row.q_loss = m.q_loss;
            row.v_loss = m.v_loss;
            row.kl_to_prev = m.mean_kl;
            row.adv_mean = m.adv_mean;
            row.adv_absmax = m.adv_absmax;
            ctx.sink.row(row)?;
        }
        let mean_kl_offline =
            off_hist.iter().map(|m| m.mean_kl).sum::<f64>() / off_hist.len() as f64;

        let j_mid = evaluate(&mut env, &off_state.pi, gamma_eval, cfg.eval_episodes, derive_seed(cfg.seed, "eval", &[k as u64, 1]))
            .map_err(|e| with_cycle(k, e))?;
        ctx.eval_row(k, 1, &j_mid)?;

        // The action-value critic sits out the online phase entirely.
        let q_off = off_state.q;

        let mut online_cfg = cfg.online.clone();
        if let Some(budget) = cfg.online.total_step_budget {
            online_cfg.total_step_budget = Some(budget.saturating_sub(ctx.env_steps));
        }
        let mut on_rng = phase_rng(cfg.seed, k, "online");
        let (on_state, on_hist, rollouts) = run_online(
            &mut env,
            OnlineState { pi: off_state.pi, v: off_state.v },
            &online_cfg,
            gamma_on,
            &mut on_rng,
        )
        .map_err(|e| with_cycle(k, e))?;
        if cfg.append_online_rollouts {
            dataset.extend(rollouts).map_err(|e| with_cycle(k, e))?;
        }

        let mut steps_this_cycle = 0u64;
        let mut traj_this_cycle = 0u64;
        for m in &on_hist {
            ctx.env_steps += m.env_steps as u64;
            ctx.trajectories += m.trajectories as u64;
            steps_this_cycle += m.env_steps as u64;
            traj_this_cycle += m.trajectories as u64;
            let mut row = ctx.blank(k, Phase::Online, m.iter);
            row.mean_return = m.mean_return;
            row.policy_loss = -m.policy_objective;
            row.v_loss = m.v_loss;
            row.kl_to_prev = m.kl_to_prev;
            row.tv_to_prev = m.tv_to_prev;
            row.adv_mean = m.adv_mean;
            row.adv_absmax = m.adv_absmax;
            ctx.sink.row(row)?;
        }

        let j_after = evaluate(&mut env, &on_state.pi, gamma_eval, cfg.eval_episodes, derive_seed(cfg.seed, "eval", &[k as u64, 2]))
            .map_err(|e| with_cycle(k, e))?;
        ctx.eval_row(k, 2, &j_after)?;

        // Cycle-boundary handoff: critic from the offline phase,
        // policy and baseline from the online phase.
        q = q_off;
        v = on_state.v;
        pi = on_state.pi;

        let report = CycleReport {
            k,
            j_before: j_before.mean_return,
            j_mid: j_mid.mean_return,
            j_after: j_after.mean_return,
            mean_kl_offline,
            env_steps_this_cycle: steps_this_cycle,
            trajectories_this_cycle: traj_this_cycle,
            wall_ms: if cfg.wall_clock { cycle_started.elapsed().as_millis() as u64 } else { 0 },
            pi_checksum: params_checksum(pi.params()),
            q_checksum: params_checksum(&q.params),
            v_checksum: params_checksum(&v.params),
            dataset_checksum: dataset_checksum(&dataset),
        };
        reports.append(&report)?;
        save_checkpoints(out_dir, k, &pi, Some(&q), &v)?;
        outcome_reports.push(report);

        if cfg.early_stop && outcome_reports.len() > 10 {
            let window = &outcome_reports[outcome_reports.len() - 11..];
            let before = window[0].j_after;
            let now = window[10].j_after;
            if now - before < 1e-3 * before.abs().max(1.0) {
                break;
            }
        }
    }

    Ok(RunOutcome {
        reports: outcome_reports,
        pi,
        q,
        v,
        env_steps: ctx.env_steps,
        trajectories: ctx.trajectories,
    })
}

/// Pure online baseline: the same segment structure, evaluation
/// cadence, accounting and seeding as the cyclic run, with random
/// initialization and no offline phases. The dataset in `cfg` is
/// ignored.
pub fn run_ppo_baseline(
    cfg: &CoopoConfig,
    out_dir: Option<&Path>,
    sink: &mut dyn RowSink,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut env = make_benchmark(&cfg.env)?;
    let gamma_eval = env_gamma(&env);
    let gamma_on = cfg.online.gamma.unwrap_or(gamma_eval);

    let (mut pi, q, mut v) = init_models(&env, &cfg.model, &mut phase_rng(cfg.seed, 0, "init"))?;
    let mut reports = ReportWriter::create(out_dir)?;
    let mut ctx = RowCtx {
        sink,
        run_id: cfg.run_id.clone(),
        env_steps: 0,
        trajectories: 0,
        wall_clock: cfg.wall_clock,
        started: Instant::now(),
    };

    let mut outcome_reports = Vec::with_capacity(cfg.cycles);
    for k in 0..cfg.cycles {
        let cycle_started = Instant::now();
        let j_before = evaluate(&mut env, &pi, gamma_eval, cfg.eval_episodes, derive_seed(cfg.seed, "eval", &[k as u64, 0]))
            .map_err(|e| with_cycle(k, e))?;
        ctx.eval_row(k, 0, &j_before)?;

        let mut online_cfg = cfg.online.clone();
        if let Some(budget) = cfg.online.total_step_budget {
            online_cfg.total_step_budget = Some(budget.saturating_sub(ctx.env_steps));
        }
        let mut on_rng = phase_rng(cfg.seed, k, "online");
        let (on_state, on_hist, _) =
            run_online(&mut env, OnlineState { pi, v }, &online_cfg, gamma_on, &mut on_rng)
                .map_err(|e| with_cycle(k, e))?;

        let mut steps_this_cycle = 0u64;
        let mut traj_this_cycle = 0u64;
        for m in &on_hist {
            ctx.env_steps += m.env_steps as u64;
            ctx.trajectories += m.trajectories as u64;
            steps_this_cycle += m.env_steps as u64;
            traj_this_cycle += m.trajectories as u64;
            let mut row = ctx.blank(k, Phase::Online, m.iter);
            row.mean_return = m.mean_return;
            row.policy_loss = -m.policy_objective;
            row.v_loss = m.v_loss;
            row.kl_to_prev = m.kl_to_prev;
            row.tv_to_prev = m.tv_to_prev;
            row.adv_mean = m.adv_mean;
            row.adv_absmax = m.adv_absmax;
            ctx.sink.row(row)?;
        }

        let j_after = evaluate(&mut env, &on_state.pi, gamma_eval, cfg.eval_episodes, derive_seed(cfg.seed, "eval", &[k as u64, 2]))
            .map_err(|e| with_cycle(k, e))?;
        ctx.eval_row(k, 2, &j_after)?;

        pi = on_state.pi;
        v = on_state.v;
        let report = CycleReport {
            k,
            j_before: j_before.mean_return,
            j_mid: j_before.mean_return,
            j_after: j_after.mean_return,
            mean_kl_offline: 0.0,
            env_steps_this_cycle: steps_this_cycle,
            trajectories_this_cycle: traj_this_cycle,
            wall_ms: if cfg.wall_clock { cycle_started.elapsed().as_millis() as u64 } else { 0 },
            pi_checksum: params_checksum(pi.params()),
            q_checksum: params_checksum(&q.params),
            v_checksum: params_checksum(&v.params),
            dataset_checksum: 0,
        };
        reports.append(&report)?;
        save_checkpoints(out_dir, k, &pi, None, &v)?;
        outcome_reports.push(report);
    }

    Ok(RunOutcome {
        reports: outcome_reports,
        pi,
        q,
        v,
        env_steps: ctx.env_steps,
        trajectories: ctx.trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, BehaviorDescriptor, Tier};
    use crate::envs::TabularEnv;
    use crate::envs::TabularMdp;
    use crate::metrics::{MemorySink, MetricWriter, NullSink};
    use crate::oracle::exact_eval;
    use crate::policy::ProbTable;

    fn chain_dataset(dir: &Path, n: usize, seed: u64) -> PathBuf {
        let mut env = make_benchmark("chain5").unwrap();
        let behavior = BehaviorDescriptor::tabular_tier(Tier::Medium);
        let dataset = generate(&mut env, &behavior, n, seed).unwrap();
        let path = dir.join("chain5.jsonl");
        dataset.save(&path).unwrap();
        path
    }

    fn small_cfg(dataset: PathBuf) -> CoopoConfig {
        let mut cfg = CoopoConfig::desk("chain5", dataset, 42);
        cfg.cycles = 2;
        cfg.eval_episodes = 4;
        cfg.offline = OfflineConfig { epochs: 3, batch: 128, lr: 0.01, ..Default::default() };
        cfg.online = OnlineConfig {
            episodes: 2,
            episodes_per_collect: 1,
            batch: 128,
            lr: 0.01,
            ..Default::default()
        };
        cfg.model = ModelConfig { hidden_layers: 0, hidden_units: 0, ..Default::default() };
        cfg
    }

    #[test]
    fn zero_reward_env_evaluates_to_zero() {
        let mdp = TabularMdp::new(
            1,
            2,
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![1.0],
            0.9,
            10,
        )
        .unwrap();
        let mut env = Env::Tabular(TabularEnv::new("zero", mdp));
        let pi = PolicyModel::Categorical(CategoricalPolicy::tabular_uniform(1, 2).unwrap());
        let r = evaluate(&mut env, &pi, 0.9, 5, 3).unwrap();
        assert_eq!(r.mean_return, 0.0);
        assert_eq!(r.undiscounted, 0.0);
        assert_eq!(r.mode_return, 0.0);
    }

    #[test]
    fn monte_carlo_matches_dynamic_programming() {
        let mut env = make_benchmark("chain5").unwrap();
        let mdp = env.tabular().unwrap().clone();
        let exact = exact_eval(&mdp, &ProbTable::uniform(5, 2)).unwrap();
        let pi = PolicyModel::Categorical(CategoricalPolicy::tabular_uniform(5, 2).unwrap());
        let n = 300;
        let r = evaluate(&mut env, &pi, mdp.gamma, n, 7).unwrap();
        let tol = 3.0 * r.std_return / (n as f64).sqrt();
        assert!(
            (r.mean_return - exact.j).abs() <= tol,
            "mc {} vs dp {} (tol {tol})",
            r.mean_return,
            exact.j
        );
    }

    #[test]
    fn critic_handoff_is_bitwise_the_offline_output() {
        let dir = tempfile::tempdir().unwrap();
        let dataset_path = chain_dataset(dir.path(), 2000, 5);
        let mut cfg = small_cfg(dataset_path.clone());
        cfg.cycles = 1;
        let outcome = run_coopo(&cfg, None, &mut NullSink).unwrap();

        // Replay the offline phase alone with the same streams; the
        // critic must come out identical because the online phase
        // cannot touch it.
        let env = make_benchmark("chain5").unwrap();
        let (pi0, q0, v0) = init_models(&env, &cfg.model, &mut phase_rng(cfg.seed, 0, "init")).unwrap();
        let dataset = Dataset::load(&dataset_path).unwrap();
        let mut off_rng = phase_rng(cfg.seed, 0, "offline");
        let (off_state, _) = run_offline(
            &dataset,
            OfflineState { q: q0, v: v0, pi: pi0 },
            &cfg.offline,
            env_gamma(&env),
            &mut off_rng,
        )
        .unwrap();

        assert_eq!(outcome.q.params.to_vec(), off_state.q.params.to_vec());
        assert_eq!(outcome.reports[0].q_checksum, params_checksum(&off_state.q.params));
        // The policy kept training online, so it must differ.
        assert_ne!(outcome.pi.params().to_vec(), off_state.pi.params().to_vec());
    }

    #[test]
    fn counters_advance_only_during_online_rows() {
        let dir = tempfile::tempdir().unwrap();
        let dataset_path = chain_dataset(dir.path(), 1500, 6);
        let cfg = small_cfg(dataset_path);
        let mut sink = MemorySink::default();
        let outcome = run_coopo(&cfg, None, &mut sink).unwrap();

        let horizon = 350;
        let per_cycle = 2 * horizon;
        assert_eq!(outcome.env_steps, 2 * per_cycle);
        assert_eq!(outcome.trajectories, 4);
        for r in &outcome.reports {
            assert_eq!(r.env_steps_this_cycle, per_cycle);
        }
        // The sink's guard enforced the offline/eval freeze row by
        // row; spot-check the totals too.
        let last = sink.rows.last().unwrap();
        assert_eq!(last.env_steps_cum, outcome.env_steps);
        assert_eq!(last.traj_cum, outcome.trajectories);
        assert!(sink.rows.iter().any(|r| r.phase == Phase::Offline));
        assert!(sink.rows.iter().filter(|r| r.phase == Phase::Eval).count() == 6);
    }

    #[test]
    fn dataset_checksum_is_constant_across_cycles() {
        let dir = tempfile::tempdir().unwrap();
        let dataset_path = chain_dataset(dir.path(), 1000, 8);
        let cfg = small_cfg(dataset_path);
        let outcome = run_coopo(&cfg, None, &mut NullSink).unwrap();
        let sums: Vec<u64> = outcome.reports.iter().map(|r| r.dataset_checksum).collect();
        assert_eq!(sums.len(), 2);
        assert_eq!(sums[0], sums[1]);
        assert_ne!(sums[0], 0);
    }

    #[test]
    fn appended_rollouts_shift_the_dataset_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let dataset_path = chain_dataset(dir.path(), 1000, 8);
        let mut cfg = small_cfg(dataset_path);
        cfg.append_online_rollouts = true;
        let outcome = run_coopo(&cfg, None, &mut NullSink).unwrap();
        let sums: Vec<u64> = outcome.reports.iter().map(|r| r.dataset_checksum).collect();
        assert_eq!(sums.len(), 2);
        assert_ne!(sums[0], sums[1]);
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let dir = tempfile::tempdir().unwrap();
        let dataset_path = chain_dataset(dir.path(), 1200, 9);
        let cfg = small_cfg(dataset_path);

        let mut texts = Vec::new();
        for run in 0..2 {
            let path = dir.path().join(format!("m{run}.csv"));
            let mut writer = MetricWriter::create(&path).unwrap();
            let outcome = run_coopo(&cfg, None, &mut writer).unwrap();
            drop(writer);
            let mut text = std::fs::read_to_string(&path).unwrap();
            text.push_str(&serde_json::to_string(&outcome.reports).unwrap());
            texts.push(text);
        }
        assert_eq!(texts[0], texts[1]);
    }

    #[test]
    fn checkpoints_and_reports_land_in_the_layout() {
        let dir = tempfile::tempdir().unwrap();
        let dataset_path = chain_dataset(dir.path(), 1000, 10);
        let mut cfg = small_cfg(dataset_path);
        cfg.cycles = 1;
        let out = dir.path().join("out");
        let outcome = run_coopo(&cfg, Some(&out), &mut NullSink).unwrap();

        for name in ["pi.ckpt", "q.ckpt", "v.ckpt"] {
            assert!(out.join("cycle_0").join(name).exists(), "{name} missing");
        }
        let text = std::fs::read_to_string(out.join("reports.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 1);

        let (spec, params) = crate::nn::load_params(&out.join("cycle_0/pi.ckpt")).unwrap();
        assert_eq!(&spec, outcome.pi.spec());
        assert_eq!(params.to_vec(), outcome.pi.params().to_vec());
    }

    #[test]
    fn ppo_baseline_needs_no_dataset_and_reports_no_offline() {
        let cfg = {
            let mut c = CoopoConfig::desk("chain5", "/nonexistent/nowhere.jsonl", 3);
            c.cycles = 2;
            c.eval_episodes = 3;
            c.online = OnlineConfig {
                episodes: 2,
                episodes_per_collect: 1,
                batch: 128,
                lr: 0.01,
                ..Default::default()
            };
            c.model = ModelConfig { hidden_layers: 0, hidden_units: 0, ..Default::default() };
            c
        };
        let mut sink = MemorySink::default();
        let a = run_ppo_baseline(&cfg, None, &mut sink).unwrap();
        let b = run_ppo_baseline(&cfg, None, &mut NullSink).unwrap();

        assert_eq!(a.reports.len(), 2);
        for r in &a.reports {
            assert_eq!(r.j_before, r.j_mid);
            assert_eq!(r.mean_kl_offline, 0.0);
        }
        assert!(sink.rows.iter().all(|r| r.phase != Phase::Offline));
        // Same seed, same trajectory accounting, same results.
        assert_eq!(a.env_steps, b.env_steps);
        let pa: Vec<u64> = a.reports.iter().map(|r| r.pi_checksum).collect();
        let pb: Vec<u64> = b.reports.iter().map(|r| r.pi_checksum).collect();
        assert_eq!(pa, pb);
    }

    #[test]
    fn step_budget_caps_the_whole_run() {
        let dir = tempfile::tempdir().unwrap();
        let dataset_path = chain_dataset(dir.path(), 1000, 11);
        let mut cfg = small_cfg(dataset_path);
        cfg.cycles = 3;
        cfg.online.episodes = 5;
        cfg.online.total_step_budget = Some(700);
        let outcome = run_coopo(&cfg, None, &mut NullSink).unwrap();
        assert_eq!(outcome.env_steps, 700);
        assert_eq!(outcome.reports.len(), 3);
        // Later cycles still run their offline phase but collect
        // nothing once the budget is spent.
        assert_eq!(outcome.reports[2].env_steps_this_cycle, 0);
    }

    #[test]
    fn mismatched_dataset_env_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut env = make_benchmark("bandit2").unwrap();
        let behavior = BehaviorDescriptor::tabular_tier(Tier::Random);
        let dataset = generate(&mut env, &behavior, 100, 1).unwrap();
        let path = dir.path().join("bandit.jsonl");
        dataset.save(&path).unwrap();

        let cfg = small_cfg(path);
        let err = match run_coopo(&cfg, None, &mut NullSink) {
            Err(e) => e,
            Ok(_) => panic!("mismatched dataset env was accepted"),
        };
        assert!(err.to_string().contains("bandit2"), "{err}");
    }
}
