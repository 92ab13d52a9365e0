//! Exact-arithmetic cycle driver used to certify the improvement
//! bound and the contraction envelope on small random MDPs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::bounds::{contraction_fit, improvement_bound_check, BoundReport, ContractionFit};
use super::closed_form::awac_closed_form;
use super::dp::{exact_eval, optimal_return};
use crate::envs::TabularMdp;
use crate::error::Result;
use crate::policy::ProbTable;

/// Random dense MDP with Dirichlet(1) transition rows and uniform
/// rewards. The horizon is long enough that the finite-horizon
/// occupancy matches the discounted one to well below test tolerance.
pub fn random_mdp(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize) -> TabularMdp {
    let dirichlet_row = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        let draws: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
        let total: f64 = draws.iter().sum();
        draws.into_iter().map(|g| g / total).collect()
    };

    let mut p = Vec::with_capacity(n_states * n_actions * n_states);
    let mut r = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        for _ in 0..n_actions {
            p.extend(dirichlet_row(rng, n_states));
            r.push(rng.gen::<f64>());
        }
    }
    let d0 = dirichlet_row(rng, n_states);
    let gamma = 0.5 + 0.35 * rng.gen::<f64>();

    TabularMdp::new(n_states, n_actions, p, r, d0, gamma, 300).expect("generated rows are stochastic")
}

/// Random policy with Dirichlet(1) rows.
pub fn random_policy(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize) -> ProbTable {
    let mut rows = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        let draws: Vec<f64> = (0..n_actions).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
        let total: f64 = draws.iter().sum();
        rows.extend(draws.into_iter().map(|g| g / total));
    }
    ProbTable::new(n_states, n_actions, rows).expect("rows normalized")
}

/// Mixes `beta` of the greedy policy under `adv` into `pi`. The
/// per-state total variation to `pi` is at most `beta`, and the mix
/// never decreases the expected advantage at any state, so it stands
/// in for the online phase when everything is exact.
pub fn greedy_mix_step(pi: &ProbTable, adv: &[f64], beta: f64) -> ProbTable {
    assert!((0.0..=1.0).contains(&beta));
    let (n_states, n_actions) = (pi.n_states, pi.n_actions);
    assert_eq!(adv.len(), n_states * n_actions);
    let mut rows = Vec::with_capacity(n_states * n_actions);
    for s in 0..n_states {
        let row_adv = &adv[s * n_actions..(s + 1) * n_actions];
        let best = row_adv
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        for (a, &p) in pi.row(s).iter().enumerate() {
            let greedy = if a == best { 1.0 } else { 0.0 };
            rows.push((1.0 - beta) * p + beta * greedy);
        }
    }
    ProbTable::new(n_states, n_actions, rows).expect("convex mix of rows")
}

/// Everything `run_exact_cycles` measures.
#[derive(Clone, Debug)]
pub struct ExactCycleOutcome {
    pub bound_reports: Vec<BoundReport>,
    /// Optimality gaps `J* - J(pi_k)` including the initial policy.
    pub deltas: Vec<f64>,
    pub g_offs: Vec<f64>,
    /// `min_k G_k / delta_k` over cycles with a positive gap.
    pub kappa_hat: Option<f64>,
    pub fit: ContractionFit,
    pub j_star: f64,
}

/// Runs `cycles` exact cycles: tilt by the true advantages, then mix
/// in a `beta_cap`-sized greedy step, checking the improvement bound
/// at every cycle and fitting the gap envelope at the end.
pub fn run_exact_cycles(
    mdp: &TabularMdp,
    pi0: &ProbTable,
    lambda: f64,
    beta_cap: f64,
    cycles: usize,
) -> Result<ExactCycleOutcome> {
    let (j_star, _) = optimal_return(mdp);

    let mut pi = pi0.clone();
    let mut bound_reports = Vec::with_capacity(cycles);
    let mut deltas = Vec::with_capacity(cycles + 1);
    let mut g_offs = Vec::with_capacity(cycles);
    let mut kappa_hat: Option<f64> = None;

    let eval0 = exact_eval(mdp, &pi)?;
    deltas.push(j_star - eval0.j);

    for _ in 0..cycles {
        let eval_start = exact_eval(mdp, &pi)?;
        let tilt = awac_closed_form(&pi, &eval_start.adv, lambda)?;
        let eval_tilt = exact_eval(mdp, &tilt.policy)?;
        let pi_next = greedy_mix_step(&tilt.policy, &eval_tilt.adv, beta_cap);

        let report = improvement_bound_check(mdp, &pi, &tilt.policy, &pi_next, lambda, None)?;
        let delta_before = j_star - report.j_before;
        if delta_before > 1e-12 {
            let kappa = report.g_off / delta_before;
            kappa_hat = Some(kappa_hat.map_or(kappa, |k: f64| k.min(kappa)));
        }
        g_offs.push(report.g_off);
        deltas.push(j_star - report.j_after);
        bound_reports.push(report);
        pi = pi_next;
    }

    let fit = contraction_fit(&deltas);
    Ok(ExactCycleOutcome { bound_reports, deltas, g_offs, kappa_hat, fit, j_star })
}
