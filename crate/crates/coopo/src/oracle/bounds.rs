//! Per-cycle improvement bound, occupancy ratios and the geometric
//! envelope over optimality gaps.

use super::dp::exact_eval;
use crate::envs::TabularMdp;
use crate::error::Result;
use crate::policy::ProbTable;

/// Numerical slack when asserting the improvement bound.
pub const BOUND_SLACK: f64 = 1e-9;

/// One cycle's bound instance: the realized return change on the left
/// against the KL-tilt gain minus the penalty terms on the right.
#[derive(Clone, Debug)]
pub struct BoundReport {
    pub j_before: f64,
    pub j_after: f64,
    /// `j_after - j_before`.
    pub lhs: f64,
    /// `lambda/(1-gamma) * g_off - penalty`.
    pub rhs: f64,
    /// Occupancy-weighted KL of the tilted policy to the cycle start.
    pub g_off: f64,
    /// Max advantage-estimation error fed to the check; zero when the
    /// tilt used exact advantages.
    pub eps_adv: f64,
    /// `max_{s,a} |A|` under the cycle-start policy.
    pub eps_k: f64,
    /// `max_s TV(tilted, start)`.
    pub zeta: f64,
    /// `max_s TV(final, tilted)`.
    pub alpha: f64,
    pub satisfied: bool,
}

/// Checks `J(pi_next) - J(pi_k) >= lambda/(1-gamma) * G - Lambda` for
/// one cycle, where `G` is the occupancy-weighted KL of the tilted
/// policy to the start policy and `Lambda` collects the advantage
/// estimation error, the offline shift penalty `2 gamma eps zeta /
/// (1-gamma)^2` and the online shift penalty `4 gamma eps alpha^2 /
/// (1-gamma)^2`.
///
/// `advantage_estimate` is the advantage table the offline update
/// actually used; passing `None` means the tilt was exact.
pub fn improvement_bound_check(
    mdp: &TabularMdp,
    pi_start: &ProbTable,
    pi_tilted: &ProbTable,
    pi_final: &ProbTable,
    lambda: f64,
    advantage_estimate: Option<&[f64]>,
) -> Result<BoundReport> {
    let eval_start = exact_eval(mdp, pi_start)?;
    let eval_final = exact_eval(mdp, pi_final)?;

    let g_off = pi_tilted.weighted_kl(pi_start, &eval_start.d_pi);
    let eps_k = eval_start.max_abs_adv();
    let zeta = pi_tilted.max_tv(pi_start);
    let alpha = pi_final.max_tv(pi_tilted);
    let eps_adv = match advantage_estimate {
        None => 0.0,
        Some(est) => est
            .iter()
            .zip(&eval_start.adv)
            .map(|(e, a)| (e - a).abs())
            .fold(0.0, f64::max),
    };

    let gamma = mdp.gamma;
    let one_minus = 1.0 - gamma;
    let penalty = eps_adv / one_minus
        + 2.0 * gamma * eps_k * zeta / (one_minus * one_minus)
        + 4.0 * gamma * eps_k * alpha * alpha / (one_minus * one_minus);
    let lhs = eval_final.j - eval_start.j;
    let rhs = lambda / one_minus * g_off - penalty;

    Ok(BoundReport {
        j_before: eval_start.j,
        j_after: eval_final.j,
        lhs,
        rhs,
        g_off,
        eps_adv,
        eps_k,
        zeta,
        alpha,
        satisfied: lhs >= rhs - BOUND_SLACK,
    })
}

/// Ratio of on-policy occupancy to dataset state coverage.
#[derive(Clone, Debug)]
pub struct Concentrability {
    pub value: f64,
    /// Some visited state has zero dataset mass; `value` is infinite.
    pub unbounded: bool,
    pub worst_state: Option<usize>,
}

pub fn concentrability(d_pi: &[f64], rho_beta: &[f64]) -> Concentrability {
    let mut value: f64 = 0.0;
    let mut worst = None;
    let mut unbounded = false;
    for (s, (&d, &rho)) in d_pi.iter().zip(rho_beta).enumerate() {
        if d == 0.0 {
            continue;
        }
        if rho == 0.0 {
            return Concentrability { value: f64::INFINITY, unbounded: true, worst_state: Some(s) };
        }
        let ratio = d / rho;
        if ratio > value {
            value = ratio;
            worst = Some(s);
        }
    }
    if d_pi.is_empty() {
        unbounded = false;
    }
    Concentrability { value, unbounded, worst_state: worst }
}

/// Smallest geometric envelope over a gap sequence.
#[derive(Clone, Debug)]
pub struct ContractionFit {
    /// `None` when every gap already sits at the floor.
    pub rho_hat: Option<f64>,
    pub b_hat: f64,
    /// `delta_k <= rho^k delta_0 + b` for all k with the fitted pair.
    pub envelope_ok: bool,
    /// Gaps never grow while above the floor.
    pub monotone_outside_floor: bool,
}

/// Fits the floor as the final gap and the rate as the largest
/// per-cycle ratio `((delta_k - b)/delta_0)^(1/k)` among gaps still
/// above the floor.
pub fn contraction_fit(deltas: &[f64]) -> ContractionFit {
    assert!(!deltas.is_empty());
    let d0 = deltas[0];
    let b_hat = deltas.last().copied().unwrap().max(0.0);
    let tol = 1e-12 * d0.abs().max(1.0);

    let mut rho_hat: Option<f64> = None;
    if d0 > tol {
        for (k, &d) in deltas.iter().enumerate().skip(1) {
            let excess = d - b_hat;
            if excess > tol {
                let rho = (excess / d0).powf(1.0 / k as f64);
                rho_hat = Some(rho_hat.map_or(rho, |r: f64| r.max(rho)));
            }
        }
    }

    let envelope_ok = deltas.iter().enumerate().all(|(k, &d)| {
        let env = rho_hat.map_or(0.0, |r| r.powi(k as i32) * d0) + b_hat;
        d <= env + tol
    });
    let monotone_outside_floor = deltas
        .windows(2)
        .all(|w| w[0] <= b_hat + tol || w[1] <= w[0] + tol);

    ContractionFit { rho_hat, b_hat, envelope_ok, monotone_outside_floor }
}
