//! The advantage-tilted target policy and its expectation identity.

use crate::error::{Error, Result};
use crate::policy::ProbTable;

/// `pi*` together with the per-state normalizers.
#[derive(Clone, Debug)]
pub struct ClosedForm {
    pub policy: ProbTable,
    pub z: Vec<f64>,
    pub log_z: Vec<f64>,
}

/// `pi*(a|s) = pi_old(a|s) exp(A(s,a)/lambda) / Z(s)`, computed in
/// log space so extreme `A/lambda` ratios stay finite.
pub fn awac_closed_form(policy_old: &ProbTable, advantages: &[f64], lambda: f64) -> Result<ClosedForm> {
    let (ns, na) = (policy_old.n_states, policy_old.n_actions);
    if advantages.len() != ns * na {
        return Err(Error::input("advantage table has the wrong size"));
    }
    if !(lambda > 0.0) {
        return Err(Error::input("lambda must be positive"));
    }
    if advantages.iter().any(|a| !a.is_finite()) {
        return Err(Error::numeric("advantages must be finite"));
    }
    let mut rows = Vec::with_capacity(ns * na);
    let mut z = Vec::with_capacity(ns);
    let mut log_z = Vec::with_capacity(ns);
    for s in 0..ns {
        let old = policy_old.row(s);
        let scores: Vec<f64> = (0..na)
            .map(|a| old[a].ln() + advantages[s * na + a] / lambda)
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::numeric(format!("state {s} has an empty action support")));
        }
        let lse = max + scores.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        rows.extend(scores.iter().map(|x| (x - lse).exp()));
        log_z.push(lse);
        z.push(lse.exp());
    }
    Ok(ClosedForm { policy: ProbTable::new(ns, na, rows)?, z, log_z })
}

/// Per-state residuals of
/// `E_{pi*}[A] - lambda KL(pi*||pi_old) - lambda ln Z`.
#[derive(Clone, Debug)]
pub struct IdentityReport {
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    /// The expected advantage side, per state.
    pub lhs: Vec<f64>,
}

pub fn awac_identity_check(
    policy_old: &ProbTable,
    advantages: &[f64],
    lambda: f64,
) -> Result<IdentityReport> {
    let tilted = awac_closed_form(policy_old, advantages, lambda)?;
    let (ns, na) = (policy_old.n_states, policy_old.n_actions);
    let mut residuals = Vec::with_capacity(ns);
    let mut lhs_all = Vec::with_capacity(ns);
    for s in 0..ns {
        let row = tilted.policy.row(s);
        let lhs: f64 = (0..na).map(|a| row[a] * advantages[s * na + a]).sum();
        let rhs = lambda * tilted.policy.kl_row(policy_old, s) + lambda * tilted.log_z[s];
        residuals.push((lhs - rhs).abs());
        lhs_all.push(lhs);
    }
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    Ok(IdentityReport { residuals, max_residual, lhs: lhs_all })
}
