//! Finite-horizon dynamic programming.

use crate::envs::TabularMdp;
use crate::error::{Error, Result};
use crate::policy::ProbTable;

/// Exact policy evaluation at the start of an episode.
#[derive(Clone, Debug)]
pub struct ExactEval {
    /// State values over the full horizon.
    pub v: Vec<f64>,
    /// Action values, `[s][a]` flattened.
    pub q: Vec<f64>,
    /// `q - v`, flattened like `q`.
    pub adv: Vec<f64>,
    /// Discounted state occupancy over the episode, normalized to
    /// sum to one.
    pub d_pi: Vec<f64>,
    /// Expected discounted return from the start distribution.
    pub j: f64,
    /// Values one step into the episode; `q` satisfies
    /// `q = r + gamma P v_next` exactly.
    pub v_next: Vec<f64>,
}

impl ExactEval {
    pub fn adv_at(&self, n_actions: usize, s: usize, a: usize) -> f64 {
        self.adv[s * n_actions + a]
    }

    pub fn max_abs_adv(&self) -> f64 {
        self.adv.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}

fn check_policy(mdp: &TabularMdp, policy: &ProbTable) -> Result<()> {
    if policy.n_states != mdp.n_states || policy.n_actions != mdp.n_actions {
        return Err(Error::input(format!(
            "policy table is {}x{}, MDP needs {}x{}",
            policy.n_states, policy.n_actions, mdp.n_states, mdp.n_actions
        )));
    }
    Ok(())
}

pub fn exact_eval(mdp: &TabularMdp, policy: &ProbTable) -> Result<ExactEval> {
    check_policy(mdp, policy)?;
    let (ns, na, gamma, horizon) = (mdp.n_states, mdp.n_actions, mdp.gamma, mdp.horizon);

    // Backward pass: v_h for h = horizon down to 0.
    let mut v_ahead = vec![0.0; ns]; // v_{h+1}
    let mut v = vec![0.0; ns];
    let mut q = vec![0.0; ns * na];
    let mut v_next = vec![0.0; ns];
    for h in (0..horizon).rev() {
        for s in 0..ns {
            let mut vs = 0.0;
            for a in 0..na {
                let mut qa = mdp.reward(s, a);
                let row = mdp.p(s, a);
                for (sp, &pr) in row.iter().enumerate() {
                    qa += gamma * pr * v_ahead[sp];
                }
                q[s * na + a] = qa;
                vs += policy.row(s)[a] * qa;
            }
            v[s] = vs;
        }
        if h == 0 {
            v_next = v_ahead.clone();
        }
        std::mem::swap(&mut v, &mut v_ahead);
        // q now holds the h-level action values; after the final
        // iteration (h = 0) it is exactly q_0.
    }
    let v0 = v_ahead;

    let adv: Vec<f64> = (0..ns * na).map(|i| q[i] - v0[i / na]).collect();
    let j: f64 = mdp.d0.iter().zip(&v0).map(|(&d, &vs)| d * vs).sum();

    // Forward pass for the discounted occupancy over acting steps.
    let mut p_h = mdp.d0.clone();
    let mut d_pi = vec![0.0; ns];
    let mut scale = 1.0;
    let mut total = 0.0;
    for _ in 0..horizon {
        for s in 0..ns {
            d_pi[s] += scale * p_h[s];
        }
        total += scale;
        let mut p_next = vec![0.0; ns];
        for s in 0..ns {
            if p_h[s] == 0.0 {
                continue;
            }
            for a in 0..na {
                let w = p_h[s] * policy.row(s)[a];
                if w == 0.0 {
                    continue;
                }
                for (sp, &pr) in mdp.p(s, a).iter().enumerate() {
                    p_next[sp] += w * pr;
                }
            }
        }
        p_h = p_next;
        scale *= gamma;
    }
    for x in d_pi.iter_mut() {
        *x /= total;
    }

    Ok(ExactEval { v: v0, q, adv, d_pi, j, v_next })
}

/// Optimal return and state values under the same horizon.
pub fn optimal_return(mdp: &TabularMdp) -> (f64, Vec<f64>) {
    let (ns, na, gamma, horizon) = (mdp.n_states, mdp.n_actions, mdp.gamma, mdp.horizon);
    let mut v_ahead = vec![0.0; ns];
    let mut v = vec![0.0; ns];
    for _ in 0..horizon {
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let mut qa = mdp.reward(s, a);
                for (sp, &pr) in mdp.p(s, a).iter().enumerate() {
                    qa += gamma * pr * v_ahead[sp];
                }
                best = best.max(qa);
            }
            v[s] = best;
        }
        std::mem::swap(&mut v, &mut v_ahead);
    }
    let j = mdp.d0.iter().zip(&v_ahead).map(|(&d, &vs)| d * vs).sum();
    (j, v_ahead)
}

/// Greedy action per state via one-step lookahead on the optimal
/// values. Ties break toward the lower action index.
pub fn optimal_actions(mdp: &TabularMdp) -> Vec<usize> {
    let (_, v_star) = optimal_return(mdp);
    (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| {
                    let q: f64 = mdp.reward(s, a)
                        + mdp.gamma
                            * mdp.p(s, a).iter().zip(&v_star).map(|(&pr, &v)| pr * v).sum::<f64>();
                    (a, q)
                })
                .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap().then(y.0.cmp(&x.0)))
                .map(|(a, _)| a)
                .unwrap()
        })
        .collect()
}
