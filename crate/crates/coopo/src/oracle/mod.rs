//! Exact evaluation and certification on tabular MDPs.
//!
//! Everything here works on explicit probability tables and is exact
//! up to floating point, independent of the training stack:
//!
//! * [`exact_eval`]: finite-horizon dynamic programming for V, Q,
//!   advantages, the discounted state occupancy and the return.
//! * [`awac_closed_form`]: the advantage-tilted target policy
//!   `pi*(a|s) = pi_old(a|s) exp(A(s,a)/lambda) / Z(s)` that the
//!   offline actor update chases, with its per-state identity
//!   `E_{pi*}[A] = lambda KL(pi*||pi_old) + lambda ln Z`.
//! * [`improvement_bound_check`]: the per-cycle performance
//!   difference bound relating the offline KL tilt and the online
//!   step sizes to the realized return change.
//! * [`contraction_fit`]: the smallest geometric envelope
//!   `delta_k <= rho^k delta_0 + b` over a run's optimality gaps.
//! * [`run_exact_cycles`]: a cycle driver that replaces both learned
//!   phases with their idealized counterparts (exact tilt, total
//!   variation capped improvement step) so the bound can be certified
//!   instance by instance.

mod bounds;
mod closed_form;
mod dp;
mod harness;

pub use bounds::{concentrability, contraction_fit, improvement_bound_check, BoundReport, Concentrability, ContractionFit, BOUND_SLACK};
pub use closed_form::{awac_closed_form, awac_identity_check, ClosedForm, IdentityReport};
pub use dp::{exact_eval, optimal_actions, optimal_return, ExactEval};
pub use harness::{greedy_mix_step, random_mdp, random_policy, run_exact_cycles, ExactCycleOutcome};
