//! Softmax policies over discrete state and action spaces.

use super::{entropy_discrete, kl_discrete, tv_discrete, ProbTable};
use crate::envs::sample_index;
use crate::error::{Error, Result};
use crate::nn::{forward, init_params, MlpSpec, ParameterVector};
use rand::Rng;

/// Logits come from a network applied to the one-hot state. With zero
/// hidden layers the parameters are exactly a logits table plus a
/// shared per-action bias, which is the tabular parameterization used
/// throughout the exact experiments.
#[derive(Clone)]
pub struct CategoricalPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    pub spec: MlpSpec,
    pub params: ParameterVector,
}

impl CategoricalPolicy {
    pub fn new(spec: MlpSpec, params: ParameterVector) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::input("parameter vector does not match the policy spec"));
        }
        Ok(CategoricalPolicy { n_states: spec.input_dim, n_actions: spec.output_dim, spec, params })
    }

    pub fn with_init(spec: MlpSpec, rng: &mut impl Rng) -> Result<Self> {
        let params = init_params(&spec, rng);
        Self::new(spec, params)
    }

    /// Zero-logit table: uniform over actions in every state.
    pub fn tabular_uniform(n_states: usize, n_actions: usize) -> Result<Self> {
        let spec = MlpSpec::linear(n_states, n_actions)?;
        let params = ParameterVector::zeros(spec.param_count());
        Self::new(spec, params)
    }

    pub(crate) fn onehot(&self, s: usize) -> Result<Vec<f64>> {
        if s >= self.n_states {
            return Err(Error::input(format!("state {s} out of range, {} states", self.n_states)));
        }
        let mut x = vec![0.0; self.n_states];
        x[s] = 1.0;
        Ok(x)
    }

    pub fn logits(&self, s: usize) -> Result<Vec<f64>> {
        forward(&self.spec, &self.params, &self.onehot(s)?)
    }

    pub fn log_probs(&self, s: usize) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.logits(s)?))
    }

    pub fn probs(&self, s: usize) -> Result<Vec<f64>> {
        Ok(self.log_probs(s)?.iter().map(|lp| lp.exp()).collect())
    }

    pub fn log_prob(&self, s: usize, a: usize) -> Result<f64> {
        let lps = self.log_probs(s)?;
        lps.get(a)
            .copied()
            .ok_or_else(|| Error::input(format!("action {a} out of range, {} actions", self.n_actions)))
    }

    pub fn sample(&self, s: usize, rng: &mut impl Rng) -> Result<usize> {
        Ok(sample_index(&self.probs(s)?, rng))
    }

    pub fn kl_at(&self, other: &CategoricalPolicy, s: usize) -> Result<f64> {
        if other.n_actions != self.n_actions {
            return Err(Error::input("policies have different action counts"));
        }
        Ok(kl_discrete(&self.probs(s)?, &other.probs(s)?))
    }

    pub fn tv_at(&self, other: &CategoricalPolicy, s: usize) -> Result<f64> {
        if other.n_actions != self.n_actions {
            return Err(Error::input("policies have different action counts"));
        }
        Ok(tv_discrete(&self.probs(s)?, &other.probs(s)?))
    }

    pub fn entropy_at(&self, s: usize) -> Result<f64> {
        Ok(entropy_discrete(&self.probs(s)?))
    }

    pub fn prob_table(&self) -> Result<ProbTable> {
        let mut rows = Vec::with_capacity(self.n_states * self.n_actions);
        for s in 0..self.n_states {
            rows.extend(self.probs(s)?);
        }
        ProbTable::new(self.n_states, self.n_actions, rows)
    }

    /// Adds `coeff * d log pi(a|s) / d params` to `grad`.
    pub fn accumulate_logp_grad(&self, s: usize, a: usize, coeff: f64, grad: &mut [f64]) -> Result<()> {
        if a >= self.n_actions {
            return Err(Error::input(format!("action {a} out of range, {} actions", self.n_actions)));
        }
        let x = self.onehot(s)?;
        let trace = crate::nn::forward_traced(&self.spec, &self.params, &x)?;
        let probs: Vec<f64> = log_softmax(trace.output()).iter().map(|lp| lp.exp()).collect();
        // d log softmax_a / d logit_b = 1[a=b] - pi_b
        let mut d_logits: Vec<f64> = probs.iter().map(|&p| -coeff * p).collect();
        d_logits[a] += coeff;
        crate::nn::accumulate_grad(&self.spec, &self.params, &trace, &d_logits, grad);
        Ok(())
    }

    /// Adds `coeff * d KL(self || reference)(s) / d params` to `grad`.
    /// The reference is treated as a constant.
    pub fn accumulate_kl_grad(
        &self,
        reference: &CategoricalPolicy,
        s: usize,
        coeff: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        if reference.n_actions != self.n_actions {
            return Err(Error::input("policies have different action counts"));
        }
        let x = self.onehot(s)?;
        let trace = crate::nn::forward_traced(&self.spec, &self.params, &x)?;
        let lps = log_softmax(trace.output());
        let probs: Vec<f64> = lps.iter().map(|lp| lp.exp()).collect();
        let ref_lps = reference.log_probs(s)?;
        let kl: f64 = probs
            .iter()
            .zip(lps.iter().zip(&ref_lps))
            .map(|(&p, (&lp, &rq))| if p == 0.0 { 0.0 } else { p * (lp - rq) })
            .sum();
        // d KL / d logit_b = pi_b * (log pi_b - log ref_b - KL)
        let d_logits: Vec<f64> = probs
            .iter()
            .zip(lps.iter().zip(&ref_lps))
            .map(|(&p, (&lp, &rq))| coeff * p * (lp - rq - kl))
            .collect();
        crate::nn::accumulate_grad(&self.spec, &self.params, &trace, &d_logits, grad);
        Ok(())
    }
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_check, GradCheckOpts};
    use crate::rng::seeded_rng;

    #[test]
    fn uniform_policy_log_prob_is_log_half() {
        let p = CategoricalPolicy::tabular_uniform(3, 2).unwrap();
        assert!((p.log_prob(1, 0).unwrap() + 0.6931471805599453).abs() < 1e-15);
        assert!(p.log_prob(1, 5).is_err());
        assert!(p.log_prob(7, 0).is_err());
    }

    #[test]
    fn probs_normalize_even_for_extreme_logits() {
        let spec = MlpSpec::linear(1, 3).unwrap();
        let params = ParameterVector::from_vec(vec![700.0, -700.0, 0.0, 0.0, 0.0, 0.0]);
        let p = CategoricalPolicy::new(spec, params).unwrap();
        let probs = p.probs(0).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(probs.iter().all(|x| x.is_finite()));
        assert!(probs[0] > 0.999);
    }

    #[test]
    fn sampling_matches_probs() {
        let mut logits = vec![0.0; 4];
        logits[2] = 50.0;
        let spec = MlpSpec::linear(1, 4).unwrap();
        let mut raw = logits.clone();
        raw.extend([0.0; 4]);
        let p = CategoricalPolicy::new(spec, ParameterVector::from_vec(raw)).unwrap();
        let mut rng = seeded_rng(3);
        for _ in 0..100 {
            assert_eq!(p.sample(0, &mut rng).unwrap(), 2);
        }

        let u = CategoricalPolicy::tabular_uniform(1, 2).unwrap();
        let n = 100_000;
        let hits = (0..n).filter(|_| u.sample(0, &mut rng).unwrap() == 0).count();
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((hits as f64 - n as f64 * 0.5).abs() < 3.0 * sigma);
    }

    #[test]
    fn kl_and_tv_against_uniform_reference_values() {
        // logits [1, -1] give probs [sigmoid(2), 1-sigmoid(2)]
        let spec = MlpSpec::linear(1, 2).unwrap();
        let p = CategoricalPolicy::new(spec, ParameterVector::from_vec(vec![1.0, -1.0, 0.0, 0.0])).unwrap();
        let u = CategoricalPolicy::tabular_uniform(1, 2).unwrap();
        assert!((p.kl_at(&u, 0).unwrap() - 0.3278133254727375).abs() < 1e-12);
        assert!((p.tv_at(&u, 0).unwrap() - 0.3807970779778823).abs() < 1e-12);
        assert_eq!(p.kl_at(&p, 0).unwrap(), 0.0);
    }

    #[test]
    fn logp_gradient_matches_finite_differences() {
        let spec = MlpSpec::new(4, 1, 8, 3, crate::nn::Activation::Tanh).unwrap();
        let pol = CategoricalPolicy::with_init(spec.clone(), &mut seeded_rng(5)).unwrap();
        let mut analytic = vec![0.0; pol.params.len()];
        pol.accumulate_logp_grad(2, 1, 1.0, &mut analytic).unwrap();
        let mut rng = seeded_rng(6);
        let report = finite_diff_check(
            |params| {
                let probe = CategoricalPolicy::new(spec.clone(), params.clone()).unwrap();
                probe.log_prob(2, 1).unwrap()
            },
            &pol.params,
            &analytic,
            1e-6,
            &mut rng,
            GradCheckOpts::default(),
        );
        assert!(report.pass, "max rel {}", report.max_rel_error);
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let spec = MlpSpec::linear(3, 4).unwrap();
        let pol = CategoricalPolicy::with_init(spec.clone(), &mut seeded_rng(7)).unwrap();
        let reference = CategoricalPolicy::with_init(spec.clone(), &mut seeded_rng(8)).unwrap();
        let mut analytic = vec![0.0; pol.params.len()];
        pol.accumulate_kl_grad(&reference, 1, 1.0, &mut analytic).unwrap();
        let mut rng = seeded_rng(9);
        let report = finite_diff_check(
            |params| {
                let probe = CategoricalPolicy::new(spec.clone(), params.clone()).unwrap();
                probe.kl_at(&reference, 1).unwrap()
            },
            &pol.params,
            &analytic,
            1e-6,
            &mut rng,
            GradCheckOpts::default(),
        );
        assert!(report.pass, "max rel {}", report.max_rel_error);
    }
}
