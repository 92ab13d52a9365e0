//! Central-difference verification of analytic gradients.

use super::ParameterVector;
use rand::seq::index::sample;
use rand::Rng;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOpts {
    /// Perturbation for central differences.
    pub h: f64,
    /// Coordinates to probe; all of them when the vector is shorter.
    pub max_coords: usize,
    /// Entries where both gradients are below this count as matching.
    pub zero_floor: f64,
}

impl Default for GradCheckOpts {
    fn default() -> Self {
        GradCheckOpts { h: 1e-5, max_coords: 32, zero_floor: 1e-7 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub pass: bool,
}

/// Compares `analytic` against central differences of `f` at randomly
/// sampled coordinates of `params`.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &ParameterVector,
    analytic: &[f64],
    tolerance: f64,
    rng: &mut impl Rng,
    opts: GradCheckOpts,
) -> GradCheckReport
where
    F: FnMut(&ParameterVector) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let n = params.len();
    let coords: Vec<usize> = if n <= opts.max_coords {
        (0..n).collect()
    } else {
        sample(rng, n, opts.max_coords).into_vec()
    };

    let mut probe = params.clone();
    let mut max_rel: f64 = 0.0;
    for &i in &coords {
        let saved = probe[i];
        probe[i] = saved + opts.h;
        let up = f(&probe);
        probe[i] = saved - opts.h;
        let down = f(&probe);
        probe[i] = saved;
        let fd = (up - down) / (2.0 * opts.h);
        let an = analytic[i];
        let rel = if fd.abs() < opts.zero_floor && an.abs() < opts.zero_floor {
            0.0
        } else {
            (fd - an).abs() / fd.abs().max(an.abs())
        };
        max_rel = max_rel.max(rel);
    }
    GradCheckReport { max_rel_error: max_rel, coords_checked: coords.len(), pass: max_rel <= tolerance }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward, init_params, loss_grad, Activation, FnLoss, MlpSpec};
    use crate::rng::seeded_rng;

    fn mse_loss(targets: Vec<Vec<f64>>) -> FnLoss<impl Fn(&[Vec<f64>]) -> (f64, Vec<Vec<f64>>)> {
        FnLoss(move |outs: &[Vec<f64>]| {
            let n = outs.len() as f64;
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(outs.len());
            for (o, t) in outs.iter().zip(&targets) {
                let mut g = Vec::with_capacity(o.len());
                for (oi, ti) in o.iter().zip(t) {
                    total += (oi - ti) * (oi - ti) / n;
                    g.push(2.0 * (oi - ti) / n);
                }
                grads.push(g);
            }
            (total, grads)
        })
    }

    #[test]
    fn exact_quadratic_gradient_passes() {
        let spec = MlpSpec::new(3, 2, 8, 2, Activation::Tanh).unwrap();
        let params = init_params(&spec, &mut seeded_rng(5));
        let mut rng = seeded_rng(6);
        let inputs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let targets: Vec<Vec<f64>> = (0..4).map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let loss = mse_loss(targets);
        let (_, analytic) = loss_grad(&spec, &params, &inputs, &loss).unwrap();
        let report = finite_diff_check(
            |p| loss_grad(&spec, p, &inputs, &loss).map(|(v, _)| v).unwrap(),
            &params,
            &analytic,
            1e-6,
            &mut rng,
            GradCheckOpts::default(),
        );
        assert!(report.pass, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn relu_net_away_from_kinks_passes() {
        let spec = MlpSpec::new(2, 2, 6, 1, Activation::Relu).unwrap();
        let params = init_params(&spec, &mut seeded_rng(7));
        let inputs = vec![vec![0.37, -0.81]];
        let targets = vec![vec![0.25]];
        let loss = mse_loss(targets);
        let (_, analytic) = loss_grad(&spec, &params, &inputs, &loss).unwrap();
        let mut rng = seeded_rng(8);
        let report = finite_diff_check(
            |p| loss_grad(&spec, p, &inputs, &loss).map(|(v, _)| v).unwrap(),
            &params,
            &analytic,
            1e-6,
            &mut rng,
            GradCheckOpts::default(),
        );
        assert!(report.pass, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let spec = MlpSpec::linear(2, 1).unwrap();
        let params = init_params(&spec, &mut seeded_rng(9));
        let input = vec![vec![1.0, 2.0]];
        let f = |p: &crate::nn::ParameterVector| forward(&spec, p, &input[0]).unwrap()[0];
        // True gradient of the scalar output: [x1, x2, 1].
        let corrupted = vec![1.0, 2.0 + 0.5, 1.0];
        let mut rng = seeded_rng(10);
        let report = finite_diff_check(f, &params, &corrupted, 1e-4, &mut rng, GradCheckOpts::default());
        assert!(!report.pass);
        assert!(report.max_rel_error > 0.1);
    }
}
