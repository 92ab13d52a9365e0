//! Forward evaluation and reverse-mode differentiation.

use super::{layout, LayerSlice, MlpSpec, ParameterVector};
use crate::error::{Error, Result};

/// Post-activation values of every layer for one input;
/// `acts[0]` is the input, `acts.last()` the network output.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub(crate) acts: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has at least input and output")
    }
}

fn check_shapes(spec: &MlpSpec, params: &ParameterVector, input: &[f64]) -> Result<()> {
    if input.len() != spec.input_dim {
        return Err(Error::input(format!(
            "input has {} entries, spec expects {}",
            input.len(),
            spec.input_dim
        )));
    }
    if params.len() != spec.param_count() {
        return Err(Error::input(format!(
            "parameter vector has {} entries, spec expects {}",
            params.len(),
            spec.param_count()
        )));
    }
    Ok(())
}

fn affine(slice: &LayerSlice, params: &[f64], x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for row in 0..slice.fan_out {
        let w = &params[slice.w_off + row * slice.fan_in..slice.w_off + (row + 1) * slice.fan_in];
        let mut acc = params[slice.b_off + row];
        for (wi, xi) in w.iter().zip(x) {
            acc += wi * xi;
        }
        out.push(acc);
    }
}

pub fn forward_traced(spec: &MlpSpec, params: &ParameterVector, input: &[f64]) -> Result<ForwardTrace> {
    check_shapes(spec, params, input)?;
    let slices = layout(spec);
    let n_layers = slices.len();
    let mut acts = Vec::with_capacity(n_layers + 1);
    acts.push(input.to_vec());
    let mut z = Vec::new();
    for (idx, slice) in slices.iter().enumerate() {
        affine(slice, params, acts.last().unwrap(), &mut z);
        let hidden = idx + 1 < n_layers;
        let mut a = Vec::with_capacity(z.len());
        for &v in &z {
            let y = if hidden { spec.activation.apply(v) } else { v };
            if !y.is_finite() {
                return Err(Error::numeric(format!("non-finite activation in layer {idx}")));
            }
            a.push(y);
        }
        acts.push(a);
    }
    Ok(ForwardTrace { acts })
}

pub fn forward(spec: &MlpSpec, params: &ParameterVector, input: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_traced(spec, params, input)?.acts.pop().unwrap())
}

pub fn forward_batch(spec: &MlpSpec, params: &ParameterVector, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    inputs.iter().map(|x| forward(spec, params, x)).collect()
}

/// Adds this sample's parameter gradient to `grad`, given the gradient
/// of the loss in the network output.
pub(crate) fn accumulate_grad(
    spec: &MlpSpec,
    params: &ParameterVector,
    trace: &ForwardTrace,
    d_output: &[f64],
    grad: &mut [f64],
) {
    let slices = layout(spec);
    let n_layers = slices.len();
    debug_assert_eq!(d_output.len(), spec.output_dim);
    debug_assert_eq!(grad.len(), params.len());

    let mut delta = d_output.to_vec();
    for idx in (0..n_layers).rev() {
        let slice = &slices[idx];
        let a_in = &trace.acts[idx];
        for row in 0..slice.fan_out {
            let d = delta[row];
            if d != 0.0 {
                let w_row = slice.w_off + row * slice.fan_in;
                for (col, ai) in a_in.iter().enumerate() {
                    grad[w_row + col] += d * ai;
                }
            }
            grad[slice.b_off + row] += d;
        }
        if idx == 0 {
            break;
        }
        let mut d_prev = vec![0.0; slice.fan_in];
        for row in 0..slice.fan_out {
            let d = delta[row];
            if d != 0.0 {
                let w_row = slice.w_off + row * slice.fan_in;
                for (col, dp) in d_prev.iter_mut().enumerate() {
                    *dp += params[w_row + col] * d;
                }
            }
        }
        for (dp, &a) in d_prev.iter_mut().zip(trace.acts[idx].iter()) {
            *dp *= spec.activation.slope_from_output(a);
        }
        delta = d_prev;
    }
}

/// Scalar loss over a batch of network outputs, with its gradient in
/// those outputs.
pub trait OutputLoss {
    fn value_and_grad(&self, outputs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>);
}

/// Adapter so closures can serve as losses.
pub struct FnLoss<F>(pub F);

impl<F> OutputLoss for FnLoss<F>
where
    F: Fn(&[Vec<f64>]) -> (f64, Vec<Vec<f64>>),
{
    fn value_and_grad(&self, outputs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        (self.0)(outputs)
    }
}

/// Loss value and its full parameter gradient over a batch.
pub fn loss_grad(
    spec: &MlpSpec,
    params: &ParameterVector,
    inputs: &[Vec<f64>],
    loss: &dyn OutputLoss,
) -> Result<(f64, ParameterVector)> {
    let traces: Vec<ForwardTrace> = inputs
        .iter()
        .map(|x| forward_traced(spec, params, x))
        .collect::<Result<_>>()?;
    let outputs: Vec<Vec<f64>> = traces.iter().map(|t| t.output().to_vec()).collect();
    let (value, d_outputs) = loss.value_and_grad(&outputs);
    if d_outputs.len() != inputs.len() {
        return Err(Error::input("loss returned gradient for a different batch size"));
    }
    let mut grad = vec![0.0; params.len()];
    for (trace, d_out) in traces.iter().zip(&d_outputs) {
        accumulate_grad(spec, params, trace, d_out, &mut grad);
    }
    Ok((value, ParameterVector::from_vec(grad)))
}
