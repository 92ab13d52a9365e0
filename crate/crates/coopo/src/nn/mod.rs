//! Small dense networks on flat `f64` parameter vectors.
//!
//! A network is described by [`MlpSpec`] and parameterized by a
//! [`ParameterVector`] laid out layer-major: weights of layer 0 in
//! row-major order (rows = outputs), then its biases, then layer 1,
//! and so on. Hidden layers share one width and one activation; the
//! output layer is linear. `hidden_layers = 0` is a plain affine map,
//! which doubles as a lookup table when inputs are one-hot.
//!
//! All gradients are reverse-mode and exact up to floating point;
//! [`gradcheck`] compares them against central differences.

mod adam;
mod checkpoint;
mod gradcheck;
mod mlp;

pub use adam::AdamState;
pub use checkpoint::{load_params, save_params};
pub use gradcheck::{finite_diff_check, GradCheckOpts, GradCheckReport};
pub use mlp::{forward, forward_batch, loss_grad, FnLoss, ForwardTrace, OutputLoss};
pub(crate) use mlp::{accumulate_grad, forward_traced};

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            // Subgradient 0 at the kink, so apply(0) pairs with slope 0.
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value.
    pub(crate) fn slope_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub(crate) fn tag(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            other => Err(Error::schema(format!("unknown activation tag {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_layers: usize, hidden_units: usize, output_dim: usize, activation: Activation) -> Result<Self> {
        let spec = MlpSpec { input_dim, hidden_layers, hidden_units, output_dim, activation };
        spec.validate()?;
        Ok(spec)
    }

    /// Affine map without hidden layers.
    pub fn linear(input_dim: usize, output_dim: usize) -> Result<Self> {
        Self::new(input_dim, 0, 0, output_dim, Activation::Relu)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::input("input_dim and output_dim must be positive"));
        }
        if self.hidden_layers > 0 && self.hidden_units == 0 {
            return Err(Error::input("hidden_units must be positive when hidden_layers > 0"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each affine layer in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        if self.hidden_layers == 0 {
            return vec![(self.input_dim, self.output_dim)];
        }
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        dims.push((self.input_dim, self.hidden_units));
        for _ in 1..self.hidden_layers {
            dims.push((self.hidden_units, self.hidden_units));
        }
        dims.push((self.hidden_units, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| o * (i + 1)).sum()
    }
}

/// Flat layer-major parameter storage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn zeros(n: usize) -> Self {
        ParameterVector(vec![0.0; n])
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        ParameterVector(v)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::DerefMut for ParameterVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Per-layer uniform init on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_params(spec: &MlpSpec, rng: &mut impl Rng) -> ParameterVector {
    let mut out = Vec::with_capacity(spec.param_count());
    for (fan_in, fan_out) in spec.layer_dims() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..fan_out * (fan_in + 1) {
            out.push(rng.gen_range(-bound..=bound));
        }
    }
    ParameterVector(out)
}

/// Offsets of one affine layer inside the flat vector.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerSlice {
    pub w_off: usize,
    pub b_off: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

pub(crate) fn layout(spec: &MlpSpec) -> Vec<LayerSlice> {
    let mut slices = Vec::new();
    let mut off = 0;
    for (fan_in, fan_out) in spec.layer_dims() {
        let w_off = off;
        let b_off = off + fan_out * fan_in;
        off = b_off + fan_out;
        slices.push(LayerSlice { w_off, b_off, fan_in, fan_out });
    }
    slices
}
