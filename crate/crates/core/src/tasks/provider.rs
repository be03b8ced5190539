//! Parameter providers `h(theta)`: the learnable block in front of the solver.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait ParamProvider {
    fn theta(&self) -> &DVector<f64>;
    fn theta_mut(&mut self) -> &mut DVector<f64>;
    fn output_dim(&self) -> usize;
    /// `h(theta)` at an arbitrary parameter vector.
    fn forward_at(&self, theta: &DVector<f64>) -> DVector<f64>;
    /// `(d h / d theta)^T upstream` at an arbitrary parameter vector.
    fn vjp_at(&self, theta: &DVector<f64>, upstream: &DVector<f64>) -> DVector<f64>;

    fn forward(&self) -> DVector<f64> {
        self.forward_at(self.theta())
    }

    fn vjp(&self, upstream: &DVector<f64>) -> DVector<f64> {
        self.vjp_at(self.theta(), upstream)
    }
}

/// `h(theta) = theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectProvider {
    theta: DVector<f64>,
}

impl DirectProvider {
    pub fn new(theta: DVector<f64>) -> Self {
        Self { theta }
    }
}

impl ParamProvider for DirectProvider {
    fn theta(&self) -> &DVector<f64> {
        &self.theta
    }
    fn theta_mut(&mut self) -> &mut DVector<f64> {
        &mut self.theta
    }
    fn output_dim(&self) -> usize {
        self.theta.len()
    }
    fn forward_at(&self, theta: &DVector<f64>) -> DVector<f64> {
        theta.clone()
    }
    fn vjp_at(&self, _theta: &DVector<f64>, upstream: &DVector<f64>) -> DVector<f64> {
        upstream.clone()
    }
}

/// `h(theta) = scale * sigmoid(theta)`, elementwise; outputs lie in `(0, scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidProvider {
    theta: DVector<f64>,
    pub scale: f64,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl SigmoidProvider {
    pub fn new(theta: DVector<f64>, scale: f64) -> Self {
        Self { theta, scale }
    }

    /// Parameters whose output is exactly `target` (each in `(0, scale)`).
    pub fn inverse(target: &[f64], scale: f64) -> Result<DVector<f64>> {
        target
            .iter()
            .map(|&t| {
                let p = t / scale;
                if p > 0.0 && p < 1.0 {
                    Ok((p / (1.0 - p)).ln())
                } else {
                    Err(Error::InvalidInput(format!("{t} is outside (0, {scale})")))
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(DVector::from_vec)
    }
}

impl ParamProvider for SigmoidProvider {
    fn theta(&self) -> &DVector<f64> {
        &self.theta
    }
    fn theta_mut(&mut self) -> &mut DVector<f64> {
        &mut self.theta
    }
    fn output_dim(&self) -> usize {
        self.theta.len()
    }
    fn forward_at(&self, theta: &DVector<f64>) -> DVector<f64> {
        theta.map(|v| self.scale * sigmoid(v))
    }
    fn vjp_at(&self, theta: &DVector<f64>, upstream: &DVector<f64>) -> DVector<f64> {
        theta.zip_map(upstream, |v, u| {
            let s = sigmoid(v);
            u * self.scale * s * (1.0 - s)
        })
    }
}

/// Architecture of the constant-input multilayer provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Layer widths, input first and output last.
    pub widths: Vec<usize>,
    /// Output is `offset + scale * (last affine layer)`.
    pub output_scale: f64,
    pub output_offset: Vec<f64>,
}

/// A small fully connected network with `tanh` hidden units evaluated on an
/// all-ones input, so its output is a function of its weights alone.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpProvider {
    spec: MlpSpec,
    theta: DVector<f64>,
}

impl MlpProvider {
    pub fn new(spec: MlpSpec, theta: DVector<f64>) -> Result<Self> {
        if spec.widths.len() < 2 || spec.widths.contains(&0) {
            return Err(Error::InvalidInput("MLP needs at least two non-empty layers".into()));
        }
        let out = *spec.widths.last().unwrap_or(&0);
        if spec.output_offset.len() != out {
            return Err(Error::ShapeMismatch(format!(
                "output offset has {} entries, network outputs {out}",
                spec.output_offset.len()
            )));
        }
        let expected = Self::param_count(&spec.widths);
        if theta.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "MLP expects {expected} parameters, got {}",
                theta.len()
            )));
        }
        Ok(Self { spec, theta })
    }

    /// Glorot-normal weights, zero biases.
    pub fn random<R: Rng>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        let mut theta = Vec::with_capacity(Self::param_count(&spec.widths));
        for w in spec.widths.windows(2) {
            let std = (2.0 / (w[0] + w[1]) as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidInput(e.to_string()))?;
            theta.extend((0..w[0] * w[1]).map(|_| normal.sample(rng)));
            theta.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Self::new(spec, DVector::from_vec(theta))
    }

    pub fn param_count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    fn layers(&self, theta: &DVector<f64>) -> Vec<(DMatrix<f64>, DVector<f64>)> {
        let mut at = 0;
        self.spec
            .widths
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                let weight = DMatrix::from_row_slice(o, i, &theta.as_slice()[at..at + i * o]);
                at += i * o;
                let bias = DVector::from_column_slice(&theta.as_slice()[at..at + o]);
                at += o;
                (weight, bias)
            })
            .collect()
    }

    /// Activations entering each layer, plus the raw output.
    fn activations(&self, layers: &[(DMatrix<f64>, DVector<f64>)]) -> (Vec<DVector<f64>>, DVector<f64>) {
        let mut inputs = Vec::with_capacity(layers.len());
        let mut a = DVector::from_element(self.spec.widths[0], 1.0);
        for (idx, (w, b)) in layers.iter().enumerate() {
            let pre = w * &a + b;
            inputs.push(a);
            a = if idx + 1 < layers.len() {
                pre.map(f64::tanh)
            } else {
                pre
            };
        }
        (inputs, a)
    }
}

impl ParamProvider for MlpProvider {
    fn theta(&self) -> &DVector<f64> {
        &self.theta
    }
    fn theta_mut(&mut self) -> &mut DVector<f64> {
        &mut self.theta
    }
    fn output_dim(&self) -> usize {
        *self.spec.widths.last().unwrap_or(&0)
    }
    fn forward_at(&self, theta: &DVector<f64>) -> DVector<f64> {
        let layers = self.layers(theta);
        let (_, raw) = self.activations(&layers);
        DVector::from_column_slice(&self.spec.output_offset) + raw * self.spec.output_scale
    }
    fn vjp_at(&self, theta: &DVector<f64>, upstream: &DVector<f64>) -> DVector<f64> {
        let layers = self.layers(theta);
        let (inputs, _) = self.activations(&layers);
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(layers.len());
        // Gradient with respect to the current layer's pre-activation.
        let mut delta = upstream * self.spec.output_scale;
        for idx in (0..layers.len()).rev() {
            let a = &inputs[idx];
            grads.push((&delta * a.transpose(), delta.clone()));
            if idx > 0 {
                let back = layers[idx].0.tr_mul(&delta);
                // inputs[idx] = tanh(pre) for hidden layers.
                delta = back.zip_map(a, |g, t| g * (1.0 - t * t));
            }
        }
        grads.reverse();
        let mut out = Vec::with_capacity(theta.len());
        for (gw, gb) in grads {
            for r in 0..gw.nrows() {
                out.extend(gw.row(r).iter().copied());
            }
            out.extend(gb.iter().copied());
        }
        DVector::from_vec(out)
    }
}
