//! Dense feed-forward networks with analytic derivatives up to third order.
//!
//! Layer convention: `x = W·a`, `y = σ(x) + I`. The bias is added after the
//! activation, and the directional-derivative passes in [`crate::hvp`] are
//! written against exactly this form.
//!
//! Parameters flatten layer by layer: the weight matrix in row-major order
//! (`fan_out × fan_in`), then the bias vector.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Softplus,
    /// Piecewise linear: σ″ and σ‴ are zero wherever defined, so the
    /// spectral-radius gradient does not see relu curvature.
    Relu,
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Identity,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Softplus,
        Activation::Relu,
    ];

    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => logistic(x),
            Activation::Softplus => softplus(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// `(σ, σ′, σ″, σ‴)` at `x`.
    #[inline]
    pub fn derivs(self, x: f64) -> [f64; 4] {
        match self {
            Activation::Identity => [x, 1.0, 0.0, 0.0],
            Activation::Tanh => {
                let t = x.tanh();
                let d1 = 1.0 - t * t;
                [t, d1, -2.0 * t * d1, d1 * (6.0 * t * t - 2.0)]
            }
            Activation::Sigmoid => {
                let s = logistic(x);
                let d1 = s * (1.0 - s);
                [
                    s,
                    d1,
                    d1 * (1.0 - 2.0 * s),
                    d1 * (1.0 - 6.0 * s + 6.0 * s * s),
                ]
            }
            Activation::Softplus => {
                let s = logistic(x);
                let d2 = s * (1.0 - s);
                [softplus(x), s, d2, d2 * (1.0 - 2.0 * s)]
            }
            Activation::Relu => {
                if x > 0.0 {
                    [x, 1.0, 0.0, 0.0]
                } else {
                    [0.0, 0.0, 0.0, 0.0]
                }
            }
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
            Activation::Softplus => 3,
            Activation::Relu => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

/// Elementwise losses. Each output contributes `E_k(y_k, t_k)`; the total
/// is averaged over outputs and over the batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `½ (y - t)²`
    MeanSquaredError,
    /// Binary cross-entropy on the logit `y`: `softplus(y) - t·y`.
    SigmoidBinaryCrossEntropy,
}

/// Per-output loss value and its first three derivatives in `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerms {
    pub value: f64,
    pub e: Vec<f64>,
    pub de: Vec<f64>,
    pub d2e: Vec<f64>,
}

impl LossKind {
    /// `(E, e, e′, e″)` for a single output.
    #[inline]
    pub fn elem(self, y: f64, t: f64) -> [f64; 4] {
        match self {
            LossKind::MeanSquaredError => {
                let d = y - t;
                [0.5 * d * d, d, 1.0, 0.0]
            }
            LossKind::SigmoidBinaryCrossEntropy => {
                let s = logistic(y);
                let v = s * (1.0 - s);
                [softplus(y) - t * y, s - t, v, v * (1.0 - 2.0 * s)]
            }
        }
    }

    pub fn code(self) -> u8 {
        match self {
            LossKind::MeanSquaredError => 0,
            LossKind::SigmoidBinaryCrossEntropy => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LossKind::MeanSquaredError),
            1 => Some(LossKind::SigmoidBinaryCrossEntropy),
            _ => None,
        }
    }
}

/// Unreduced per-output loss terms for one sample.
pub fn loss_terms(loss: LossKind, y: &[f64], t: &[f64]) -> Result<LossTerms> {
    if y.len() != t.len() {
        return Err(Error::shape("loss_terms", y.len(), t.len()));
    }
    let mut out = LossTerms {
        value: 0.0,
        e: Vec::with_capacity(y.len()),
        de: Vec::with_capacity(y.len()),
        d2e: Vec::with_capacity(y.len()),
    };
    for (&yk, &tk) in y.iter().zip(t) {
        let [v, e, de, d2e] = loss.elem(yk, tk);
        out.value += v;
        out.e.push(e);
        out.de.push(de);
        out.d2e.push(d2e);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self { width, activation }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::shape("Layer bias", weights.rows(), bias.len()));
        }
        if !weights.all_finite() || !bias.iter().all(|b| b.is_finite()) {
            return Err(Error::Validation("layer parameters must be finite".into()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn num_params(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
}

/// Per-layer pre-activations `x` and outputs `y` for one batch.
#[derive(Clone, Debug)]
pub struct ActivationTrace {
    pub input: Matrix,
    pub pre: Vec<Matrix>,
    pub post: Vec<Matrix>,
}

impl ActivationTrace {
    pub fn output(&self) -> &Matrix {
        self.post.last().unwrap_or(&self.input)
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

impl Network {
    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Validation("input_dim must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::Validation("network needs at least one layer".into()));
        }
        let mut fan_in = input_dim;
        for layer in &layers {
            if layer.fan_in() != fan_in {
                return Err(Error::shape("Network layer chain", fan_in, layer.fan_in()));
            }
            fan_in = layer.fan_out();
        }
        Ok(Self { input_dim, layers })
    }

    /// All-zero parameters with the given architecture.
    pub fn zeros(input_dim: usize, specs: &[LayerSpec]) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut fan_in = input_dim;
        for spec in specs {
            if spec.width == 0 {
                return Err(Error::Validation("layer width must be positive".into()));
            }
            layers.push(Layer::new(
                Matrix::zeros(spec.width, fan_in),
                vec![0.0; spec.width],
                spec.activation,
            )?);
            fan_in = spec.width;
        }
        Self::from_layers(input_dim, layers)
    }

    /// Weights drawn from `N(0, 1/fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(input_dim, specs)?;
        for layer in &mut net.layers {
            let std = (1.0 / layer.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in layer.weights.as_mut_slice() {
                *w = normal.sample(rng);
            }
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Layer::fan_out)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec::new(l.fan_out(), l.activation))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Flattened parameter vector `w`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params(&mut self, w: &[f64]) -> Result<()> {
        if w.len() != self.num_params() {
            return Err(Error::shape("Network::set_params", self.num_params(), w.len()));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.as_slice().len();
            layer.weights.as_mut_slice().copy_from_slice(&w[off..off + nw]);
            off += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&w[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn with_params(&self, w: &[f64]) -> Result<Self> {
        let mut net = self.clone();
        net.set_params(w)?;
        Ok(net)
    }

    /// Start offset of each layer's block in the flattened vector.
    pub(crate) fn param_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offs.push(off);
            off += layer.num_params();
        }
        offs
    }

    pub(crate) fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.input_dim {
            return Err(Error::shape("network input width", self.input_dim, input.cols()));
        }
        if !input.all_finite() {
            return Err(Error::Validation("network input contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Matrix) -> Result<ActivationTrace> {
        self.check_input(input)?;
        let batch = input.rows();
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let a = post.last().unwrap_or(input);
            let mut x = Matrix::zeros(batch, layer.fan_out());
            let mut y = Matrix::zeros(batch, layer.fan_out());
            for b in 0..batch {
                let ab = a.row(b);
                for k in 0..layer.fan_out() {
                    let xk = dot(layer.weights.row(k), ab);
                    x[(b, k)] = xk;
                    y[(b, k)] = layer.activation.eval(xk) + layer.bias[k];
                }
            }
            if !y.all_finite() {
                return Err(Error::Numerical {
                    layer: li,
                    quantity: "activation",
                });
            }
            pre.push(x);
            post.push(y);
        }
        Ok(ActivationTrace {
            input: input.clone(),
            pre,
            post,
        })
    }

    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        let mut trace = self.forward(input)?;
        Ok(trace.post.pop().expect("non-empty network"))
    }

    fn check_trace(&self, trace: &ActivationTrace) -> Result<()> {
        let ok = trace.pre.len() == self.layers.len()
            && trace.post.len() == self.layers.len()
            && trace.input.cols() == self.input_dim
            && self.layers.iter().zip(&trace.pre).all(|(l, x)| {
                x.cols() == l.fan_out() && x.rows() == trace.input.rows()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Validation("activation trace does not match the network".into()))
        }
    }
}

/// Mean loss over the batch and the outputs.
pub fn batch_loss(loss: LossKind, output: &Matrix, target: &Matrix) -> Result<f64> {
    if output.rows() != target.rows() || output.cols() != target.cols() {
        return Err(Error::shape(
            "loss target",
            output.rows() * output.cols(),
            target.rows() * target.cols(),
        ));
    }
    let total: f64 = output
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(&y, &t)| loss.elem(y, t)[0])
        .sum();
    Ok(total / (output.rows() * output.cols()) as f64)
}

/// Gradient of the mean batch loss, flattened in [`Network::params`] order.
pub fn backward(
    net: &Network,
    trace: &ActivationTrace,
    loss: LossKind,
    target: &Matrix,
) -> Result<Vec<f64>> {
    net.check_trace(trace)?;
    let out = trace.output();
    if target.rows() != out.rows() || target.cols() != out.cols() {
        return Err(Error::shape(
            "backward target",
            out.rows() * out.cols(),
            target.rows() * target.cols(),
        ));
    }
    let batch = out.rows();
    let scale = 1.0 / (batch * out.cols()) as f64;

    let mut grad = vec![0.0; net.num_params()];
    let offsets = net.param_offsets();

    // ∂E/∂y at the output layer.
    let mut gy = Matrix::zeros(batch, out.cols());
    for (g, (&y, &t)) in gy
        .as_mut_slice()
        .iter_mut()
        .zip(out.as_slice().iter().zip(target.as_slice()))
    {
        *g = scale * loss.elem(y, t)[1];
    }

    for li in (0..net.layers.len()).rev() {
        let layer = &net.layers[li];
        let a = if li == 0 { &trace.input } else { &trace.post[li - 1] };
        let x = &trace.pre[li];
        let (fan_out, fan_in) = (layer.fan_out(), layer.fan_in());
        let off = offsets[li];
        let (gw, rest) = grad[off..].split_at_mut(fan_out * fan_in);
        let gb = &mut rest[..fan_out];

        let mut gx = Matrix::zeros(batch, fan_out);
        for b in 0..batch {
            for k in 0..fan_out {
                let g = layer.activation.derivs(x[(b, k)])[1] * gy[(b, k)];
                gx[(b, k)] = g;
                gb[k] += gy[(b, k)];
                let ab = a.row(b);
                for (gwj, &aj) in gw[k * fan_in..(k + 1) * fan_in].iter_mut().zip(ab) {
                    *gwj += g * aj;
                }
            }
        }

        if li > 0 {
            let mut ga = Matrix::zeros(batch, fan_in);
            for b in 0..batch {
                for k in 0..fan_out {
                    let g = gx[(b, k)];
                    if g == 0.0 {
                        continue;
                    }
                    for (o, &w) in ga.row_mut(b).iter_mut().zip(layer.weights.row(k)) {
                        *o += w * g;
                    }
                }
            }
            gy = ga;
        }
    }
    Ok(grad)
}
