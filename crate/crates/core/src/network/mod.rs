//! Fully-connected networks: forward passes with activation capture,
//! reverse-mode parameter gradients, and the per-layer output Jacobians.
//!
//! Indexing: activations are `h_0 = x, h_1, ..., h_L`; weight layer `i`
//! (zero-based) maps `h_i` to `h_{i+1}` via `z_{i+1} = W_i h_i + b_i`.

mod activation;
mod checkpoint;

use serde::{Deserialize, Serialize};

pub use activation::Activation;
pub use checkpoint::Checkpoint;

use crate::data::Batch;
use crate::error::{shape, Error, Result};
use crate::linalg::{gemm, Matrix, RandomSource, Trans};
use crate::objective::LossKind;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `d_out x d_in`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    /// `H W^T + 1 b^T` for a batch `H` of row activations.
    pub fn affine(&self, h: &Matrix) -> Matrix {
        let mut z = gemm(h, Trans::No, &self.weights, Trans::Yes);
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        z
    }
}

/// Weight initialisation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    #[default]
    Uniform,
    /// `N(0, 2/fan_in)` weights, biases as in `Uniform`. Nonzero biases
    /// keep the kinks of a scalar-input ReLU net spread over the domain.
    He,
}

impl std::str::FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Init::Uniform),
            "he" => Ok(Init::He),
            other => Err(Error::Argument(format!("unknown init `{other}`"))),
        }
    }
}

/// Widths, hidden activation and initialisation of a fresh network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub widths: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub init: Init,
}

impl Architecture {
    pub fn new(widths: &[usize], activation: Activation, init: Init) -> Self {
        Architecture {
            widths: widths.to_vec(),
            activation,
            init,
        }
    }

    /// `widths = [d_in, hidden x depth-1, d_out]`.
    pub fn mlp(
        d_in: usize,
        hidden: usize,
        depth: usize,
        d_out: usize,
        activation: Activation,
    ) -> Self {
        let mut widths = vec![d_in];
        widths.extend(std::iter::repeat_n(hidden, depth.saturating_sub(1)));
        widths.push(d_out);
        Architecture {
            widths,
            activation,
            init: Init::default(),
        }
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn build(&self, rs: &mut RandomSource) -> Result<Network> {
        Network::random(&self.widths, self.activation, self.init, rs)
    }
}

/// Multi-layer perceptron. The final layer always has identity activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Clean forward pass for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `z_1 ..= z_L`.
    pub pre: Vec<Vec<f64>>,
    /// `h_0 ..= h_L`.
    pub post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn input(&self) -> &[f64] {
        &self.post[0]
    }

    pub fn output(&self) -> &[f64] {
        self.post.last().expect("trace has an input")
    }

    /// `h_k`, `k = 0` being the input.
    pub fn activation(&self, k: usize) -> &[f64] {
        &self.post[k]
    }

    /// `z_k` for `k >= 1`.
    pub fn pre_activation(&self, k: usize) -> &[f64] {
        &self.pre[k - 1]
    }
}

/// Forward pass over a batch; row `b` of every matrix belongs to example `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTrace {
    pub pre: Vec<Matrix>,
    pub post: Vec<Matrix>,
}

impl BatchTrace {
    pub fn output(&self) -> &Matrix {
        self.post.last().expect("trace has an input")
    }

    pub fn example(&self, b: usize) -> ForwardTrace {
        ForwardTrace {
            pre: self.pre.iter().map(|m| m.row(b).to_vec()).collect(),
            post: self.post.iter().map(|m| m.row(b).to_vec()).collect(),
        }
    }
}

/// `J_k = dh_L/dh_k` for `k = 0 ..= L`, each `d_L x d_k`; `J_L` is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianSet {
    jacobians: Vec<Matrix>,
}

impl JacobianSet {
    pub fn get(&self, k: usize) -> &Matrix {
        &self.jacobians[k]
    }

    /// Number of noisable activations, `L`.
    pub fn len(&self) -> usize {
        self.jacobians.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.jacobians.iter()
    }
}

/// `D_k W` per ReLU layer, where `D_k` zeroes rows of inactive output units.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedWeights {
    /// `(weight layer index, masked matrix)`.
    pub layers: Vec<(usize, Matrix)>,
}

/// Gradient with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradient {
    pub fn zeros_like(net: &Network) -> Self {
        Gradient {
            weights: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.output_dim(), l.input_dim()))
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.output_dim()])
                .collect(),
        }
    }

    /// Weights then bias, layer by layer; same order as [`Network::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().flatten().all(|v| v.is_finite())
    }
}

impl Network {
    pub fn new(mut layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(shape(
                    "Network::new",
                    format!(
                        "layer {i}: bias has {} entries for {} outputs",
                        l.bias.len(),
                        l.output_dim()
                    ),
                ));
            }
            if i > 0 && l.input_dim() != layers[i - 1].output_dim() {
                return Err(shape(
                    "Network::new",
                    format!(
                        "layer {i} expects {} inputs but layer {} emits {}",
                        l.input_dim(),
                        i - 1,
                        layers[i - 1].output_dim()
                    ),
                ));
            }
        }
        layers.last_mut().expect("nonempty").activation = Activation::Identity;
        Ok(Network { layers })
    }

    /// Random network with widths `[d_0, ..., d_L]` and the given hidden activation.
    pub fn random(
        widths: &[usize],
        hidden: Activation,
        init: Init,
        rs: &mut RandomSource,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Argument(format!(
                "need at least two positive widths, got {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let (weights, bias) = match init {
                    Init::Uniform => {
                        let a = 1.0 / (fan_in as f64).sqrt();
                        let wv = (0..fan_in * fan_out)
                            .map(|_| rs.uniform_range(-a, a))
                            .collect();
                        let bv = (0..fan_out).map(|_| rs.uniform_range(-a, a)).collect();
                        (wv, bv)
                    }
                    Init::He => {
                        let sd = (2.0 / fan_in as f64).sqrt();
                        let a = 1.0 / (fan_in as f64).sqrt();
                        let wv = rs.gaussian(fan_in * fan_out, sd).expect("sd >= 0");
                        let bv = (0..fan_out).map(|_| rs.uniform_range(-a, a)).collect();
                        (wv, bv)
                    }
                };
                Layer {
                    weights: Matrix::from_vec(fan_out, fan_in, weights).expect("sized"),
                    bias,
                    activation: hidden,
                }
            })
            .collect();
        Network::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut Layer {
        &mut self.layers[i]
    }

    /// `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").output_dim()
    }

    /// `[d_0, ..., d_L]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::output_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.rows() * l.weights.cols() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(shape(
                "set_params",
                format!(
                    "{} values for {} parameters",
                    flat.len(),
                    self.param_count()
                ),
            ));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weights.data().len();
            l.weights.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// `theta -= lr * grad`.
    pub fn sgd_step(&mut self, grad: &Gradient, lr: f64) -> Result<()> {
        for (l, (gw, gb)) in self
            .layers
            .iter_mut()
            .zip(grad.weights.iter().zip(&grad.biases))
        {
            l.weights.axpy(-lr, gw)?;
            for (b, g) in l.bias.iter_mut().zip(gb) {
                *b -= lr * g;
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        let batch = self.forward_batch(&Matrix::row_vector(x))?;
        Ok(batch.example(0))
    }

    pub fn forward_batch(&self, inputs: &Matrix) -> Result<BatchTrace> {
        self.check_input(inputs)?;
        let mut pre = Vec::with_capacity(self.depth());
        let mut post = Vec::with_capacity(self.depth() + 1);
        post.push(inputs.clone());
        for layer in &self.layers {
            let z = layer.affine(post.last().expect("nonempty"));
            let h = z.map(|v| layer.activation.apply(v));
            pre.push(z);
            post.push(h);
        }
        Ok(BatchTrace { pre, post })
    }

    /// Network outputs only, one row per input row.
    pub fn predict(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_input(inputs)?;
        let mut h = inputs.clone();
        for layer in &self.layers {
            let act = layer.activation;
            h = layer.affine(&h).map(|v| act.apply(v));
        }
        Ok(h)
    }

    pub(crate) fn check_input(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.input_dim() {
            return Err(shape(
                "forward",
                format!(
                    "input has {} features, network expects {}",
                    inputs.cols(),
                    self.input_dim()
                ),
            ));
        }
        Ok(())
    }

    /// Mean batch loss and its gradient over all weights and biases.
    pub fn param_gradient(&self, batch: &Batch, loss: LossKind) -> Result<(f64, Gradient)> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::Argument("empty batch".into()));
        }
        if batch.targets.cols() != self.output_dim() {
            return Err(shape(
                "param_gradient",
                format!(
                    "targets have {} columns, network emits {}",
                    batch.targets.cols(),
                    self.output_dim()
                ),
            ));
        }
        let trace = self.forward_batch(&batch.inputs)?;
        let out = trace.output();
        let mut total = 0.0;
        let mut delta = Matrix::zeros(n, self.output_dim());
        for b in 0..n {
            total += loss.value(out.row(b), batch.targets.row(b))?;
            let g = loss.output_gradient(out.row(b), batch.targets.row(b))?;
            for (d, v) in delta.row_mut(b).iter_mut().zip(g) {
                *d = v / n as f64;
            }
        }
        let grad = self.backprop(&trace, delta);
        Ok((total / n as f64, grad))
    }

    /// Reverse sweep from `delta = dLoss/dh_L` (one row per example).
    fn backprop(&self, trace: &BatchTrace, mut delta: Matrix) -> Gradient {
        let mut grad = Gradient::zeros_like(self);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            if act != Activation::Identity {
                let slope = trace.pre[i].map(|z| act.derivative(z));
                delta = delta.hadamard(&slope).expect("trace shapes");
            }
            grad.weights[i] = gemm(&delta, Trans::Yes, &trace.post[i], Trans::No);
            let gb = &mut grad.biases[i];
            for r in 0..delta.rows() {
                for (g, d) in gb.iter_mut().zip(delta.row(r)) {
                    *g += d;
                }
            }
            if i > 0 {
                delta = gemm(&delta, Trans::No, &layer.weights, Trans::No);
            }
        }
        grad
    }

    /// Vector-Jacobian product through one clean trace: returns the parameter
    /// gradient and the input gradient of `cotangent . h_L`.
    pub fn vjp(&self, trace: &ForwardTrace, cotangent: &[f64]) -> Result<(Gradient, Vec<f64>)> {
        self.check_trace(trace)?;
        if cotangent.len() != self.output_dim() {
            return Err(shape(
                "vjp",
                format!(
                    "cotangent has {} entries, network emits {}",
                    cotangent.len(),
                    self.output_dim()
                ),
            ));
        }
        let mut grad = Gradient::zeros_like(self);
        let mut delta = cotangent.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            for (d, &z) in delta.iter_mut().zip(&trace.pre[i]) {
                *d *= layer.activation.derivative(z);
            }
            let h = &trace.post[i];
            for (r, &d) in delta.iter().enumerate() {
                for (c, &hv) in h.iter().enumerate() {
                    grad.weights[i][(r, c)] = d * hv;
                }
                grad.biases[i][r] = d;
            }
            let mut prev = vec![0.0; layer.input_dim()];
            for (r, &d) in delta.iter().enumerate() {
                for (p, w) in prev.iter_mut().zip(layer.weights.row(r)) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        Ok((grad, delta))
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        let widths = self.widths();
        let ok = trace.post.len() == widths.len()
            && trace.pre.len() == self.depth()
            && trace.post.iter().zip(&widths).all(|(h, &d)| h.len() == d)
            && trace
                .pre
                .iter()
                .zip(&widths[1..])
                .all(|(z, &d)| z.len() == d);
        if ok {
            Ok(())
        } else {
            Err(shape(
                "trace",
                format!("trace does not match network widths {widths:?}"),
            ))
        }
    }

    /// `J_k` for every activation, evaluated on a clean trace.
    pub fn layer_jacobians(&self, trace: &ForwardTrace) -> Result<JacobianSet> {
        self.check_trace(trace)?;
        let mut jacobians = vec![Matrix::identity(self.output_dim())];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let mut g = jacobians.last().expect("nonempty").clone();
            if layer.activation != Activation::Identity {
                for r in 0..g.rows() {
                    for (v, &z) in g.row_mut(r).iter_mut().zip(&trace.pre[i]) {
                        *v *= layer.activation.derivative(z);
                    }
                }
            }
            jacobians.push(gemm(&g, Trans::No, &layer.weights, Trans::No));
        }
        jacobians.reverse();
        Ok(JacobianSet { jacobians })
    }

    /// Masked copy of weight layer `i`, which must be a ReLU layer.
    pub fn masked_weight(&self, trace: &ForwardTrace, i: usize) -> Result<Matrix> {
        self.check_trace(trace)?;
        let layer = self
            .layers
            .get(i)
            .ok_or_else(|| Error::Argument(format!("no weight layer {i}")))?;
        if layer.activation != Activation::Relu {
            return Err(Error::Unsupported(format!(
                "masked weights need a relu layer; layer {i} is {}",
                layer.activation
            )));
        }
        let mut w = layer.weights.clone();
        for (r, &z) in trace.pre[i].iter().enumerate() {
            if z <= 0.0 {
                w.row_mut(r).fill(0.0);
            }
        }
        Ok(w)
    }

    /// Masked weights for every hidden layer; all hidden layers must be ReLU.
    pub fn masked_weights(&self, trace: &ForwardTrace) -> Result<MaskedWeights> {
        let layers = (0..self.depth() - 1)
            .map(|i| self.masked_weight(trace, i).map(|w| (i, w)))
            .collect::<Result<_>>()?;
        Ok(MaskedWeights { layers })
    }
}
