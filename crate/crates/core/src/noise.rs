//! Gaussian noise injections on hidden activations.
//!
//! Additive noise replaces `h` by `h + eps` with `eps ~ N(0, s^2 I)`;
//! multiplicative noise uses `h * (1 + s xi)`, `xi ~ N(0, I)`, so the
//! injected perturbation has per-unit variance `h_i^2 s^2`. Noise never
//! touches the network output.

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{shape, Error, Result};
use crate::linalg::{Matrix, RandomSource};
use crate::network::{ForwardTrace, Network};
use crate::objective::LossKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[default]
    None,
    Additive,
    Multiplicative,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(NoiseMode::None),
            "additive" => Ok(NoiseMode::Additive),
            "multiplicative" => Ok(NoiseMode::Multiplicative),
            other => Err(Error::Argument(format!("unknown noise mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerNoise {
    pub mode: NoiseMode,
    pub variance: f64,
}

impl LayerNoise {
    /// Whether this layer perturbs anything. Zero variance is a no-op.
    pub fn is_active(&self) -> bool {
        self.mode != NoiseMode::None && self.variance > 0.0
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Per-unit injected variance for clean activations `h`.
    pub fn unit_variances(&self, h: &[f64]) -> Vec<f64> {
        match (self.is_active(), self.mode) {
            (false, _) | (_, NoiseMode::None) => vec![0.0; h.len()],
            (true, NoiseMode::Additive) => vec![self.variance; h.len()],
            (true, NoiseMode::Multiplicative) => h.iter().map(|v| self.variance * v * v).collect(),
        }
    }
}

/// Noise per activation `h_0 ..= h_{L-1}`; the output `h_L` is never noised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub layers: Vec<LayerNoise>,
}

impl NoiseSpec {
    pub fn none(depth: usize) -> Self {
        NoiseSpec {
            layers: vec![LayerNoise::default(); depth],
        }
    }

    /// Same mode and variance at every noisable activation.
    pub fn uniform(depth: usize, mode: NoiseMode, variance: f64) -> Result<Self> {
        let spec = NoiseSpec {
            layers: vec![LayerNoise { mode, variance }; depth],
        };
        spec.check_variances()?;
        Ok(spec)
    }

    /// Noise at the input activation only.
    pub fn input_only(depth: usize, mode: NoiseMode, variance: f64) -> Result<Self> {
        let mut spec = NoiseSpec::none(depth);
        spec.layers[0] = LayerNoise { mode, variance };
        spec.check_variances()?;
        Ok(spec)
    }

    fn check_variances(&self) -> Result<()> {
        for (k, l) in self.layers.iter().enumerate() {
            if !(l.variance >= 0.0) || !l.variance.is_finite() {
                return Err(Error::Domain(format!(
                    "noise variance at layer {k} must be finite and >= 0, got {}",
                    l.variance
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        if self.layers.len() != net.depth() {
            return Err(Error::Argument(format!(
                "noise spec covers {} activations, network has {} noisable activations",
                self.layers.len(),
                net.depth()
            )));
        }
        self.check_variances()
    }

    pub fn is_silent(&self) -> bool {
        self.layers.iter().all(|l| !l.is_active())
    }
}

/// One realised injection, ready to apply to a batch of activations.
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    Add(Matrix),
    Scale(Matrix),
}

impl Perturbation {
    /// Draws `rows x cols` noise for one layer; `None` for inactive layers.
    /// Entries are drawn in row-major order.
    pub fn draw(
        layer: &LayerNoise,
        rows: usize,
        cols: usize,
        rs: &mut RandomSource,
    ) -> Option<Self> {
        if !layer.is_active() {
            return None;
        }
        let sigma = layer.std_dev();
        let mut m = Matrix::zeros(rows, cols);
        rs.fill_normal(m.data_mut(), sigma);
        Some(match layer.mode {
            NoiseMode::Additive => Perturbation::Add(m),
            NoiseMode::Multiplicative => {
                m.data_mut().iter_mut().for_each(|v| *v += 1.0);
                Perturbation::Scale(m)
            }
            NoiseMode::None => unreachable!("inactive layers return early"),
        })
    }

    pub fn apply(&self, h: &Matrix) -> Matrix {
        match self {
            Perturbation::Add(e) => h.add(e).expect("drawn to shape"),
            Perturbation::Scale(f) => h.hadamard(f).expect("drawn to shape"),
        }
    }
}

/// Noised pass for one input alongside the clean pass it perturbs.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedForwardTrace {
    pub clean: ForwardTrace,
    /// `hat h_k`, the activation before this layer's injection, `k = 0 ..= L`.
    pub pre_noise: Vec<Vec<f64>>,
    /// `tilde h_k`, after injection; `tilde h_L = hat h_L`.
    pub post_noise: Vec<Vec<f64>>,
    /// Realised `tilde h_k - hat h_k`, `k = 0 .. L`.
    pub injections: Vec<Vec<f64>>,
    /// Noised output minus clean output.
    pub output_noise: Vec<f64>,
}

impl NoisedForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post_noise.last().expect("nonempty")
    }
}

pub fn noised_forward(
    net: &Network,
    x: &[f64],
    spec: &NoiseSpec,
    rs: &mut RandomSource,
) -> Result<NoisedForwardTrace> {
    spec.validate(net)?;
    let clean = net.forward(x)?;
    let depth = net.depth();
    let mut pre_noise = Vec::with_capacity(depth + 1);
    let mut post_noise = Vec::with_capacity(depth + 1);
    let mut injections = Vec::with_capacity(depth);
    let mut hat = Matrix::row_vector(x);
    for k in 0..=depth {
        let tilde = if k < depth {
            let t = match Perturbation::draw(&spec.layers[k], 1, hat.cols(), rs) {
                Some(p) => p.apply(&hat),
                None => hat.clone(),
            };
            injections.push(t.sub(&hat)?.into_data());
            t
        } else {
            hat.clone()
        };
        pre_noise.push(hat.row(0).to_vec());
        post_noise.push(tilde.row(0).to_vec());
        if k < depth {
            let layer = &net.layers()[k];
            let act = layer.activation;
            hat = layer.affine(&tilde).map(|v| act.apply(v));
        }
    }
    let output_noise = post_noise[depth]
        .iter()
        .zip(clean.output())
        .map(|(a, b)| a - b)
        .collect();
    Ok(NoisedForwardTrace {
        clean,
        pre_noise,
        post_noise,
        injections,
        output_noise,
    })
}

/// Network outputs for a batch under one joint noise draw.
pub fn noised_outputs(
    net: &Network,
    inputs: &Matrix,
    spec: &NoiseSpec,
    rs: &mut RandomSource,
) -> Result<Matrix> {
    spec.validate(net)?;
    net.check_input(inputs)?;
    let mut h = inputs.clone();
    for (k, layer) in net.layers().iter().enumerate() {
        if let Some(p) = Perturbation::draw(&spec.layers[k], h.rows(), h.cols(), rs) {
            h = p.apply(&h);
        }
        let act = layer.activation;
        h = layer.affine(&h).map(|v| act.apply(v));
    }
    Ok(h)
}

/// Mean batch loss of outputs against targets.
pub fn batch_loss(outputs: &Matrix, targets: &Matrix, loss: LossKind) -> Result<f64> {
    if outputs.shape() != targets.shape() {
        return Err(shape(
            "batch_loss",
            format!(
                "outputs {:?} vs targets {:?}",
                outputs.shape(),
                targets.shape()
            ),
        ));
    }
    if outputs.rows() == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut total = 0.0;
    for r in 0..outputs.rows() {
        total += loss.value(outputs.row(r), targets.row(r))?;
    }
    Ok(total / outputs.rows() as f64)
}

/// Mean batch loss under one joint noise draw.
pub fn noised_loss(
    net: &Network,
    batch: &Batch,
    spec: &NoiseSpec,
    loss: LossKind,
    rs: &mut RandomSource,
) -> Result<f64> {
    let out = noised_outputs(net, &batch.inputs, spec, rs)?;
    batch_loss(&out, &batch.targets, loss)
}
