use super::{output_hessian, softmax, LossKind, RegBreakdown, RegVariant};
use crate::error::{Error, Result};
use crate::linalg::{gemm, Matrix, Trans};
use crate::network::Network;
use crate::noise::NoiseSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CeVariant {
    Full,
    Diag,
}

fn check_batch(inputs: &Matrix) -> Result<()> {
    if inputs.rows() == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    Ok(())
}

/// Sums `f(k, J_k, h_k, s_k)` over active layers and the batch, halved and
/// averaged, giving one contribution per activation.
fn accumulate(
    net: &Network,
    inputs: &Matrix,
    spec: &NoiseSpec,
    mut per_layer_term: impl FnMut(&[f64], &Matrix, &[f64]) -> f64,
) -> Result<Vec<f64>> {
    check_batch(inputs)?;
    spec.validate(net)?;
    let mut r = vec![0.0; net.depth()];
    if spec.is_silent() {
        return Ok(r);
    }
    let n = inputs.rows() as f64;
    for b in 0..inputs.rows() {
        let trace = net.forward(inputs.row(b))?;
        let js = net.layer_jacobians(&trace)?;
        for (k, noise) in spec.layers.iter().enumerate() {
            if !noise.is_active() {
                continue;
            }
            let s = noise.unit_variances(trace.activation(k));
            r[k] += 0.5 * per_layer_term(trace.output(), js.get(k), &s) / n;
        }
    }
    Ok(r)
}

/// Regression form: `1/2 E sum_k sum_j s_kj ||J_k[:, j]||^2`.
pub fn reg_mse(net: &Network, inputs: &Matrix, spec: &NoiseSpec) -> Result<RegBreakdown> {
    let r = accumulate(net, inputs, spec, |_, j, s| {
        let mut total = 0.0;
        for a in 0..j.rows() {
            for (v, w) in j.row(a).iter().zip(s) {
                total += w * v * v;
            }
        }
        total
    })?;
    Ok(RegBreakdown::from_layers(r, RegVariant::Mse))
}

/// Classification forms with the softmax Hessian. `Full` keeps the
/// off-diagonal Hessian terms; `Diag` weights squared Jacobian entries by
/// `p_a (1 - p_a)` only.
pub fn reg_ce(
    net: &Network,
    inputs: &Matrix,
    spec: &NoiseSpec,
    variant: CeVariant,
) -> Result<RegBreakdown> {
    match variant {
        CeVariant::Full => {
            let r = reg_trace_form(net, inputs, spec, |h| {
                output_hessian(LossKind::CrossEntropy, h)
            })?;
            Ok(RegBreakdown {
                variant: RegVariant::CeFull,
                ..r
            })
        }
        CeVariant::Diag => {
            let r = accumulate(net, inputs, spec, |out, j, s| {
                let p = softmax(out);
                let mut total = 0.0;
                for (a, pa) in p.iter().enumerate() {
                    let weight = pa * (1.0 - pa);
                    for (v, w) in j.row(a).iter().zip(s) {
                        total += weight * w * v * v;
                    }
                }
                total
            })?;
            Ok(RegBreakdown::from_layers(r, RegVariant::CeDiag))
        }
    }
}

/// Trace form `1/2 E sum_k Tr(J_k^T H J_k diag(s_k))` for an arbitrary
/// output Hessian `H(h_L)`. The variant tag is `CeFull`.
pub fn reg_trace_form(
    net: &Network,
    inputs: &Matrix,
    spec: &NoiseSpec,
    hessian: impl Fn(&[f64]) -> Matrix,
) -> Result<RegBreakdown> {
    let r = accumulate(net, inputs, spec, |out, j, s| {
        let h = hessian(out);
        let hj = gemm(&h, Trans::No, j, Trans::No);
        let g = gemm(j, Trans::Yes, &hj, Trans::No);
        s.iter().enumerate().map(|(i, w)| w * g[(i, i)]).sum()
    })?;
    Ok(RegBreakdown::from_layers(r, RegVariant::CeFull))
}

/// Regulariser for the given variant.
pub fn regulariser(
    net: &Network,
    inputs: &Matrix,
    spec: &NoiseSpec,
    variant: RegVariant,
) -> Result<RegBreakdown> {
    match variant {
        RegVariant::Mse => reg_mse(net, inputs, spec),
        RegVariant::CeFull => reg_ce(net, inputs, spec, CeVariant::Full),
        RegVariant::CeDiag => reg_ce(net, inputs, spec, CeVariant::Diag),
    }
}

/// Per-layer regulariser with each `J_k` replaced by the product of the
/// downstream weight matrices, i.e. the Jacobian of the network with every
/// nonlinearity removed. Cross-entropy uses the diagonal Hessian weights of
/// the actual network outputs.
pub fn linear_upper_bound(
    net: &Network,
    inputs: &Matrix,
    spec: &NoiseSpec,
    loss: LossKind,
) -> Result<Vec<f64>> {
    check_batch(inputs)?;
    spec.validate(net)?;
    if let Some(l) = net.layers().iter().find(|l| !l.activation.is_relu_like()) {
        return Err(Error::Unsupported(format!(
            "linear upper bound needs relu-like activations, found {}",
            l.activation
        )));
    }
    let depth = net.depth();
    // products[k] = W_{L-1} ... W_k
    let mut products = vec![Matrix::identity(net.output_dim()); depth + 1];
    for k in (0..depth).rev() {
        products[k] = gemm(
            &products[k + 1],
            Trans::No,
            &net.layers()[k].weights,
            Trans::No,
        );
    }
    let n = inputs.rows() as f64;
    let mut r = vec![0.0; depth];
    for b in 0..inputs.rows() {
        let trace = net.forward(inputs.row(b))?;
        let weights: Vec<f64> = match loss {
            LossKind::Mse => vec![1.0; net.output_dim()],
            LossKind::CrossEntropy => softmax(trace.output())
                .iter()
                .map(|p| p * (1.0 - p))
                .collect(),
        };
        for (k, noise) in spec.layers.iter().enumerate() {
            if !noise.is_active() {
                continue;
            }
            let s = noise.unit_variances(trace.activation(k));
            let j = &products[k];
            let mut total = 0.0;
            for (a, wa) in weights.iter().enumerate() {
                for (v, w) in j.row(a).iter().zip(&s) {
                    total += wa * w * v * v;
                }
            }
            r[k] += 0.5 * total / n;
        }
    }
    Ok(r)
}
