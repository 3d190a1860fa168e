use serde::{Deserialize, Serialize};

use super::remainder::mean_stderr;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::linalg::{dot, RandomSource};
use crate::network::Network;
use crate::objective::LossKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimate {
    pub estimate: f64,
    /// NaN for a single probe.
    pub stderr: f64,
    pub probes: usize,
    pub step: f64,
}

/// The default finite-difference step, `1e-4 (1 + ||theta||_inf)`.
pub fn default_step(theta: &[f64]) -> f64 {
    let inf = theta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-4 * (1.0 + inf)
}

/// Hutchinson estimate of `Tr H` for the Hessian of a function whose
/// gradient is `grad`, with `Hv` from central differences of `grad`.
pub fn hutchinson(
    mut grad: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    theta: &[f64],
    probes: usize,
    step: f64,
    rs: &mut RandomSource,
) -> Result<TraceEstimate> {
    if probes == 0 {
        return Err(Error::Argument("need at least one probe".into()));
    }
    if !(step > 0.0) {
        return Err(Error::Argument(format!("step must be > 0, got {step}")));
    }
    let mut samples = Vec::with_capacity(probes);
    let mut shifted = theta.to_vec();
    for _ in 0..probes {
        let v = rs.rademacher(theta.len());
        for ((s, t), vi) in shifted.iter_mut().zip(theta).zip(&v) {
            *s = t + step * vi;
        }
        let plus = grad(&shifted)?;
        for ((s, t), vi) in shifted.iter_mut().zip(theta).zip(&v) {
            *s = t - step * vi;
        }
        let minus = grad(&shifted)?;
        let hv: Vec<f64> = plus
            .iter()
            .zip(&minus)
            .map(|(a, b)| (a - b) / (2.0 * step))
            .collect();
        samples.push(dot(&v, &hv));
    }
    let (estimate, stderr) = mean_stderr(&samples);
    Ok(TraceEstimate {
        estimate,
        stderr,
        probes,
        step,
    })
}

fn loss_gradient<'a>(
    net: &Network,
    batch: &'a Batch,
    loss: LossKind,
) -> impl FnMut(&[f64]) -> Result<Vec<f64>> + 'a {
    let mut probe = net.clone();
    move |theta| {
        probe.set_params(theta)?;
        Ok(probe.param_gradient(batch, loss)?.1.flatten())
    }
}

/// Trace of the parameter Hessian of the mean batch loss.
pub fn hessian_trace(
    net: &Network,
    batch: &Batch,
    loss: LossKind,
    probes: usize,
    rs: &mut RandomSource,
) -> Result<TraceEstimate> {
    let theta = net.params();
    let step = default_step(&theta);
    hessian_trace_with_step(net, batch, loss, probes, step, rs)
}

pub fn hessian_trace_with_step(
    net: &Network,
    batch: &Batch,
    loss: LossKind,
    probes: usize,
    step: f64,
    rs: &mut RandomSource,
) -> Result<TraceEstimate> {
    hutchinson(
        loss_gradient(net, batch, loss),
        &net.params(),
        probes,
        step,
        rs,
    )
}

/// Exact-up-to-differencing trace from every diagonal Hessian entry.
pub fn fd_hessian_trace(net: &Network, batch: &Batch, loss: LossKind, step: f64) -> Result<f64> {
    let theta = net.params();
    let mut grad = loss_gradient(net, batch, loss);
    let mut total = 0.0;
    let mut shifted = theta.clone();
    for i in 0..theta.len() {
        shifted[i] = theta[i] + step;
        let plus = grad(&shifted)?[i];
        shifted[i] = theta[i] - step;
        let minus = grad(&shifted)?[i];
        shifted[i] = theta[i];
        total += (plus - minus) / (2.0 * step);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::network::{Activation, Init, Layer};

    #[test]
    fn quadratic_hook_returns_parameter_count() {
        let theta: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        for step in [1e-3, 1e-4, 1e-5] {
            let est = hutchinson(
                |t| Ok(t.to_vec()),
                &theta,
                8,
                step * (1.0 + 3.0),
                &mut RandomSource::new(1),
            )
            .unwrap();
            assert!((est.estimate - 37.0).abs() < 1e-6 * 37.0, "{est:?}");
        }
    }

    #[test]
    fn quadratic_net_trace_is_step_independent() {
        let net = Network::new(vec![Layer {
            weights: Matrix::from_rows(&[[0.5, -1.0, 2.0]]).unwrap(),
            bias: vec![0.1],
            activation: Activation::Identity,
        }])
        .unwrap();
        let batch = Batch::new(
            Matrix::from_rows(&[[1.0, 2.0, -1.0], [0.5, 0.0, 3.0]]).unwrap(),
            Matrix::from_rows(&[[1.0], [-2.0]]).unwrap(),
        )
        .unwrap();
        let scale = default_step(&net.params()) / 1e-4;
        let values: Vec<f64> = [1e-3, 1e-4, 1e-5]
            .iter()
            .map(|h| {
                hessian_trace_with_step(
                    &net,
                    &batch,
                    LossKind::Mse,
                    16,
                    h * scale,
                    &mut RandomSource::new(3),
                )
                .unwrap()
                .estimate
            })
            .collect();
        for v in &values[1..] {
            assert!((v - values[0]).abs() <= 1e-6 * values[0].abs());
        }
    }

    #[test]
    fn single_layer_linear_trace_is_mean_squared_norm_plus_bias() {
        // L = 1/2 (y - w.x - b)^2 has Hessian [x; 1][x; 1]^T per example.
        let net = Network::new(vec![Layer {
            weights: Matrix::from_rows(&[[0.3, 0.7]]).unwrap(),
            bias: vec![0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let batch = Batch::new(
            Matrix::from_rows(&[[1.0, 2.0]]).unwrap(),
            Matrix::from_rows(&[[0.5]]).unwrap(),
        )
        .unwrap();
        let est =
            hessian_trace(&net, &batch, LossKind::Mse, 64, &mut RandomSource::new(0)).unwrap();
        assert!((est.estimate - 6.0).abs() <= 3.0 * est.stderr, "{est:?}");
        assert!((fd_hessian_trace(&net, &batch, LossKind::Mse, 1e-4).unwrap() - 6.0).abs() < 1e-8);
    }

    #[test]
    fn probe_estimate_agrees_with_brute_force() {
        let net = Network::random(
            &[3, 3, 2],
            Activation::Sigmoid,
            Init::Uniform,
            &mut RandomSource::new(5),
        )
        .unwrap();
        assert_eq!(net.param_count(), 20);
        let mut rs = RandomSource::new(6);
        let batch = Batch::new(
            Matrix::from_vec(8, 3, rs.gaussian(24, 1.0).unwrap()).unwrap(),
            Matrix::from_vec(8, 2, rs.gaussian(16, 1.0).unwrap()).unwrap(),
        )
        .unwrap();
        let exact = fd_hessian_trace(&net, &batch, LossKind::Mse, 1e-4).unwrap();
        let est = hessian_trace(&net, &batch, LossKind::Mse, 64, &mut rs).unwrap();
        assert!(
            (est.estimate - exact).abs() <= 3.0 * est.stderr,
            "{est:?} vs {exact}"
        );
    }

    #[test]
    fn zero_probes_is_an_error() {
        assert!(hutchinson(
            |t| Ok(t.to_vec()),
            &[1.0],
            0,
            1e-4,
            &mut RandomSource::new(0)
        )
        .is_err());
    }
}
