use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::remainder::mean_stderr;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{gemm, Matrix, RandomSource, Trans};
use crate::network::{Activation, Network};
use crate::trainer::{argmax, evaluate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginPoint {
    pub predicted: usize,
    pub runner_up: usize,
    /// `h_L[predicted] - h_L[runner_up]`.
    pub gap: f64,
    pub j0_norm: f64,
    /// `gap / (sqrt 2 ||J_0||_F)`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub points: Vec<MarginPoint>,
}

fn top_two(h: &[f64]) -> (usize, usize) {
    let a = argmax(h);
    let b = (0..h.len())
        .filter(|&i| i != a)
        .fold(None, |best: Option<usize>, i| match best {
            Some(j) if h[j] >= h[i] => Some(j),
            _ => Some(i),
        })
        .expect("at least two classes");
    (a, b)
}

/// First-order lower bound on the input perturbation needed to change
/// each prediction.
pub fn margin_bounds(net: &Network, inputs: &Matrix) -> Result<MarginReport> {
    if net.output_dim() < 2 {
        return Err(Error::Argument("margins need at least two outputs".into()));
    }
    net.check_input(inputs)?;
    let points = (0..inputs.rows())
        .into_par_iter()
        .map(|b| {
            let trace = net.forward(inputs.row(b))?;
            let h = trace.output();
            let (predicted, runner_up) = top_two(h);
            let gap = h[predicted] - h[runner_up];
            let j0_norm = net.layer_jacobians(&trace)?.get(0).frobenius_sq().sqrt();
            let bound = if gap == 0.0 {
                0.0
            } else {
                gap / (std::f64::consts::SQRT_2 * j0_norm)
            };
            Ok(MarginPoint {
                predicted,
                runner_up,
                gap,
                j0_norm,
                bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MarginReport { points })
}

/// Collapses an all-identity network into one affine map `(W, b)`.
fn affine_equivalent(net: &Network) -> Result<(Matrix, Vec<f64>)> {
    if net
        .layers()
        .iter()
        .any(|l| l.activation != Activation::Identity)
    {
        return Err(Error::Unsupported(
            "exact flip distances need a linear network".into(),
        ));
    }
    let mut w = Matrix::identity(net.input_dim());
    let mut b = vec![0.0; net.input_dim()];
    for l in net.layers() {
        w = gemm(&l.weights, Trans::No, &w, Trans::No);
        b = l
            .weights
            .mat_vec(&b)?
            .iter()
            .zip(&l.bias)
            .map(|(x, y)| x + y)
            .collect();
    }
    Ok((w, b))
}

/// Euclidean distance from `x` to the boundary of its predicted class's
/// region for a linear classifier: `min_c (h_A - h_c) / ||w_A - w_c||`.
pub fn exact_flip_distance(net: &Network, x: &[f64]) -> Result<f64> {
    let (w, _) = affine_equivalent(net)?;
    let h = net.forward(x)?.output().to_vec();
    let a = argmax(&h);
    let mut best = f64::INFINITY;
    for c in (0..h.len()).filter(|&c| c != a) {
        let dist: f64 = w
            .row(a)
            .iter()
            .zip(w.row(c))
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        if dist > 0.0 {
            best = best.min((h[a] - h[c]) / dist);
        }
    }
    Ok(best)
}

/// Smallest perturbation found along `directions` random unit directions
/// that changes the prediction: a coarse scan to `max_radius` locates the
/// first flip, bisection refines it. `None` if no direction flips.
pub fn empirical_flip_distance(
    net: &Network,
    x: &[f64],
    directions: usize,
    max_radius: f64,
    rs: &mut RandomSource,
) -> Result<Option<f64>> {
    let predict = |z: &[f64]| -> Result<usize> { Ok(argmax(net.forward(z)?.output())) };
    let class = predict(x)?;
    let scan = 200;
    let mut best: Option<f64> = None;
    for _ in 0..directions {
        let mut u = rs.gaussian(x.len(), 1.0)?;
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= norm);
        let at = |t: f64| -> Vec<f64> { x.iter().zip(&u).map(|(a, d)| a + t * d).collect() };
        let limit = best.unwrap_or(max_radius).min(max_radius);
        let mut lo = 0.0;
        let mut hi = None;
        for s in 1..=scan {
            let t = limit * s as f64 / scan as f64;
            if predict(&at(t))? != class {
                hi = Some(t);
                break;
            }
            lo = t;
        }
        let Some(mut hi) = hi else { continue };
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if predict(&at(mid))? != class {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        best = Some(best.map_or(hi, |b: f64| b.min(hi)));
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub alpha: f64,
    pub accuracy: f64,
    pub stderr: f64,
}

/// Mean accuracy under input noise `N(0, alpha^2 I)`, one row per alpha.
/// Draw `d` at alpha index `j` uses `rs.split(j * draws + d)`.
pub fn sensitivity_sweep(
    net: &Network,
    data: &Dataset,
    alphas: &[f64],
    draws: usize,
    rs: &RandomSource,
) -> Result<Vec<SensitivityRow>> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::Argument("sensitivity needs a classification dataset".into()))?;
    if draws == 0 {
        return Err(Error::Argument("need at least one draw".into()));
    }
    let accuracy = |inputs: &Matrix| -> Result<f64> {
        let out = net.predict(inputs)?;
        let hits = labels
            .iter()
            .enumerate()
            .filter(|&(b, &y)| argmax(out.row(b)) == y)
            .count();
        Ok(hits as f64 / labels.len() as f64)
    };
    alphas
        .iter()
        .enumerate()
        .map(|(j, &alpha)| {
            if !(alpha >= 0.0) || !alpha.is_finite() {
                return Err(Error::Domain(format!(
                    "alpha must be finite and >= 0, got {alpha}"
                )));
            }
            if alpha == 0.0 {
                let acc = evaluate(net, data, crate::objective::LossKind::CrossEntropy)?
                    .accuracy
                    .expect("classification");
                return Ok(SensitivityRow {
                    alpha,
                    accuracy: acc,
                    stderr: 0.0,
                });
            }
            let accs = (0..draws)
                .into_par_iter()
                .map(|d| {
                    let mut r = rs.split((j * draws + d) as u64);
                    let noise = r.gaussian(data.inputs.data().len(), alpha)?;
                    let mut x = data.inputs.clone();
                    x.data_mut()
                        .iter_mut()
                        .zip(noise)
                        .for_each(|(v, e)| *v += e);
                    accuracy(&x)
                })
                .collect::<Result<Vec<_>>>()?;
            let (accuracy, stderr) = mean_stderr(&accs);
            Ok(SensitivityRow {
                alpha,
                accuracy,
                stderr: if draws < 2 { 0.0 } else { stderr },
            })
        })
        .collect()
}
