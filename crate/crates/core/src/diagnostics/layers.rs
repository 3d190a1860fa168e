use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{Activation, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerStat {
    /// Weight layer index.
    pub layer: usize,
    /// Batch mean of `||W~_k||_F^2`.
    pub masked_norm_sq: f64,
    pub norm_sq: f64,
    pub trace: f64,
}

/// Which slices of `W_k` an inactive unit zeroes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskOrientation {
    /// Row `i` when output unit `i` of the layer is inactive.
    #[default]
    Rows,
    /// Column `j` when the unit feeding input `j` is inactive.
    Columns,
}

/// Masked-weight statistics for every square hidden ReLU layer. Each
/// example zeroes the rows of units it leaves inactive; squared norms are
/// averaged over the batch.
pub fn layer_stats(net: &Network, inputs: &Matrix) -> Result<Vec<LayerStat>> {
    layer_stats_oriented(net, inputs, MaskOrientation::Rows)
}

/// [`layer_stats`] with a choice of mask orientation. Under `Columns` the
/// first layer's inputs are raw data and count as always active.
pub fn layer_stats_oriented(
    net: &Network,
    inputs: &Matrix,
    orientation: MaskOrientation,
) -> Result<Vec<LayerStat>> {
    if inputs.rows() == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    let hidden = &net.layers()[..net.depth() - 1];
    if let Some((i, l)) = hidden
        .iter()
        .enumerate()
        .find(|(_, l)| l.activation != Activation::Relu)
    {
        return Err(Error::Unsupported(format!(
            "layer statistics need relu hidden layers; layer {i} is {}",
            l.activation
        )));
    }
    let square: Vec<usize> = (0..hidden.len())
        .filter(|&i| hidden[i].weights.is_square())
        .collect();
    if square.is_empty() {
        log::warn!("network has no square hidden layers; layer statistics are empty");
        return Ok(Vec::new());
    }
    let trace = net.forward_batch(inputs)?;
    let n = inputs.rows() as f64;
    Ok(square
        .into_iter()
        .map(|i| {
            let w = &hidden[i].weights;
            let slice_norms: Vec<f64> = match orientation {
                MaskOrientation::Rows => (0..w.rows())
                    .map(|r| w.row(r).iter().map(|v| v * v).sum())
                    .collect(),
                MaskOrientation::Columns => (0..w.cols())
                    .map(|c| w.column(c).iter().map(|v| v * v).sum())
                    .collect(),
            };
            let total: f64 = match (orientation, i) {
                (MaskOrientation::Columns, 0) => slice_norms.iter().sum::<f64>() * n,
                _ => {
                    let z = match orientation {
                        MaskOrientation::Rows => &trace.pre[i],
                        MaskOrientation::Columns => &trace.pre[i - 1],
                    };
                    (0..z.rows())
                        .map(|b| {
                            z.row(b)
                                .iter()
                                .zip(&slice_norms)
                                .filter(|(&zv, _)| zv > 0.0)
                                .map(|(_, sn)| sn)
                                .sum::<f64>()
                        })
                        .sum()
                }
            };
            LayerStat {
                layer: i,
                masked_norm_sq: total / n,
                norm_sq: w.frobenius_sq(),
                trace: w.trace(),
            }
        })
        .collect())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either series is constant or the lengths differ or are below 2.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman correlation between layer index and masked norm.
pub fn striation(stats: &[LayerStat]) -> Option<f64> {
    let k: Vec<f64> = stats.iter().map(|s| s.layer as f64).collect();
    let v: Vec<f64> = stats.iter().map(|s| s.masked_norm_sq).collect();
    spearman(&k, &v)
}
