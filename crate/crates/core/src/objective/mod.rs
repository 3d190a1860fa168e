//! Losses, output Hessians and the explicit noise regulariser
//! `R = 1/2 E_x sum_k Tr(J_k^T H_L J_k diag(s_k))`, where `s_k` holds the
//! per-unit injected variances at activation `k`.

pub mod loss;
mod regulariser;

use serde::{Deserialize, Serialize};

pub use loss::{entropy, log_softmax, mse_loss, softmax, softmax_ce, LossKind};
pub use regulariser::{
    linear_upper_bound, reg_ce, reg_mse, reg_trace_form, regulariser, CeVariant,
};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Which closed form of the regulariser to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegVariant {
    /// `H_L = I`: squared Frobenius norms of the Jacobians.
    Mse,
    /// Full trace with the softmax Hessian.
    CeFull,
    /// Diagonal of the softmax Hessian only.
    CeDiag,
}

impl RegVariant {
    /// MSE pairs with the identity form; cross-entropy defaults to the
    /// diagonal form.
    pub fn default_for(loss: LossKind) -> Self {
        match loss {
            LossKind::Mse => RegVariant::Mse,
            LossKind::CrossEntropy => RegVariant::CeDiag,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegVariant::Mse => "mse",
            RegVariant::CeFull => "ce_full",
            RegVariant::CeDiag => "ce_diag",
        }
    }
}

impl std::str::FromStr for RegVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(RegVariant::Mse),
            "ce_full" | "full" => Ok(RegVariant::CeFull),
            "ce_diag" | "diag" => Ok(RegVariant::CeDiag),
            other => Err(Error::Argument(format!(
                "unknown regulariser variant `{other}`"
            ))),
        }
    }
}

/// Regulariser value with its per-activation contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegBreakdown {
    pub total: f64,
    /// `r_k` for `k = 0 .. L`.
    pub per_layer: Vec<f64>,
    pub variant: RegVariant,
}

impl RegBreakdown {
    pub(crate) fn from_layers(per_layer: Vec<f64>, variant: RegVariant) -> Self {
        RegBreakdown {
            total: per_layer.iter().sum(),
            per_layer,
            variant,
        }
    }
}

/// Softmax cross-entropy Hessian with respect to the logits:
/// `H_ii = p_i (1 - p_i)`, `H_ij = -p_i p_j`.
pub fn ce_hessian(p: &[f64]) -> Result<Matrix> {
    if p.is_empty() {
        return Err(Error::Domain("empty probability vector".into()));
    }
    if p.iter().any(|&v| !(v >= 0.0) || v > 1.0) {
        return Err(Error::Domain(format!("probabilities out of [0, 1]: {p:?}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("probabilities sum to {sum}, not 1")));
    }
    let n = p.len();
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] = if i == j {
                p[i] * (1.0 - p[j])
            } else {
                -p[i] * p[j]
            };
        }
    }
    Ok(h)
}

/// `H_L` for one network output.
pub fn output_hessian(loss: LossKind, h_l: &[f64]) -> Matrix {
    match loss {
        LossKind::Mse => Matrix::identity(h_l.len()),
        LossKind::CrossEntropy => ce_hessian(&softmax(h_l)).expect("softmax is a distribution"),
    }
}
