use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

impl LossKind {
    /// Per-example loss of output `h` against target `y` (one-hot for CE).
    pub fn value(self, h: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            LossKind::Mse => mse_loss(h, y),
            LossKind::CrossEntropy => softmax_ce(h, y),
        }
    }

    /// Gradient of the per-example loss with respect to `h`.
    pub fn output_gradient(self, h: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_len("output_gradient", h, y)?;
        match self {
            LossKind::Mse => Ok(h.iter().zip(y).map(|(a, b)| a - b).collect()),
            LossKind::CrossEntropy => {
                one_hot_class(y)?;
                Ok(softmax(h).iter().zip(y).map(|(p, t)| p - t).collect())
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "cross_entropy" | "ce" | "crossentropy" => Ok(LossKind::CrossEntropy),
            other => Err(Error::Argument(format!("unknown loss `{other}`"))),
        }
    }
}

fn check_len(op: &'static str, h: &[f64], y: &[f64]) -> Result<()> {
    if h.len() != y.len() {
        return Err(shape(
            op,
            format!("output has {} entries, target has {}", h.len(), y.len()),
        ));
    }
    Ok(())
}

/// `0.5 * ||y - h||^2`.
pub fn mse_loss(h: &[f64], y: &[f64]) -> Result<f64> {
    check_len("mse_loss", h, y)?;
    Ok(0.5 * h.iter().zip(y).map(|(a, b)| (b - a) * (b - a)).sum::<f64>())
}

pub fn log_softmax(h: &[f64]) -> Vec<f64> {
    let max = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + h.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    h.iter().map(|v| v - lse).collect()
}

pub fn softmax(h: &[f64]) -> Vec<f64> {
    let max = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = h.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the hot entry of a one-hot vector.
pub fn one_hot_class(y: &[f64]) -> Result<usize> {
    let mut class = None;
    for (i, &v) in y.iter().enumerate() {
        if v == 1.0 {
            if class.is_some() {
                return Err(Error::Argument("target has more than one hot entry".into()));
            }
            class = Some(i);
        } else if v != 0.0 {
            return Err(Error::Argument(format!(
                "target entry {i} is {v}, expected 0 or 1"
            )));
        }
    }
    class.ok_or_else(|| Error::Argument("target has no hot entry".into()))
}

/// `-log softmax(h)[class]` for a one-hot target.
pub fn softmax_ce(h: &[f64], y: &[f64]) -> Result<f64> {
    check_len("softmax_ce", h, y)?;
    let class = one_hot_class(y)?;
    Ok(-log_softmax(h)[class])
}

/// Shannon entropy in nats; zero-probability entries contribute nothing.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, -2.0], &[1.0, -2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0], &[2.0]).unwrap(), 2.0);
        assert!(mse_loss(&[0.0], &[2.0, 1.0]).is_err());
    }

    #[test]
    fn mse_gradient_matches_finite_difference() {
        let h = [0.3, -1.2, 2.0];
        let y = [1.0, 0.5, -0.25];
        let g = LossKind::Mse.output_gradient(&h, &y).unwrap();
        for i in 0..3 {
            let mut hp = h;
            let mut hm = h;
            hp[i] += 1e-6;
            hm[i] -= 1e-6;
            let fd = (mse_loss(&hp, &y).unwrap() - mse_loss(&hm, &y).unwrap()) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        for c in 0..3 {
            let mut y = [0.0; 3];
            y[c] = 1.0;
            assert!((softmax_ce(&[0.0; 3], &y).unwrap() - 3f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn ce_is_shift_invariant() {
        let h = [0.3, -1.7, 4.2, 0.0];
        let y = [0.0, 0.0, 1.0, 0.0];
        let base = softmax_ce(&h, &y).unwrap();
        for c in [-50.0, -1.0, 3.5, 700.0] {
            let shifted: Vec<f64> = h.iter().map(|v| v + c).collect();
            assert!((softmax_ce(&shifted, &y).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn ce_rejects_non_one_hot() {
        assert!(matches!(
            softmax_ce(&[0.0, 0.0], &[0.5, 0.5]),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            softmax_ce(&[0.0, 0.0], &[0.0, 0.0]),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            softmax_ce(&[0.0, 0.0], &[1.0, 1.0]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn entropy_of_uniform() {
        assert!((entropy(&[1.0 / 3.0; 3]) - 3f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
    }
}
