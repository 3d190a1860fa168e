//! Reliability bins, expected calibration error and predictive entropy.
//!
//! Bins split `(0, 1]` into `M` equal half-open intervals `(lo, hi]`; a
//! confidence of exactly 0 falls in the first bin. Empty bins contribute
//! nothing to the ECE.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{io_error, Error, Result};
use crate::network::Network;
use crate::objective::{entropy, softmax};
use crate::trainer::argmax;

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub confidence: f64,
    pub predicted: usize,
    pub label: usize,
    /// Full predictive distribution, when available.
    pub probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean confidence; 0 for an empty bin.
    pub confidence: f64,
    /// Fraction correct; 0 for an empty bin.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<ReliabilityBin>,
    pub ece: f64,
    pub accuracy: f64,
    pub mean_confidence: f64,
    /// Per-point entropies, for points carrying a distribution.
    pub entropies: Vec<f64>,
    pub mean_entropy: Option<f64>,
}

fn bin_index(confidence: f64, bins: usize) -> usize {
    ((confidence * bins as f64).ceil() as usize).clamp(1, bins) - 1
}

pub fn calibrate(predictions: &[Prediction], bins: usize) -> Result<CalibrationReport> {
    if predictions.is_empty() {
        return Err(Error::Argument("no predictions to calibrate".into()));
    }
    if bins == 0 {
        return Err(Error::Argument("need at least one bin".into()));
    }
    if let Some(p) = predictions
        .iter()
        .find(|p| !(0.0..=1.0).contains(&p.confidence))
    {
        return Err(Error::Domain(format!(
            "confidence {} outside [0, 1]",
            p.confidence
        )));
    }
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    for p in predictions {
        let m = bin_index(p.confidence, bins);
        count[m] += 1;
        conf[m] += p.confidence;
        hits[m] += usize::from(p.predicted == p.label);
    }
    let n = predictions.len() as f64;
    let mut ece = 0.0;
    let table = (0..bins)
        .map(|m| {
            let (c, a) = if count[m] == 0 {
                (0.0, 0.0)
            } else {
                (conf[m] / count[m] as f64, hits[m] as f64 / count[m] as f64)
            };
            ece += count[m] as f64 / n * (a - c).abs();
            ReliabilityBin {
                lo: m as f64 / bins as f64,
                hi: (m + 1) as f64 / bins as f64,
                count: count[m],
                confidence: c,
                accuracy: a,
            }
        })
        .collect();
    let entropies: Vec<f64> = predictions
        .iter()
        .filter_map(|p| p.probs.as_deref().map(entropy))
        .collect();
    let mean_entropy =
        (!entropies.is_empty()).then(|| entropies.iter().sum::<f64>() / entropies.len() as f64);
    Ok(CalibrationReport {
        bins: table,
        ece,
        accuracy: hits.iter().sum::<usize>() as f64 / n,
        mean_confidence: conf.iter().sum::<f64>() / n,
        entropies,
        mean_entropy,
    })
}

/// Softmax predictions of a classifier on a labelled dataset.
pub fn predictions(net: &Network, data: &Dataset) -> Result<Vec<Prediction>> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::Argument("calibration needs a classification dataset".into()))?;
    let out = net.predict(&data.inputs)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(b, &label)| {
            let probs = softmax(out.row(b));
            let predicted = argmax(&probs);
            Prediction {
                confidence: probs[predicted],
                predicted,
                label,
                probs: Some(probs),
            }
        })
        .collect())
}

impl CalibrationReport {
    /// Reliability-diagram CSV: `bin, conf, acc, count`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin", "conf", "acc", "count"])?;
        for (m, b) in self.bins.iter().enumerate() {
            w.write_record([
                m.to_string(),
                b.confidence.to_string(),
                b.accuracy.to_string(),
                b.count.to_string(),
            ])?;
        }
        w.flush().map_err(io_error("<csv>"))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RandomSource;
    use proptest::prelude::*;

    fn preds(conf: f64, correct: usize, total: usize) -> Vec<Prediction> {
        (0..total)
            .map(|i| Prediction {
                confidence: conf,
                predicted: 0,
                label: usize::from(i >= correct),
                probs: None,
            })
            .collect()
    }

    #[test]
    fn perfectly_calibrated_single_bin() {
        let r = calibrate(&preds(0.8, 80, 100), 1).unwrap();
        assert!(r.ece.abs() < 1e-12);
    }

    #[test]
    fn two_bin_hand_example() {
        let mut p = preds(0.9, 35, 50);
        p.extend(preds(0.6, 30, 50));
        let r = calibrate(&p, DEFAULT_BINS).unwrap();
        assert_eq!(r.bins[8].count, 50);
        assert_eq!(r.bins[5].count, 50);
        assert!((r.ece - 0.1).abs() < 1e-12, "{}", r.ece);
    }

    #[test]
    fn uniform_distributions_have_log3_entropy() {
        let p = vec![
            Prediction {
                confidence: 1.0 / 3.0,
                predicted: 0,
                label: 1,
                probs: Some(vec![1.0 / 3.0; 3]),
            };
            4
        ];
        let r = calibrate(&p, 10).unwrap();
        for e in &r.entropies {
            assert!((e - 3f64.ln()).abs() < 1e-12);
        }
        assert!((r.mean_entropy.unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bin_edges() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.10001, 10), 1);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.5, 2), 0);
    }

    #[test]
    fn argument_and_domain_errors() {
        assert!(matches!(calibrate(&[], 10), Err(Error::Argument(_))));
        assert!(matches!(
            calibrate(&preds(0.5, 1, 1), 0),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            calibrate(&preds(1.5, 1, 1), 3),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn reliability_csv() {
        let r = calibrate(&preds(0.75, 75, 100), 2).unwrap();
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "bin,conf,acc,count\n0,0,0,0\n1,0.75,0.75,100\n"
        );
    }

    fn random_preds(seed: u64, n: usize) -> Vec<Prediction> {
        let mut rs = RandomSource::new(seed);
        (0..n)
            .map(|_| Prediction {
                confidence: rs.uniform(),
                predicted: (rs.next_u64() % 3) as usize,
                label: (rs.next_u64() % 3) as usize,
                probs: None,
            })
            .collect()
    }

    proptest! {
        #[test]
        fn ece_is_permutation_invariant(seed in any::<u64>(), n in 1usize..200, bins in 1usize..20) {
            let p = random_preds(seed, n);
            let mut q = p.clone();
            RandomSource::new(seed ^ 1).shuffle(&mut q);
            let a = calibrate(&p, bins).unwrap();
            let b = calibrate(&q, bins).unwrap();
            prop_assert!((a.ece - b.ece).abs() < 1e-12);
            prop_assert_eq!(a.bins.iter().map(|b| b.count).sum::<usize>(), n);
            prop_assert!((0.0..=1.0).contains(&a.ece));
        }

        #[test]
        fn single_bin_ece_is_accuracy_gap(seed in any::<u64>(), n in 1usize..200) {
            let r = calibrate(&random_preds(seed, n), 1).unwrap();
            prop_assert!((r.ece - (r.accuracy - r.mean_confidence).abs()).abs() < 1e-12);
        }

        #[test]
        fn merging_adjacent_bins_never_increases_contribution(seed in any::<u64>(), n in 1usize..200, half in 1usize..10) {
            let p = random_preds(seed, n);
            let fine = calibrate(&p, 2 * half).unwrap();
            let coarse = calibrate(&p, half).unwrap();
            prop_assert!(coarse.ece <= fine.ece + 1e-12);
        }
    }
}
