use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta, Task};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, RandomSource};

pub const DEFAULT_SINUSOID_FREQS: [f64; 10] =
    [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0];

/// Sum-of-tones regression task `lambda(z) = sum_i sin(2 pi r_i z + phi_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinusoidSpec {
    pub points: usize,
    pub freqs: Vec<f64>,
    /// Explicit phases; drawn from `seed` when absent.
    pub phases: Option<Vec<f64>>,
    pub z_range: [f64; 2],
    pub seed: u64,
    /// Place inputs on the uniform grid `lo + (hi - lo) i / points` instead of
    /// sampling them.
    pub grid: bool,
}

impl Default for SinusoidSpec {
    fn default() -> Self {
        SinusoidSpec {
            points: 1024,
            freqs: DEFAULT_SINUSOID_FREQS.to_vec(),
            phases: None,
            z_range: [0.0, 1.0],
            seed: 0,
            grid: false,
        }
    }
}

/// One phase per tone, uniform on `[0, 2 pi)`.
pub fn sinusoid_phases(count: usize, seed: u64) -> Vec<f64> {
    let mut rs = RandomSource::new(seed).split(0x5048_4153);
    (0..count)
        .map(|_| rs.uniform_range(0.0, 2.0 * PI))
        .collect()
}

pub fn sinusoid_target(z: f64, freqs: &[f64], phases: &[f64]) -> f64 {
    freqs
        .iter()
        .zip(phases)
        .map(|(r, p)| (2.0 * PI * r * z + p).sin())
        .sum()
}

pub fn gen_sinusoid(spec: &SinusoidSpec) -> Result<Dataset> {
    if spec.freqs.is_empty() {
        return Err(Error::Argument(
            "sinusoid needs at least one frequency".into(),
        ));
    }
    if spec.points == 0 {
        return Err(Error::Argument("sinusoid needs at least one point".into()));
    }
    let phases = match &spec.phases {
        Some(p) if p.len() != spec.freqs.len() => {
            return Err(Error::Argument(format!(
                "{} phases for {} frequencies",
                p.len(),
                spec.freqs.len()
            )))
        }
        Some(p) => p.clone(),
        None => sinusoid_phases(spec.freqs.len(), spec.seed),
    };
    let [lo, hi] = spec.z_range;
    let mut rs = RandomSource::new(spec.seed).split(0x5A);
    let z: Vec<f64> = (0..spec.points)
        .map(|i| {
            if spec.grid {
                lo + (hi - lo) * i as f64 / spec.points as f64
            } else {
                rs.uniform_range(lo, hi)
            }
        })
        .collect();
    let y: Vec<f64> = z
        .iter()
        .map(|&z| sinusoid_target(z, &spec.freqs, &phases))
        .collect();
    let ds = Dataset::new(
        Matrix::column_vector(&z),
        Matrix::column_vector(&y),
        Task::Regression,
    )?;
    Ok(ds.with_meta(DatasetMeta {
        source: "sinusoid".into(),
        phases: Some(phases),
        input_scale: None,
    }))
}

/// Gaussian clusters with centres spaced evenly on a circle of radius
/// `separation` in the first two input coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub cluster_std: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            classes: 3,
            per_class: 200,
            dim: 2,
            separation: 3.0,
            cluster_std: 1.0,
            seed: 0,
        }
    }
}

impl BlobSpec {
    pub fn center(&self, class: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        if self.dim == 1 {
            c[0] = self.separation * (class as f64 - (self.classes - 1) as f64 / 2.0);
        } else {
            let angle = 2.0 * PI * class as f64 / self.classes as f64;
            c[0] = self.separation * angle.cos();
            c[1] = self.separation * angle.sin();
        }
        c
    }
}

pub fn gen_blobs(spec: &BlobSpec) -> Result<Dataset> {
    if spec.classes < 2 {
        return Err(Error::Argument(format!(
            "blobs need >= 2 classes, got {}",
            spec.classes
        )));
    }
    if spec.dim == 0 || spec.per_class == 0 {
        return Err(Error::Argument(
            "blobs need dim >= 1 and per_class >= 1".into(),
        ));
    }
    let mut rs = RandomSource::new(spec.seed).split(0xB10B);
    let n = spec.classes * spec.per_class;
    let mut inputs = Matrix::zeros(n, spec.dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.classes {
        let center = spec.center(c);
        for i in 0..spec.per_class {
            let noise = rs.gaussian(spec.dim, spec.cluster_std)?;
            let row = inputs.row_mut(c * spec.per_class + i);
            for ((v, m), e) in row.iter_mut().zip(&center).zip(noise) {
                *v = m + e;
            }
            labels.push(c);
        }
    }
    Ok(
        Dataset::from_labels(inputs, &labels, spec.classes)?.with_meta(DatasetMeta {
            source: "blobs".into(),
            ..DatasetMeta::default()
        }),
    )
}
