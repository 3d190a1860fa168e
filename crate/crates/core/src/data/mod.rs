//! Datasets, synthetic task generators, file loaders and mini-batching.

mod idx;
mod synthetic;
mod table;

use serde::{Deserialize, Serialize};

pub use idx::{load_idx, write_idx};
pub use synthetic::{
    gen_blobs, gen_sinusoid, sinusoid_phases, sinusoid_target, BlobSpec, SinusoidSpec,
    DEFAULT_SINUSOID_FREQS,
};
pub use table::{load_csv, CsvSpec};

use crate::error::{shape, Error, Result};
use crate::linalg::{Matrix, RandomSource};
use crate::objective::loss::one_hot_class;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Task {
    Regression,
    Classification { classes: usize },
}

/// Provenance and preprocessing notes carried alongside a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    /// Sinusoid phases, when the targets came from [`gen_sinusoid`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<f64>>,
    /// Inputs were divided by this value on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_scale: Option<f64>,
}

/// `N` examples; classification targets are stored one-hot.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub task: Task,
    pub meta: DatasetMeta,
}

/// A mini-batch of input rows with matching target rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Matrix,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(shape(
                "Batch::new",
                format!(
                    "{} input rows, {} target rows",
                    inputs.rows(),
                    targets.rows()
                ),
            ));
        }
        Ok(Batch { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Matrix, task: Task) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::Argument("dataset needs at least one example".into()));
        }
        if inputs.rows() != targets.rows() {
            return Err(shape(
                "Dataset::new",
                format!(
                    "{} input rows, {} target rows",
                    inputs.rows(),
                    targets.rows()
                ),
            ));
        }
        if let Task::Classification { classes } = task {
            if targets.cols() != classes {
                return Err(shape(
                    "Dataset::new",
                    format!("{} target columns for {classes} classes", targets.cols()),
                ));
            }
            for r in 0..targets.rows() {
                one_hot_class(targets.row(r))
                    .map_err(|e| Error::Argument(format!("example {r}: {e}")))?;
            }
        }
        Ok(Dataset {
            inputs,
            targets,
            task,
            meta: DatasetMeta::default(),
        })
    }

    pub fn from_labels(inputs: Matrix, labels: &[usize], classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Argument(format!("need >= 2 classes, got {classes}")));
        }
        let mut targets = Matrix::zeros(labels.len(), classes);
        for (r, &c) in labels.iter().enumerate() {
            if c >= classes {
                return Err(Error::Argument(format!(
                    "label {c} at example {r} is out of range for {classes} classes"
                )));
            }
            targets[(r, c)] = 1.0;
        }
        Dataset::new(inputs, targets, Task::Classification { classes })
    }

    pub fn with_meta(mut self, meta: DatasetMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn target_dim(&self) -> usize {
        self.targets.cols()
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.task, Task::Classification { .. })
    }

    /// Class index per example (classification only).
    pub fn labels(&self) -> Option<Vec<usize>> {
        match self.task {
            Task::Classification { .. } => Some(
                (0..self.len())
                    .map(|r| one_hot_class(self.targets.row(r)).expect("validated"))
                    .collect(),
            ),
            Task::Regression => None,
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select_rows(indices),
            targets: self.targets.select_rows(indices),
        }
    }

    pub fn full_batch(&self) -> Batch {
        Batch {
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
        }
    }

    /// The mini-batches of one epoch, in order.
    pub fn batches(&self, size: usize, seed: u64, epoch: u64) -> Result<Vec<Batch>> {
        Ok(batch_indices(self.len(), size, seed, epoch)?
            .iter()
            .map(|idx| self.batch(idx))
            .collect())
    }
}

/// Seeded permutation of `0..n` cut into chunks of `size`; the final short
/// chunk is kept.
pub fn batch_indices(n: usize, size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if size == 0 {
        return Err(Error::Argument("batch size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    RandomSource::new(seed).split(epoch).shuffle(&mut order);
    Ok(order.chunks(size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn oversized_batch_is_one_permuted_batch() {
        let b = batch_indices(10, 64, 3, 0).unwrap();
        assert_eq!(b.len(), 1);
        let mut sorted = b[0].clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_and_epoch_same_order() {
        assert_eq!(
            batch_indices(100, 7, 5, 2).unwrap(),
            batch_indices(100, 7, 5, 2).unwrap()
        );
        assert_ne!(
            batch_indices(100, 7, 5, 2).unwrap(),
            batch_indices(100, 7, 5, 3).unwrap()
        );
    }

    #[test]
    fn zero_batch_size_is_rejected() {
        assert!(batch_indices(4, 0, 0, 0).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(Matrix::zeros(0, 2), Matrix::zeros(0, 1), Task::Regression).is_err());
        assert!(Dataset::new(Matrix::zeros(2, 2), Matrix::zeros(3, 1), Task::Regression).is_err());
        assert!(Dataset::from_labels(Matrix::zeros(2, 1), &[0, 2], 2).is_err());
        let ds = Dataset::from_labels(Matrix::zeros(3, 1), &[0, 1, 1], 2).unwrap();
        assert_eq!(ds.labels().unwrap(), vec![0, 1, 1]);
    }

    proptest! {
        #[test]
        fn batches_partition_the_dataset(n in 1usize..300, size in 1usize..50, seed in any::<u64>(), epoch in 0u64..5) {
            let b = batch_indices(n, size, seed, epoch).unwrap();
            let mut all: Vec<usize> = b.iter().flatten().copied().collect();
            prop_assert!(b.iter().take(b.len() - 1).all(|c| c.len() == size));
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
