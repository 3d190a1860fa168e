use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::linalg::RandomSource;
use crate::network::Architecture;
use crate::noise::{batch_loss, noised_loss, NoiseMode, NoiseSpec};
use crate::objective::{LossKind, RegVariant};
use crate::trainer::batch_regulariser;

/// Monte-Carlo split of the noised loss into `L + R + E[C]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainderEstimate {
    pub regulariser: f64,
    /// Mean noised loss over the draws.
    pub noised_mean: f64,
    pub clean: f64,
    /// `noised_mean - regulariser - clean`.
    pub remainder: f64,
    /// Standard error of `noised_mean`.
    pub stderr: f64,
    pub draws: usize,
}

/// Sample mean and standard error of the mean.
pub(crate) fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// The regulariser variant matched to a loss, using the full softmax Hessian.
fn faithful_variant(loss: LossKind) -> RegVariant {
    match loss {
        LossKind::Mse => RegVariant::Mse,
        LossKind::CrossEntropy => RegVariant::CeFull,
    }
}

/// Estimates `E[C]` from `draws` independent joint noise draws. Draw `i`
/// uses `rs.split(i)`, so the result does not depend on scheduling.
pub fn estimate_remainder(
    net: &crate::network::Network,
    batch: &Batch,
    spec: &NoiseSpec,
    loss: LossKind,
    draws: usize,
    rs: &RandomSource,
) -> Result<RemainderEstimate> {
    if draws < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 draws, got {draws}"
        )));
    }
    spec.validate(net)?;
    let clean = batch_loss(&net.predict(&batch.inputs)?, &batch.targets, loss)?;
    let regulariser = batch_regulariser(net, &batch.inputs, spec, faithful_variant(loss))?.total;
    let deviations = (0..draws)
        .into_par_iter()
        .map(|i| noised_loss(net, batch, spec, loss, &mut rs.split(i as u64)).map(|v| v - clean))
        .collect::<Result<Vec<f64>>>()?;
    let (mean_dev, stderr) = mean_stderr(&deviations);
    Ok(RemainderEstimate {
        regulariser,
        noised_mean: clean + mean_dev,
        clean,
        remainder: mean_dev - regulariser,
        stderr,
        draws,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceConfig {
    pub batch_size: usize,
    pub draws: usize,
    pub mode: NoiseMode,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for DominanceConfig {
    fn default() -> Self {
        DominanceConfig {
            batch_size: 32,
            draws: 1000,
            mode: NoiseMode::Additive,
            loss: LossKind::Mse,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceRow {
    pub sigma2: f64,
    pub init: usize,
    pub regulariser: f64,
    pub remainder: f64,
    pub stderr: f64,
    /// `|E[C]| / R`; `None` when `R = 0`.
    pub ratio: Option<f64>,
    pub degenerate: bool,
}

impl DominanceRow {
    pub fn dominated(&self) -> bool {
        !self.degenerate && self.regulariser > self.remainder.abs()
    }
}

/// One remainder estimate per `(sigma^2, init)`, with noise at every
/// noisable activation. Each init draws its own network and batch; noise
/// draws are independent across `sigma^2`.
pub fn dominance_scan(
    arch: &Architecture,
    dataset: &Dataset,
    sigmas: &[f64],
    inits: usize,
    cfg: &DominanceConfig,
) -> Result<Vec<DominanceRow>> {
    if cfg.batch_size == 0 {
        return Err(Error::Argument("batch size must be >= 1".into()));
    }
    let root = RandomSource::new(cfg.seed);
    let mut rows = Vec::with_capacity(sigmas.len() * inits);
    for init in 0..inits {
        let mut init_rs = root.split(init as u64);
        let net = arch.build(&mut init_rs)?;
        let mut idx: Vec<usize> = (0..dataset.len()).collect();
        init_rs.shuffle(&mut idx);
        idx.truncate(cfg.batch_size);
        let batch = dataset.batch(&idx);
        for (j, &sigma2) in sigmas.iter().enumerate() {
            let spec = NoiseSpec::uniform(net.depth(), cfg.mode, sigma2)?;
            let draw_rs = init_rs.split(1 + j as u64);
            let est = estimate_remainder(&net, &batch, &spec, cfg.loss, cfg.draws, &draw_rs)?;
            let degenerate = est.regulariser == 0.0;
            rows.push(DominanceRow {
                sigma2,
                init,
                regulariser: est.regulariser,
                remainder: est.remainder,
                stderr: est.stderr,
                ratio: (!degenerate).then(|| est.remainder.abs() / est.regulariser),
                degenerate,
            });
        }
    }
    rows.sort_by(|a, b| a.sigma2.total_cmp(&b.sigma2).then(a.init.cmp(&b.init)));
    Ok(rows)
}

/// Fraction of non-degenerate rows where `R > |E[C]|`.
pub fn dominance_fraction(rows: &[DominanceRow]) -> Option<f64> {
    let live: Vec<_> = rows.iter().filter(|r| !r.degenerate).collect();
    if live.is_empty() {
        return None;
    }
    Some(live.iter().filter(|r| r.dominated()).count() as f64 / live.len() as f64)
}
