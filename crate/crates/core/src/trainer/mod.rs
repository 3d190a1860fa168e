//! Plain minibatch SGD in three modes: `baseline` (clean loss), `gni`
//! (loss under freshly drawn activation noise every step) and `explicit`
//! (clean loss plus the regulariser, differentiated through the Jacobians).

mod graph;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{io_error, Error, Result};
use crate::linalg::{Matrix, RandomSource};
use crate::network::{Gradient, Network};
use crate::noise::{batch_loss, NoiseSpec, Perturbation};
use crate::objective::{LossKind, RegBreakdown, RegVariant};

pub(crate) use graph::NetGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    #[default]
    Baseline,
    Gni,
    Explicit,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::Gni => "gni",
            TrainMode::Explicit => "explicit",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(TrainMode::Baseline),
            "gni" => Ok(TrainMode::Gni),
            "explicit" => Ok(TrainMode::Explicit),
            other => Err(Error::Argument(format!("unknown train mode `{other}`"))),
        }
    }
}

/// How the explicit-mode gradient of `L + R` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplicitGrad {
    /// Reverse mode through the Jacobian computation.
    #[default]
    Autodiff,
    /// Central differences over every parameter; tiny nets only.
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub loss: LossKind,
    /// Noise injected in `gni` mode, marginalised in `explicit` mode and
    /// used for the logged regulariser in every mode.
    pub noise: NoiseSpec,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Metric cadence in steps; 0 logs only the first and last step.
    pub eval_every: usize,
    /// Defaults to the loss's natural variant.
    pub reg_variant: Option<RegVariant>,
    pub explicit_grad: ExplicitGrad,
    /// Log `R` and its per-layer terms.
    pub log_regulariser: bool,
    /// Cap on the training examples used for logged metrics; 0 means all.
    pub metric_examples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Baseline,
            loss: LossKind::Mse,
            noise: NoiseSpec { layers: Vec::new() },
            learning_rate: 0.001,
            batch_size: 512,
            steps: 1000,
            seed: 0,
            eval_every: 100,
            reg_variant: None,
            explicit_grad: ExplicitGrad::Autodiff,
            log_regulariser: true,
            metric_examples: 0,
        }
    }
}

impl TrainConfig {
    pub fn variant(&self) -> RegVariant {
        self.reg_variant
            .unwrap_or_else(|| RegVariant::default_for(self.loss))
    }

    /// An empty noise spec is widened to a silent spec for `net`.
    pub fn resolved_noise(&self, net: &Network) -> NoiseSpec {
        if self.noise.layers.is_empty() {
            NoiseSpec::none(net.depth())
        } else {
            self.noise.clone()
        }
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Argument(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be >= 1".into()));
        }
        let compatible = matches!(
            (self.loss, self.variant()),
            (LossKind::Mse, RegVariant::Mse)
                | (
                    LossKind::CrossEntropy,
                    RegVariant::CeDiag | RegVariant::CeFull
                )
        );
        if !compatible {
            return Err(Error::Argument(format!(
                "regulariser variant {} does not match loss {}",
                self.variant().name(),
                self.loss
            )));
        }
        self.resolved_noise(net).validate(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub r_total: f64,
    pub r_layers: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricLog {
    pub rows: Vec<MetricRow>,
}

impl MetricLog {
    pub fn last(&self) -> Option<&MetricRow> {
        self.rows.last()
    }

    /// CSV with columns `step, train_loss, test_loss, R_total, r_0 .. r_{L-1}`.
    /// A missing test loss is written as an empty field.
    pub fn write_csv<W: Write>(&self, depth: usize, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "step".to_string(),
            "train_loss".into(),
            "test_loss".into(),
            "R_total".into(),
        ];
        header.extend((0..depth).map(|k| format!("r_{k}")));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                row.step.to_string(),
                row.train_loss.to_string(),
                row.test_loss.map_or_else(String::new, |v| v.to_string()),
                row.r_total.to_string(),
            ];
            rec.extend((0..depth).map(|k| row.r_layers.get(k).copied().unwrap_or(0.0).to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(io_error("<csv>"))?;
        Ok(())
    }

    pub fn save_csv(&self, depth: usize, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(io_error(path))?;
        self.write_csv(depth, std::io::BufWriter::new(file))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    /// Classification only.
    pub accuracy: Option<f64>,
}

/// Index of the largest entry, first on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Noise-free loss and, for classification data, accuracy.
pub fn evaluate(net: &Network, ds: &Dataset, loss: LossKind) -> Result<Evaluation> {
    let out = net.predict(&ds.inputs)?;
    let value = batch_loss(&out, &ds.targets, loss)?;
    let accuracy = ds.labels().map(|labels| {
        let hits = labels
            .iter()
            .enumerate()
            .filter(|&(b, &y)| argmax(out.row(b)) == y)
            .count();
        hits as f64 / labels.len() as f64
    });
    Ok(Evaluation {
        loss: value,
        accuracy,
    })
}

/// Regulariser of `net` on `inputs`, batched on the tape.
pub fn batch_regulariser(
    net: &Network,
    inputs: &Matrix,
    spec: &NoiseSpec,
    variant: RegVariant,
) -> Result<RegBreakdown> {
    net.check_input(inputs)?;
    spec.validate(net)?;
    if inputs.rows() == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut g = NetGraph::forward(net, inputs, &[]);
    let terms = g.regulariser(spec, variant);
    let per_layer = terms
        .iter()
        .map(|t| t.map_or(0.0, |v| g.tape.scalar(v)))
        .collect();
    Ok(RegBreakdown {
        total: terms.iter().flatten().map(|&v| g.tape.scalar(v)).sum(),
        per_layer,
        variant,
    })
}

/// Clean loss plus regulariser on one batch, with its gradient.
pub fn explicit_objective(
    net: &Network,
    inputs: &Matrix,
    targets: &Matrix,
    loss: LossKind,
    spec: &NoiseSpec,
    variant: RegVariant,
) -> Result<(f64, Gradient)> {
    net.check_input(inputs)?;
    let mut g = NetGraph::forward(net, inputs, &[]);
    let l = g.loss(targets, loss);
    let terms = g.regulariser(spec, variant);
    let root = match g.total(&terms) {
        Some(r) => g.tape.add(l, r),
        None => l,
    };
    Ok((g.tape.scalar(root), g.gradient(root)))
}

fn explicit_value(
    net: &Network,
    inputs: &Matrix,
    targets: &Matrix,
    loss: LossKind,
    spec: &NoiseSpec,
    variant: RegVariant,
) -> f64 {
    let mut g = NetGraph::forward(net, inputs, &[]);
    let l = g.loss(targets, loss);
    let terms = g.regulariser(spec, variant);
    let r: f64 = terms.iter().flatten().map(|&v| g.tape.scalar(v)).sum();
    g.tape.scalar(l) + r
}

/// Central-difference gradient of the explicit objective.
pub fn explicit_objective_fd(
    net: &Network,
    inputs: &Matrix,
    targets: &Matrix,
    loss: LossKind,
    spec: &NoiseSpec,
    variant: RegVariant,
    step: f64,
) -> Result<(f64, Gradient)> {
    net.check_input(inputs)?;
    let theta = net.params();
    let mut probe = net.clone();
    let mut flat = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let mut p = theta.clone();
        p[i] = theta[i] + step;
        probe.set_params(&p)?;
        let plus = explicit_value(&probe, inputs, targets, loss, spec, variant);
        p[i] = theta[i] - step;
        probe.set_params(&p)?;
        let minus = explicit_value(&probe, inputs, targets, loss, spec, variant);
        flat[i] = (plus - minus) / (2.0 * step);
    }
    let value = explicit_value(net, inputs, targets, loss, spec, variant);
    let mut grad_net = net.clone();
    grad_net.set_params(&flat)?;
    let grad = Gradient {
        weights: grad_net
            .layers()
            .iter()
            .map(|l| l.weights.clone())
            .collect(),
        biases: grad_net.layers().iter().map(|l| l.bias.clone()).collect(),
    };
    Ok((value, grad))
}

/// Trains without observing intermediate networks.
pub fn train(
    net: Network,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(Network, MetricLog)> {
    train_with_observer(net, train_set, test_set, cfg, |_, _| Ok(()))
}

/// Trains `net`, calling `observer(step, net)` at every metric tick.
pub fn train_with_observer(
    mut net: Network,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut observer: impl FnMut(usize, &Network) -> Result<()>,
) -> Result<(Network, MetricLog)> {
    cfg.validate(&net)?;
    net.check_input(&train_set.inputs)?;
    if train_set.target_dim() != net.output_dim() {
        return Err(Error::Argument(format!(
            "dataset targets have {} columns, network emits {}",
            train_set.target_dim(),
            net.output_dim()
        )));
    }
    let spec = cfg.resolved_noise(&net);
    let variant = cfg.variant();
    let root = RandomSource::new(cfg.seed);
    let shuffle_seed = root.split(0).next_u64();
    let mut noise_rs = root.split(1);
    let metric_inputs = if cfg.metric_examples > 0 && cfg.metric_examples < train_set.len() {
        let idx: Vec<usize> = (0..cfg.metric_examples).collect();
        train_set.inputs.select_rows(&idx)
    } else {
        train_set.inputs.clone()
    };

    let mut log = MetricLog::default();
    let record = |net: &Network, step: usize, log: &mut MetricLog| -> Result<()> {
        let train_loss = evaluate(net, train_set, cfg.loss)?.loss;
        let test_loss = match test_set {
            Some(ts) => Some(evaluate(net, ts, cfg.loss)?.loss),
            None => None,
        };
        let reg = if cfg.log_regulariser {
            batch_regulariser(net, &metric_inputs, &spec, variant)?
        } else {
            RegBreakdown::from_layers(vec![0.0; net.depth()], variant)
        };
        log.rows.push(MetricRow {
            step,
            train_loss,
            test_loss,
            r_total: reg.total,
            r_layers: reg.per_layer,
        });
        Ok(())
    };

    record(&net, 0, &mut log)?;
    observer(0, &net)?;
    let mut epoch = 0u64;
    let mut queue = Vec::new().into_iter();
    for step in 1..=cfg.steps {
        let batch = match queue.next() {
            Some(b) => b,
            None => {
                queue = train_set
                    .batches(cfg.batch_size, shuffle_seed, epoch)?
                    .into_iter();
                epoch += 1;
                queue.next().expect("dataset is nonempty")
            }
        };
        let (value, grad) = match cfg.mode {
            TrainMode::Baseline => {
                let mut g = NetGraph::forward(&net, &batch.inputs, &[]);
                let l = g.loss(&batch.targets, cfg.loss);
                (g.tape.scalar(l), g.gradient(l))
            }
            TrainMode::Gni => {
                let noise: Vec<Option<Perturbation>> = spec
                    .layers
                    .iter()
                    .enumerate()
                    .map(|(k, layer)| {
                        let width = net.widths()[k];
                        Perturbation::draw(layer, batch.len(), width, &mut noise_rs)
                    })
                    .collect();
                let mut g = NetGraph::forward(&net, &batch.inputs, &noise);
                let l = g.loss(&batch.targets, cfg.loss);
                (g.tape.scalar(l), g.gradient(l))
            }
            TrainMode::Explicit => match cfg.explicit_grad {
                ExplicitGrad::Autodiff => explicit_objective(
                    &net,
                    &batch.inputs,
                    &batch.targets,
                    cfg.loss,
                    &spec,
                    variant,
                )?,
                ExplicitGrad::FiniteDifference => explicit_objective_fd(
                    &net,
                    &batch.inputs,
                    &batch.targets,
                    cfg.loss,
                    &spec,
                    variant,
                    1e-5,
                )?,
            },
        };
        if !value.is_finite() || !grad.is_finite() {
            return Err(Error::Divergence { step, loss: value });
        }
        net.sgd_step(&grad, cfg.learning_rate)?;
        let tick = cfg.eval_every > 0 && step % cfg.eval_every == 0;
        if tick || step == cfg.steps {
            record(&net, step, &mut log)?;
            observer(step, &net)?;
        }
    }
    Ok((net, log))
}

#[cfg(test)]
mod tests;
