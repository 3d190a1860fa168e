use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gnireg::calibration::{calibrate, predictions};
use gnireg::data::{CsvSpec, Dataset};
use gnireg::diagnostics::{
    dominance_fraction, dominance_scan, empirical_flip_distance, exact_flip_distance,
    hessian_trace, high_frequency_energy, layer_stats_oriented, margin_bounds, sensitivity_sweep,
    spectrum, striation, DominanceConfig, Grid, Tones,
};
use gnireg::linalg::RandomSource;
use gnireg::network::{Activation, Checkpoint, Network};
use gnireg::trainer::{evaluate, train_with_observer, MetricLog};
use serde::Serialize;
use serde_json::json;

use crate::config::{load_config, DataKind, ExperimentConfig, DEFAULT_OUT_DIR, OUT_DIR_ENV};
use crate::output::{display, num, opt, Output};
use crate::svg;
use crate::{Cli, Command, ModelArgs, TrainOverrides};

/// A configuration or usage problem; the process exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

trait Usage<T> {
    fn usage(self) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> Usage<T> for std::result::Result<T, E> {
    fn usage(self) -> Result<T> {
        self.map_err(|e| UsageError(message(&e.into())).into())
    }
}

/// The error chain joined by `: `, skipping causes already quoted by
/// their parent.
pub fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

/// Stream offsets under the master seed.
const INIT_STREAM: u64 = 0x494e_4954;
const DIAG_STREAM: u64 = 0x4449_4147;

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure thread pool")?;
    }
    let mut cfg = match &cli.config {
        Some(p) => load_config(p).usage()?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.train.seed = cfg.seed;
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    cfg.output_dir = Some(out_dir.clone());
    let ctx = Ctx {
        out: Output::create(out_dir)?,
        plot: cli.plot,
    };
    match cli.command {
        Command::Train(a) => {
            apply_train(&mut cfg, &a.train);
            ctx.train(cfg)
        }
        Command::Dominance(a) => {
            apply_train(&mut cfg, &a.train);
            let d = &mut cfg.diagnostics;
            set(&mut d.sigmas, a.sigmas);
            set(&mut d.inits, a.inits);
            set(&mut d.draws, a.draws);
            set(&mut d.dominance_batch, a.batch);
            ctx.dominance(cfg)
        }
        Command::Spectrum(a) => {
            apply_train(&mut cfg, &a.train);
            set(&mut cfg.diagnostics.grid_n, a.grid_n);
            cfg.diagnostics.clip_spectrum |= a.clip;
            ctx.spectrum(cfg, &a.checkpoint)
        }
        Command::Hesstrace(a) => {
            set(&mut cfg.diagnostics.probes, a.probes);
            set(&mut cfg.diagnostics.hessian_batch, a.batch);
            ctx.hesstrace(cfg, &a.model)
        }
        Command::Layerstats(a) => {
            set(&mut cfg.diagnostics.mask_orientation, a.orientation);
            ctx.layerstats(cfg, &a.model)
        }
        Command::Calibrate(a) => {
            set(&mut cfg.diagnostics.bins, a.bins);
            ctx.calibrate(cfg, &a.model)
        }
        Command::Sensitivity(a) => {
            set(&mut cfg.diagnostics.alphas, a.alphas);
            set(&mut cfg.diagnostics.sensitivity_draws, a.draws);
            ctx.sensitivity(cfg, &a.model)
        }
        Command::Margin(a) => {
            set(&mut cfg.diagnostics.flip_directions, a.directions);
            set(&mut cfg.diagnostics.flip_radius, a.radius);
            ctx.margin(cfg, &a.model)
        }
        Command::Parseval(a) => {
            let d = &mut cfg.diagnostics;
            set(&mut d.parseval_freqs, a.freqs);
            set(&mut d.parseval_amplitudes, a.amplitudes);
            set(&mut d.grid_n, a.grid_n);
            d.parseval_fd |= a.fd;
            ctx.parseval(cfg)
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_train(cfg: &mut ExperimentConfig, o: &TrainOverrides) {
    let t = &mut cfg.train;
    set(&mut t.mode, o.mode);
    set(&mut t.loss, o.loss);
    set(&mut t.steps, o.steps);
    set(&mut t.learning_rate, o.learning_rate);
    set(&mut t.batch_size, o.batch_size);
    set(&mut t.eval_every, o.eval_every);
    set(&mut cfg.noise.variance, o.variance);
    set(&mut cfg.noise.mode, o.noise_mode);
    set(&mut cfg.architecture.activation, o.activation);
}

struct Ctx {
    out: Output,
    plot: bool,
}

/// Datasets, network and resolved noise for a config.
struct Setup {
    train: Dataset,
    test: Dataset,
    net: Network,
}

fn setup(cfg: &mut ExperimentConfig) -> Result<Setup> {
    let (train, test) = cfg.data.load().usage()?;
    let arch = cfg
        .architecture
        .resolve(train.input_dim(), train.target_dim());
    let net = arch
        .build(&mut RandomSource::new(cfg.seed).split(INIT_STREAM))
        .usage()?;
    cfg.train.noise = cfg.noise.resolve(net.depth()).usage()?;
    cfg.train.validate(&net).usage()?;
    Ok(Setup { train, test, net })
}

fn load_checkpoint(path: &Path) -> Result<Network> {
    Checkpoint::load(path)
        .and_then(|c| c.to_network())
        .with_context(|| format!("cannot load checkpoint {}", path.display()))
        .usage()
}

#[derive(Serialize)]
struct TrainSummary {
    final_train_loss: Option<f64>,
    final_test_loss: Option<f64>,
    final_r_total: Option<f64>,
    test_accuracy: Option<f64>,
    metrics: String,
    checkpoint: String,
}

impl Ctx {
    fn run_training(
        &self,
        cfg: &ExperimentConfig,
        s: &Setup,
        mut observer: impl FnMut(usize, &Network) -> gnireg::Result<()>,
    ) -> Result<(Network, MetricLog)> {
        Ok(train_with_observer(
            s.net.clone(),
            &s.train,
            Some(&s.test),
            &cfg.train,
            &mut observer,
        )?)
    }

    fn save_training(
        &self,
        cfg: &ExperimentConfig,
        net: &Network,
        log: &MetricLog,
    ) -> Result<TrainSummary> {
        let metrics = self
            .out
            .write_with("metrics.csv", |w| Ok(log.write_csv(net.depth(), w)?))?;
        let checkpoint = self.out.path("checkpoint.json");
        Checkpoint::from_network(net, Some(cfg.seed)).save(&checkpoint)?;
        if self.plot {
            let steps = |f: &dyn Fn(&gnireg::trainer::MetricRow) -> Option<f64>| {
                log.rows
                    .iter()
                    .filter_map(|r| f(r).map(|v| (r.step as f64, v)))
                    .collect::<Vec<_>>()
            };
            let series = [
                svg::Series {
                    name: "train",
                    points: steps(&|r| Some(r.train_loss)),
                },
                svg::Series {
                    name: "test",
                    points: steps(&|r| r.test_loss),
                },
                svg::Series {
                    name: "R",
                    points: steps(&|r| Some(r.r_total)),
                },
            ];
            self.out.write_text(
                "metrics.svg",
                &svg::line_plot("training", "step", "value", &series),
            )?;
        }
        Ok(TrainSummary {
            final_train_loss: log.last().map(|r| r.train_loss),
            final_test_loss: log.last().and_then(|r| r.test_loss),
            final_r_total: log.last().map(|r| r.r_total),
            test_accuracy: None,
            metrics: display(&metrics),
            checkpoint: display(&checkpoint),
        })
    }

    fn train(&self, mut cfg: ExperimentConfig) -> Result<()> {
        let s = setup(&mut cfg)?;
        let (net, log) = self.run_training(&cfg, &s, |_, _| Ok(()))?;
        let mut summary = self.save_training(&cfg, &net, &log)?;
        summary.test_accuracy = evaluate(&net, &s.test, cfg.train.loss)?.accuracy;
        self.out.write_summary("train", &cfg, &summary)?;
        Ok(())
    }

    /// A checkpoint when given, otherwise a network trained from the config.
    fn model(&self, cfg: &mut ExperimentConfig, args: &ModelArgs) -> Result<(Network, Setup)> {
        apply_train(cfg, &args.train);
        if let Some(path) = &args.data {
            cfg.data.kind = DataKind::Csv;
            cfg.data.csv.path = Some(path.clone());
            cfg.data.csv.test_path = None;
        }
        if let Some(path) = &args.checkpoint {
            let net = load_checkpoint(path)?;
            if cfg.data.kind == DataKind::Csv
                && cfg.data.csv.spec == CsvSpec::default()
                && net.output_dim() > 1
            {
                cfg.data.csv.spec.classes = Some(net.output_dim());
            }
            let (train, test) = cfg.data.load().usage()?;
            cfg.train.noise = cfg.noise.resolve(net.depth()).usage()?;
            return Ok((net.clone(), Setup { train, test, net }));
        }
        let s = setup(cfg)?;
        let (net, _) = self.run_training(cfg, &s, |_, _| Ok(()))?;
        Ok((net, s))
    }

    fn dominance(&self, mut cfg: ExperimentConfig) -> Result<()> {
        let s = setup(&mut cfg)?;
        let d = &cfg.diagnostics;
        let arch = cfg
            .architecture
            .resolve(s.train.input_dim(), s.train.target_dim());
        let dc = DominanceConfig {
            batch_size: d.dominance_batch,
            draws: d.draws,
            mode: cfg.noise.mode,
            loss: cfg.train.loss,
            seed: RandomSource::new(cfg.seed).split(DIAG_STREAM).next_u64(),
        };
        let rows = dominance_scan(&arch, &s.train, &d.sigmas, d.inits, &dc).usage_if_argument()?;
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    num(r.sigma2),
                    r.init.to_string(),
                    num(r.regulariser),
                    num(r.remainder),
                    num(r.stderr),
                    opt(r.ratio),
                    r.dominated().to_string(),
                ]
            })
            .collect();
        let csv = self.out.write_rows(
            "dominance.csv",
            &[
                "sigma2",
                "init",
                "R",
                "remainder",
                "stderr",
                "ratio",
                "dominated",
            ],
            &table,
        )?;
        if self.plot {
            let series: Vec<svg::Series> = d
                .sigmas
                .iter()
                .map(|&s2| svg::Series {
                    name: "ratio",
                    points: rows
                        .iter()
                        .filter(|r| r.sigma2 == s2)
                        .filter_map(|r| r.ratio.map(|v| (r.init as f64, v)))
                        .collect(),
                })
                .collect();
            self.out.write_text(
                "dominance.svg",
                &svg::line_plot("|E[C]| / R per init", "init", "ratio", &series),
            )?;
        }
        let result = json!({
            "fraction_dominated": dominance_fraction(&rows),
            "rows": rows,
            "csv": display(&csv),
        });
        self.out.write_summary("dominance", &cfg, &result)?;
        Ok(())
    }

    fn spectrum(&self, mut cfg: ExperimentConfig, checkpoints: &[PathBuf]) -> Result<()> {
        let grid = Grid {
            n: cfg.diagnostics.grid_n,
            ..Grid::default()
        };
        grid.validate().usage()?;
        let mut snaps: Vec<(usize, Network)> = Vec::new();
        if checkpoints.is_empty() {
            let s = setup(&mut cfg)?;
            let (net, log) = self.run_training(&cfg, &s, |step, net| {
                snaps.push((step, net.clone()));
                Ok(())
            })?;
            self.save_training(&cfg, &net, &log)?;
        } else {
            for (i, p) in checkpoints.iter().enumerate() {
                snaps.push((i, load_checkpoint(p)?));
            }
        }
        let series = spectrum(&snaps, &grid).usage_if_argument()?;
        let clip = cfg.diagnostics.clip_spectrum;
        let csv = self
            .out
            .write_with("spectrum.csv", |w| Ok(series.write_csv(w, clip)?))?;
        if self.plot {
            self.out.write_text(
                "spectrum.svg",
                &svg::heatmap(
                    "amplitude spectrum",
                    "frequency bin",
                    "recorded step",
                    &series.clipped(),
                ),
            )?;
        }
        let hf: Vec<f64> = series
            .amplitudes
            .iter()
            .map(|a| high_frequency_energy(a, cfg.diagnostics.hf_from))
            .collect();
        let result = json!({
            "steps": series.steps,
            "bins": series.bins(),
            "high_frequency_energy": hf,
            "csv": display(&csv),
        });
        self.out.write_summary("spectrum", &cfg, &result)?;
        Ok(())
    }

    fn hesstrace(&self, mut cfg: ExperimentConfig, args: &ModelArgs) -> Result<()> {
        let (net, s) = self.model(&mut cfg, args)?;
        let n = cfg.diagnostics.hessian_batch.min(s.train.len()).max(1);
        let batch = s.train.batch(&(0..n).collect::<Vec<_>>());
        let mut rs = RandomSource::new(cfg.seed).split(DIAG_STREAM);
        let est = hessian_trace(
            &net,
            &batch,
            cfg.train.loss,
            cfg.diagnostics.probes,
            &mut rs,
        )
        .usage_if_argument()?;
        let csv = self.out.write_rows(
            "hesstrace.csv",
            &["estimate", "stderr", "probes", "step"],
            &[vec![
                num(est.estimate),
                num(est.stderr),
                est.probes.to_string(),
                num(est.step),
            ]],
        )?;
        let result = json!({ "trace": est, "parameters": net.param_count(), "csv": display(&csv) });
        self.out.write_summary("hesstrace", &cfg, &result)?;
        Ok(())
    }

    fn layerstats(&self, mut cfg: ExperimentConfig, args: &ModelArgs) -> Result<()> {
        let (net, s) = self.model(&mut cfg, args)?;
        if net.layers()[..net.depth() - 1]
            .iter()
            .any(|l| l.activation != Activation::Relu)
        {
            return Err(UsageError("layerstats needs ReLU hidden layers".into()).into());
        }
        let stats = layer_stats_oriented(&net, &s.train.inputs, cfg.diagnostics.mask_orientation)?;
        let table: Vec<Vec<String>> = stats
            .iter()
            .map(|l| {
                vec![
                    l.layer.to_string(),
                    num(l.masked_norm_sq),
                    num(l.norm_sq),
                    num(l.trace),
                ]
            })
            .collect();
        let csv = self.out.write_rows(
            "layerstats.csv",
            &["layer", "masked_norm_sq", "norm_sq", "trace"],
            &table,
        )?;
        let result =
            json!({ "layers": stats, "spearman": striation(&stats), "csv": display(&csv) });
        self.out.write_summary("layerstats", &cfg, &result)?;
        Ok(())
    }

    fn calibrate(&self, mut cfg: ExperimentConfig, args: &ModelArgs) -> Result<()> {
        let (net, s) = self.model(&mut cfg, args)?;
        if !s.test.is_classification() {
            return Err(UsageError("calibrate needs a classification dataset".into()).into());
        }
        let report =
            calibrate(&predictions(&net, &s.test)?, cfg.diagnostics.bins).usage_if_argument()?;
        let csv = self
            .out
            .write_with("calibration.csv", |w| Ok(report.write_csv(w)?))?;
        if self.plot {
            let diag = svg::Series {
                name: "ideal",
                points: vec![(0.0, 0.0), (1.0, 1.0)],
            };
            let rel = svg::Series {
                name: "model",
                points: report
                    .bins
                    .iter()
                    .filter(|b| b.count > 0)
                    .map(|b| (b.confidence, b.accuracy))
                    .collect(),
            };
            self.out.write_text(
                "calibration.svg",
                &svg::line_plot("reliability", "confidence", "accuracy", &[diag, rel]),
            )?;
        }
        let result = json!({
            "ece": report.ece,
            "accuracy": report.accuracy,
            "mean_confidence": report.mean_confidence,
            "mean_entropy": report.mean_entropy,
            "bins": report.bins,
            "csv": display(&csv),
        });
        self.out.write_summary("calibrate", &cfg, &result)?;
        Ok(())
    }

    fn sensitivity(&self, mut cfg: ExperimentConfig, args: &ModelArgs) -> Result<()> {
        let (net, s) = self.model(&mut cfg, args)?;
        let d = &cfg.diagnostics;
        let rs = RandomSource::new(cfg.seed).split(DIAG_STREAM);
        let rows = sensitivity_sweep(&net, &s.test, &d.alphas, d.sensitivity_draws, &rs)
            .usage_if_argument()?;
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| vec![num(r.alpha), num(r.accuracy), num(r.stderr)])
            .collect();
        let csv =
            self.out
                .write_rows("sensitivity.csv", &["alpha", "accuracy", "stderr"], &table)?;
        if self.plot {
            let acc = svg::Series {
                name: "accuracy",
                points: rows.iter().map(|r| (r.alpha, r.accuracy)).collect(),
            };
            self.out.write_text(
                "sensitivity.svg",
                &svg::line_plot("input-noise sensitivity", "alpha", "accuracy", &[acc]),
            )?;
        }
        let result = json!({ "rows": rows, "csv": display(&csv) });
        self.out.write_summary("sensitivity", &cfg, &result)?;
        Ok(())
    }

    fn margin(&self, mut cfg: ExperimentConfig, args: &ModelArgs) -> Result<()> {
        let (net, s) = self.model(&mut cfg, args)?;
        let report = margin_bounds(&net, &s.test.inputs).usage_if_argument()?;
        let linear = net
            .layers()
            .iter()
            .all(|l| l.activation == Activation::Identity);
        let d = &cfg.diagnostics;
        let root = RandomSource::new(cfg.seed).split(DIAG_STREAM);
        let mut table = Vec::with_capacity(report.points.len());
        let mut checked = 0usize;
        let mut respected = 0usize;
        for (b, p) in report.points.iter().enumerate() {
            let x = s.test.inputs.row(b);
            let flip = if linear {
                Some(exact_flip_distance(&net, x)?)
            } else if d.flip_directions > 0 {
                empirical_flip_distance(
                    &net,
                    x,
                    d.flip_directions,
                    d.flip_radius,
                    &mut root.split(b as u64),
                )?
            } else {
                None
            };
            if let Some(f) = flip {
                checked += 1;
                respected += usize::from(p.bound <= f);
            }
            table.push(vec![
                b.to_string(),
                p.predicted.to_string(),
                p.runner_up.to_string(),
                num(p.gap),
                num(p.j0_norm),
                num(p.bound),
                opt(flip),
            ]);
        }
        let csv = self.out.write_rows(
            "margin.csv",
            &[
                "point",
                "predicted",
                "runner_up",
                "gap",
                "j0_norm",
                "bound",
                "flip_distance",
            ],
            &table,
        )?;
        let result = json!({
            "points": report.points.len(),
            "flip_method": if linear { "exact" } else if d.flip_directions > 0 { "empirical" } else { "none" },
            "checked": checked,
            "bound_respected": respected,
            "fraction_respected": (checked > 0).then(|| respected as f64 / checked as f64),
            "csv": display(&csv),
        });
        self.out.write_summary("margin", &cfg, &result)?;
        Ok(())
    }

    fn parseval(&self, cfg: ExperimentConfig) -> Result<()> {
        let d = &cfg.diagnostics;
        let mut tones = Tones::unit(&d.parseval_freqs);
        if !d.parseval_amplitudes.is_empty() {
            if d.parseval_amplitudes.len() != d.parseval_freqs.len() {
                return Err(UsageError(format!(
                    "{} amplitudes given for {} frequencies",
                    d.parseval_amplitudes.len(),
                    d.parseval_freqs.len()
                ))
                .into());
            }
            tones.amplitudes = d.parseval_amplitudes.clone();
        }
        let grid = Grid {
            n: d.grid_n,
            ..Grid::default()
        };
        let report = tones.parseval(&grid, !d.parseval_fd).usage_if_argument()?;
        let csv = self.out.write_rows(
            "parseval.csv",
            &["lhs", "rhs", "rel_gap"],
            &[vec![num(report.lhs), num(report.rhs), num(report.rel_gap)]],
        )?;
        let result = json!({
            "lhs": report.lhs,
            "rhs": report.rhs,
            "rel_gap": report.rel_gap,
            "derivative": if d.parseval_fd { "finite_difference" } else { "analytic" },
            "csv": display(&csv),
        });
        self.out.write_summary("parseval", &cfg, &result)?;
        Ok(())
    }
}

/// Argument and domain errors from a library call are usage errors; the
/// rest are runtime failures.
trait UsageIfArgument<T> {
    fn usage_if_argument(self) -> Result<T>;
}

impl<T> UsageIfArgument<T> for gnireg::Result<T> {
    fn usage_if_argument(self) -> Result<T> {
        match self {
            Err(
                e @ (gnireg::Error::Argument(_)
                | gnireg::Error::Domain(_)
                | gnireg::Error::Unsupported(_)),
            ) => Err(UsageError(e.to_string()).into()),
            other => Ok(other?),
        }
    }
}
