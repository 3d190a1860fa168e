//! Experiment configuration: TOML (or JSON, chosen by file extension) with
//! every field defaulted, then overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gnireg::data::{
    gen_blobs, gen_sinusoid, load_csv, load_idx, BlobSpec, CsvSpec, Dataset, SinusoidSpec,
};
use gnireg::diagnostics::MaskOrientation;
use gnireg::network::{Activation, Architecture, Init};
use gnireg::noise::{LayerNoise, NoiseMode, NoiseSpec};
use gnireg::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

pub const OUT_DIR_ENV: &str = "GNI_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "gnireg-out";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub architecture: ArchConfig,
    pub data: DataConfig,
    pub noise: NoiseConfig,
    pub train: TrainConfig,
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Hidden widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init: Init,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            hidden: vec![256; 5],
            activation: Activation::Relu,
            init: Init::He,
        }
    }
}

impl ArchConfig {
    pub fn resolve(&self, d_in: usize, d_out: usize) -> Architecture {
        let mut widths = vec![d_in];
        widths.extend(&self.hidden);
        widths.push(d_out);
        Architecture::new(&widths, self.activation, self.init)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    #[default]
    Sinusoid,
    Blobs,
    Csv,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    /// Test-set size for synthetic data; 0 means the training size.
    pub test_points: usize,
    pub sinusoid: SinusoidSpec,
    pub blobs: BlobSpec,
    pub csv: CsvSource,
    pub idx: IdxSource,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: DataKind::Sinusoid,
            test_points: 0,
            sinusoid: SinusoidSpec::default(),
            blobs: BlobSpec::default(),
            csv: CsvSource::default(),
            idx: IdxSource::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSource {
    pub path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub spec: CsvSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdxSource {
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

fn require<'a>(p: &'a Option<PathBuf>, field: &str) -> Result<&'a Path> {
    p.as_deref()
        .with_context(|| format!("data.{field} must be set for this data kind"))
}

impl DataConfig {
    /// Training and test sets. Synthetic test sets reuse the training
    /// target (same phases or centres) with a fresh sampling seed.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        let test_n = |n: usize| {
            if self.test_points == 0 {
                n
            } else {
                self.test_points
            }
        };
        Ok(match self.kind {
            DataKind::Sinusoid => {
                let train = gen_sinusoid(&self.sinusoid)?;
                let test = gen_sinusoid(&SinusoidSpec {
                    points: test_n(self.sinusoid.points),
                    phases: train.meta.phases.clone(),
                    seed: self.sinusoid.seed.wrapping_add(1),
                    ..self.sinusoid.clone()
                })?;
                (train, test)
            }
            DataKind::Blobs => {
                let train = gen_blobs(&self.blobs)?;
                let per_class = if self.test_points == 0 {
                    self.blobs.per_class
                } else {
                    self.test_points.div_ceil(self.blobs.classes.max(1))
                };
                let test = gen_blobs(&BlobSpec {
                    per_class,
                    seed: self.blobs.seed.wrapping_add(1),
                    ..self.blobs.clone()
                })?;
                (train, test)
            }
            DataKind::Csv => {
                let path = require(&self.csv.path, "csv.path")?;
                let train = load_csv(path, &self.csv.spec)?;
                let test = match &self.csv.test_path {
                    Some(p) => load_csv(p, &self.csv.spec)?,
                    None => train.clone(),
                };
                (train, test)
            }
            DataKind::Idx => {
                let images = require(&self.idx.images, "idx.images")?;
                let labels = require(&self.idx.labels, "idx.labels")?;
                let train = load_idx(images, labels)?;
                let test = match (&self.idx.test_images, &self.idx.test_labels) {
                    (Some(i), Some(l)) => load_idx(i, l)?,
                    (None, None) => train.clone(),
                    _ => {
                        bail!("data.idx.test_images and data.idx.test_labels must be set together")
                    }
                };
                (train, test)
            }
        })
    }
}

/// Which activations receive noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseLayers {
    /// `"all"` or `"input"`.
    Named(String),
    Indices(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub mode: NoiseMode,
    pub variance: f64,
    pub layers: NoiseLayers,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            mode: NoiseMode::Additive,
            variance: 0.1,
            layers: NoiseLayers::Named("all".into()),
        }
    }
}

impl NoiseConfig {
    pub fn resolve(&self, depth: usize) -> Result<NoiseSpec> {
        let active: Vec<usize> = match &self.layers {
            NoiseLayers::Named(n) if n == "all" => (0..depth).collect(),
            NoiseLayers::Named(n) if n == "input" => vec![0],
            NoiseLayers::Named(n) => {
                bail!("noise.layers: expected \"all\", \"input\" or a list, got \"{n}\"")
            }
            NoiseLayers::Indices(v) => v.clone(),
        };
        if let Some(bad) = active.iter().find(|&&k| k >= depth) {
            bail!("noise.layers: activation {bad} does not exist (network has {depth} noisable activations)");
        }
        let mut spec = NoiseSpec::none(depth);
        for k in active {
            spec.layers[k] = LayerNoise {
                mode: self.mode,
                variance: self.variance,
            };
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub grid_n: usize,
    pub clip_spectrum: bool,
    /// First bin counted as high frequency.
    pub hf_from: usize,
    pub probes: usize,
    pub draws: usize,
    pub sigmas: Vec<f64>,
    pub inits: usize,
    pub dominance_batch: usize,
    pub alphas: Vec<f64>,
    pub sensitivity_draws: usize,
    pub bins: usize,
    pub flip_directions: usize,
    pub flip_radius: f64,
    pub hessian_batch: usize,
    pub mask_orientation: MaskOrientation,
    pub parseval_freqs: Vec<f64>,
    /// Per-tone amplitudes; unit amplitudes when empty.
    pub parseval_amplitudes: Vec<f64>,
    pub parseval_fd: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            grid_n: 1024,
            clip_spectrum: false,
            hf_from: 25,
            probes: 32,
            draws: 1000,
            sigmas: vec![0.1, 0.25, 1.0],
            inits: 25,
            dominance_batch: 32,
            alphas: vec![0.0, 0.5, 1.0, 2.0, 4.0],
            sensitivity_draws: 20,
            bins: 10,
            flip_directions: 0,
            flip_radius: 10.0,
            hessian_batch: 128,
            mask_orientation: MaskOrientation::Rows,
            parseval_freqs: vec![5.0],
            parseval_amplitudes: Vec::new(),
            parseval_fd: false,
        }
    }
}

fn parse_error(path: &Pathish, field: String, message: impl std::fmt::Display) -> anyhow::Error {
    if field.is_empty() || field == "." {
        anyhow::anyhow!("{}: {message}", path.0)
    } else {
        anyhow::anyhow!("{}: field `{field}`: {message}", path.0)
    }
}

struct Pathish(String);

/// Reads a config file; `.json` files are JSON, anything else TOML.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let shown = Pathish(path.display().to_string());
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            parse_error(&shown, field, e.inner())
        })
    } else {
        let de =
            toml::Deserializer::parse(&text).map_err(|e| parse_error(&shown, String::new(), e))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            parse_error(&shown, field, e.inner())
        })
    }
}
