use std::path::{Path, PathBuf};

use prunekit::model::{load_model_with, ParseMode};
use prunekit::train::{load_idx, synth_blobs, Dataset, Split, TrainConfig};
use prunekit::zoo::pointwise_classifier;
use prunekit::ModelGraph;
use serde::{Deserialize, Serialize};

use crate::failure::{CliResult, Context, Failure};

/// Training and validation data, either generated or read from IDX files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Gaussian blobs; the first `train` samples train, the rest validate.
    Synth { classes: usize, samples: usize, train: usize, channels: usize, height: usize, width: usize },
    Idx { train_images: PathBuf, train_labels: PathBuf, val_images: PathBuf, val_labels: PathBuf },
}

impl DataConfig {
    pub fn load(&self, seed: u64) -> CliResult<(Dataset, Dataset)> {
        match self {
            DataConfig::Synth { classes, samples, train, channels, height, width } => {
                let all = synth_blobs(*classes, *samples, (*channels, *height, *width), seed)?;
                Ok(all.split_at(*train, Split::Train, Split::Val)?)
            }
            DataConfig::Idx { train_images, train_labels, val_images, val_labels } => {
                let mut train = load_idx(train_images, train_labels).context("training data")?;
                let mut val = load_idx(val_images, val_labels).context("validation data")?;
                train.split = Split::Train;
                val.split = Split::Val;
                let classes = train.classes.max(val.classes);
                train.classes = classes;
                val.classes = classes;
                Ok((train, val))
            }
        }
    }

    /// Relative IDX paths are taken relative to `base`.
    pub fn rebase(&mut self, base: &Path) {
        if let DataConfig::Idx { train_images, train_labels, val_images, val_labels } = self {
            for p in [train_images, train_labels, val_images, val_labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

/// A model read from disk (`manifest` + `weights`) or a pointwise
/// classifier with the given `hidden` widths, sized to the data and
/// initialised from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSource {
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub weights: Option<PathBuf>,
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Uniform,
    Global,
    Block,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Uniform => "uniform",
            Method::Global => "global",
            Method::Block => "block",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    pub method: Method,
    #[serde(default)]
    pub sparsity: Option<f64>,
    #[serde(default)]
    pub target_mflops: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    #[serde(default)]
    pub sensitivity: bool,
    #[serde(default = "default_probe")]
    pub sensitivity_sparsity: f64,
    #[serde(default)]
    pub pattern: bool,
}

fn default_probe() -> f64 {
    prunekit::analysis::DEFAULT_PROBE_SPARSITY
}

/// One end-to-end experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelSource,
    pub data: DataConfig,
    /// Dense training before pruning; skipped when absent.
    #[serde(default)]
    pub pretrain: Option<TrainConfig>,
    pub prune: PruneConfig,
    #[serde(default)]
    pub finetune: TrainConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

impl PipelineConfig {
    /// Parses without touching relative paths; see [`Self::resolved`].
    pub fn parse(text: &str) -> CliResult<Self> {
        let raw: toml::Value = toml::from_str(text).map_err(|e| Failure::usage(format!("pipeline config: {e}")))?;
        for section in ["pretrain", "finetune"] {
            if raw.get(section).and_then(|t| t.get("seed")).is_some() {
                return Err(Failure::usage(format!(
                    "pipeline config: [{section}] must not set `seed`; use --seed"
                )));
            }
        }
        let cfg: PipelineConfig =
            raw.try_into().map_err(|e: toml::de::Error| Failure::usage(format!("pipeline config: {e}")))?;
        cfg.model.check()?;
        Ok(cfg)
    }

    /// Relative paths taken relative to `base` (the config's directory).
    pub fn resolved(&self, base: &Path) -> Self {
        let mut cfg = self.clone();
        cfg.data.rebase(base);
        for p in [&mut cfg.model.manifest, &mut cfg.model.weights].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg
    }
}

pub fn parse_mode(lenient: bool) -> ParseMode {
    if lenient {
        ParseMode::Lenient
    } else {
        ParseMode::Strict
    }
}

pub fn load_model_files(manifest: &Path, weights: &Path, lenient: bool) -> CliResult<ModelGraph> {
    Ok(load_model_with(manifest, weights, parse_mode(lenient))?.0)
}

impl ModelSource {
    fn check(&self) -> CliResult<()> {
        match (&self.manifest, &self.weights, &self.hidden) {
            (Some(_), Some(_), None) | (None, None, Some(_)) => Ok(()),
            _ => Err(Failure::usage("[model] needs either `manifest` and `weights`, or `hidden`")),
        }
    }

    pub fn load(&self, data: &Dataset, seed: u64, lenient: bool) -> CliResult<ModelGraph> {
        match (&self.manifest, &self.weights, &self.hidden) {
            (Some(m), Some(w), _) => load_model_files(m, w, lenient),
            (_, _, Some(hidden)) => Ok(pointwise_classifier(
                "pipeline",
                (data.channels, data.height, data.width),
                hidden,
                data.classes,
                seed,
            )?),
            _ => Err(Failure::usage("[model] needs either `manifest` and `weights`, or `hidden`")),
        }
    }
}

/// Reads a `TrainConfig` from a TOML file.
pub fn load_train_config(path: &Path) -> CliResult<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

pub fn load_data_config(path: &Path) -> CliResult<DataConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let mut cfg: DataConfig = toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    cfg.rebase(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}
