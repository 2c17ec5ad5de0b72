//! JSON configuration schemas, one per command. Relative paths inside a
//! config resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use ecg_ssl::augment::AugmentationSpec;
use ecg_ssl::distshift::DEFAULT_RESOLUTION;
use ecg_ssl::nn::EncoderConfig;
use ecg_ssl::signal::{SyntheticDatasetConfig, WindowConfig};
use ecg_ssl::train::{FinetuneConfig, PretrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Subject-disjoint split followed by windowing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Train, validation and test fractions of subjects.
    pub fractions: [f64; 3],
    pub window: WindowConfig,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            fractions: [0.6, 0.2, 0.2],
            window: WindowConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthGenConfig {
    pub dataset: SyntheticDatasetConfig,
    pub split: SplitConfig,
}

/// Pre-windowed partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowFiles {
    pub train: PathBuf,
    #[serde(default)]
    pub validation: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
}

/// A dataset directory split and windowed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordSource {
    pub dir: PathBuf,
    #[serde(default)]
    pub split: SplitConfig,
    /// Resample every record to this rate before windowing.
    #[serde(default)]
    pub target_hz: Option<f64>,
    /// Sampling rate of CSV record files, which carry none themselves.
    #[serde(default)]
    pub csv_rate_hz: Option<f64>,
}

/// Exactly one of `windows` or `records`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset label used in reports.
    pub name: String,
    #[serde(default)]
    pub windows: Option<WindowFiles>,
    #[serde(default)]
    pub records: Option<RecordSource>,
}

impl DataConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.name.trim().is_empty() {
            return Err(CliError::config("data.name must not be empty"));
        }
        match (&self.windows, &self.records) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => Err(CliError::config(
                "data needs exactly one of 'windows' or 'records'",
            )),
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let Some(w) = &mut self.windows {
            w.train = base.join(&w.train);
            w.validation = w.validation.as_ref().map(|p| base.join(p));
            w.test = w.test.as_ref().map(|p| base.join(p));
        }
        if let Some(r) = &mut self.records {
            r.dir = base.join(&r.dir);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPreviewConfig {
    pub input: PathBuf,
    /// Defaults to every augmentation at every preset parameter value.
    #[serde(default = "AugmentationSpec::grid")]
    pub augmentations: Vec<AugmentationSpec>,
    #[serde(default = "default_preview_windows")]
    pub n_windows: usize,
    #[serde(default = "default_preview_leads")]
    pub leads: Vec<usize>,
}

fn default_preview_windows() -> usize {
    2
}

fn default_preview_leads() -> Vec<usize> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainCommandConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
}

/// Shared by `finetune` and `lineval`. Without a checkpoint the encoder is
/// randomly initialized from `encoder`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneCommandConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub encoder: Option<EncoderConfig>,
    #[serde(default)]
    pub finetune: FinetuneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistshiftConfig {
    /// Encoder checkpoint; required unless `reduced_csv` is given.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub reference: Option<PathBuf>,
    #[serde(default)]
    pub other: Option<PathBuf>,
    /// Externally reduced points (`source_tag,x,y`); the first tag is the
    /// reference set and the second the other set.
    #[serde(default)]
    pub reduced_csv: Option<PathBuf>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Run directories to consolidate; empty means every subdirectory of
    /// the output directory.
    pub runs: Vec<PathBuf>,
}

/// Parses `text` and resolves relative paths against `base`.
pub trait CommandConfig: Sized + serde::de::DeserializeOwned + Serialize {
    fn resolve_paths(&mut self, _base: &Path) {}

    fn check(&self) -> CliResult<()> {
        Ok(())
    }

    fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(CliError::config)?;
        cfg.resolve_paths(base);
        cfg.check()?;
        Ok(cfg)
    }
}

impl CommandConfig for SynthGenConfig {
    fn check(&self) -> CliResult<()> {
        let total: f64 = self.split.fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(CliError::config(format!(
                "split fractions sum to {total}, not 1"
            )));
        }
        Ok(())
    }
}

impl CommandConfig for AugmentPreviewConfig {
    fn resolve_paths(&mut self, base: &Path) {
        self.input = base.join(&self.input);
    }

    fn check(&self) -> CliResult<()> {
        for a in &self.augmentations {
            a.validate().map_err(CliError::config)?;
        }
        if self.n_windows == 0 || self.leads.is_empty() {
            return Err(CliError::config("n_windows and leads must be nonempty"));
        }
        Ok(())
    }
}

impl CommandConfig for PretrainCommandConfig {
    fn resolve_paths(&mut self, base: &Path) {
        self.data.resolve(base);
    }

    fn check(&self) -> CliResult<()> {
        self.data.validate()?;
        self.pretrain.validate().map_err(CliError::config)
    }
}

impl CommandConfig for FinetuneCommandConfig {
    fn resolve_paths(&mut self, base: &Path) {
        self.data.resolve(base);
        self.checkpoint = self.checkpoint.as_ref().map(|p| base.join(p));
    }

    fn check(&self) -> CliResult<()> {
        self.data.validate()?;
        if self.checkpoint.is_some() && self.encoder.is_some() {
            return Err(CliError::config(
                "give either 'checkpoint' or 'encoder', not both",
            ));
        }
        if let Some(e) = &self.encoder {
            e.validate().map_err(CliError::config)?;
        }
        self.finetune.validate().map_err(CliError::config)
    }
}

impl CommandConfig for DistshiftConfig {
    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.checkpoint,
            &mut self.reference,
            &mut self.other,
            &mut self.reduced_csv,
        ] {
            *p = p.as_ref().map(|p| base.join(p));
        }
    }

    fn check(&self) -> CliResult<()> {
        let embedded =
            self.checkpoint.is_some() && self.reference.is_some() && self.other.is_some();
        if embedded == self.reduced_csv.is_some() {
            return Err(CliError::config(
                "give either checkpoint + reference + other, or reduced_csv",
            ));
        }
        if self.resolution < ecg_ssl::distshift::MIN_RESOLUTION {
            return Err(CliError::config(format!(
                "resolution {} too small",
                self.resolution
            )));
        }
        Ok(())
    }
}

impl CommandConfig for ReportConfig {
    fn resolve_paths(&mut self, base: &Path) {
        self.runs = self.runs.iter().map(|p| base.join(p)).collect();
    }
}
