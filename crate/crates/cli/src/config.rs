//! Run configuration: one flat TOML file drives the whole pipeline.
//!
//! ```toml
//! output_dir = "out"
//!
//! [dataset]
//! synthetic = "synth.toml"   # or: input = "flows.csv", format = "csv"
//! seed = 7                   # required with `synthetic`
//!
//! [split]
//! train_fraction = 0.85
//! seed = 42
//!
//! [augment]
//! plan = "plan.toml"
//!
//! [generator]
//! hidden = 32
//! epochs = 15
//! lr = 0.02
//! batch_size = 16
//! window_top_k = 64
//!
//! [classifier]
//! preset = "custom"          # "a", "b", or "custom"
//! blocks = 2
//! heads = 4
//! model_dim = 32
//! ff_widths = [64]
//! head_widths = [64, 32]
//! epochs = 10
//! batch_size = 256
//! lr = 0.001
//! dropout = 0.0
//! seed = 11
//! input_mode = "fs"          # "fs" or "onehot"
//! onehot_port_cap = 1024
//! ```
//!
//! Every stage that uses randomness requires an explicit seed; a missing
//! seed is a configuration error, never a silent default.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use ntc_core::classifier::{ClassifierConfig, InputMode};
use ntc_core::ingest::FileFormat;
use ntc_core::seqgen::SeqGenConfig;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    pub split: SplitSection,
    #[serde(default)]
    pub augment: Option<AugmentSection>,
    #[serde(default)]
    pub generator: GeneratorSection,
    pub classifier: ClassifierSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<String>,
    #[serde(default)]
    pub synthetic: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub plan: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub window_top_k: usize,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        GeneratorSection {
            hidden: 32,
            epochs: 15,
            lr: 0.02,
            batch_size: 16,
            window_top_k: 64,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default)]
    pub blocks: Option<usize>,
    #[serde(default)]
    pub heads: Option<usize>,
    #[serde(default)]
    pub model_dim: Option<usize>,
    #[serde(default)]
    pub ff_widths: Option<Vec<usize>>,
    #[serde(default)]
    pub head_widths: Option<Vec<usize>>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub dropout: Option<f64>,
    pub seed: u64,
    #[serde(default = "default_input_mode")]
    pub input_mode: String,
    #[serde(default = "default_port_cap")]
    pub onehot_port_cap: usize,
}

fn default_preset() -> String {
    "a".to_string()
}

fn default_input_mode() -> String {
    "fs".to_string()
}

fn default_port_cap() -> usize {
    1024
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("bad config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        match (&self.dataset.input, &self.dataset.synthetic) {
            (None, None) => {
                return Err(CliError::usage(
                    "dataset needs either `input` or `synthetic`".to_string(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(CliError::usage(
                    "dataset takes `input` or `synthetic`, not both".to_string(),
                ))
            }
            (Some(_), None) => {
                let fmt = self.dataset.format.as_deref().unwrap_or("csv");
                if FileFormat::parse(fmt).is_none() {
                    return Err(CliError::usage(format!("unknown dataset format `{fmt}`")));
                }
            }
            (None, Some(_)) => {
                if self.dataset.seed.is_none() {
                    return Err(CliError::usage(
                        "synthetic datasets require `dataset.seed`".to_string(),
                    ));
                }
            }
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(CliError::usage(format!(
                "split.train_fraction must be in (0, 1), got {}",
                self.split.train_fraction
            )));
        }
        self.classifier_config(None)?;
        Ok(())
    }

    pub fn dataset_format(&self) -> FileFormat {
        FileFormat::parse(self.dataset.format.as_deref().unwrap_or("csv")).unwrap_or(FileFormat::Csv)
    }

    pub fn generator_config(&self, seed: u64) -> ntc_core::augment::GeneratorConfig {
        ntc_core::augment::GeneratorConfig {
            seqgen: SeqGenConfig {
                hidden: self.generator.hidden,
                epochs: self.generator.epochs,
                lr: self.generator.lr,
                batch_size: self.generator.batch_size,
                seed,
            },
            window_top_k: self.generator.window_top_k,
        }
    }

    /// Resolves preset + overrides into a concrete classifier config.
    /// `mode_override` (from the command line) wins over the config file.
    pub fn classifier_config(
        &self,
        mode_override: Option<InputMode>,
    ) -> Result<ClassifierConfig, CliError> {
        let mode = match mode_override {
            Some(m) => m,
            None => match self.classifier.input_mode.as_str() {
                "fs" => InputMode::FsEmbedding,
                "onehot" => InputMode::OneHot,
                other => {
                    return Err(CliError::usage(format!(
                        "unknown input_mode `{other}` (use `fs` or `onehot`)"
                    )))
                }
            },
        };
        let mut cfg = match self.classifier.preset.as_str() {
            "a" => ClassifierConfig::preset_a(mode),
            "b" => ClassifierConfig::preset_b(mode),
            "custom" => {
                let mut c = ClassifierConfig::preset_a(mode);
                // Custom requires the architecture to be spelled out.
                for (name, present) in [
                    ("blocks", self.classifier.blocks.is_some()),
                    ("heads", self.classifier.heads.is_some()),
                    ("model_dim", self.classifier.model_dim.is_some()),
                ] {
                    if !present {
                        return Err(CliError::usage(format!(
                            "preset `custom` requires classifier.{name}"
                        )));
                    }
                }
                c.ff_widths = vec![];
                c
            }
            other => return Err(CliError::usage(format!("unknown preset `{other}`"))),
        };
        if let Some(v) = self.classifier.blocks {
            cfg.blocks = v;
        }
        if let Some(v) = self.classifier.heads {
            cfg.heads = v;
        }
        if let Some(v) = self.classifier.model_dim {
            cfg.model_dim = v;
        }
        if let Some(v) = &self.classifier.ff_widths {
            cfg.ff_widths = v.clone();
        }
        if let Some(v) = &self.classifier.head_widths {
            cfg.head_widths = v.clone();
        }
        if let Some(v) = self.classifier.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.classifier.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.classifier.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.classifier.dropout {
            cfg.dropout = v;
        }
        cfg.seed = self.classifier.seed;
        cfg.validate()
            .map_err(|e| CliError::usage(format!("classifier config: {e}")))?;
        Ok(cfg)
    }
}
