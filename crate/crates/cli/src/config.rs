//! Layered configuration: built-in defaults, then an optional TOML file,
//! then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stitchwork_core::colorsplit::{DEFAULT_MAX_COLORS, DEFAULT_TOLERANCE};
use stitchwork_core::embgan::GanConfig;
use stitchwork_core::styletransfer::{StyleWeights, TransferSettings};

use crate::exit::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub max_colors: usize,
    pub tolerance: f32,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            max_colors: DEFAULT_MAX_COLORS,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleSection {
    pub alpha: f64,
    pub beta: f64,
    pub layer_weights: Vec<f64>,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Longer side of the working copy; 0 keeps full resolution.
    pub working_size: usize,
}

impl Default for StyleSection {
    fn default() -> Self {
        let w = StyleWeights::default();
        let t = TransferSettings::default();
        Self {
            alpha: w.alpha,
            beta: w.beta,
            layer_weights: w.layer_weights,
            iterations: t.iterations,
            learning_rate: t.learning_rate,
            working_size: 0,
        }
    }
}

impl StyleSection {
    pub fn weights(&self) -> StyleWeights {
        StyleWeights {
            alpha: self.alpha,
            beta: self.beta,
            layer_weights: self.layer_weights.clone(),
        }
    }

    pub fn settings(&self, seed: u64) -> TransferSettings {
        TransferSettings {
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n: usize,
    pub size: usize,
    pub eval_pairs: usize,
    /// Fraction of the combined X+Y files placed in the manifest's train split.
    pub train_fraction: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            n: 200,
            size: 32,
            eval_pairs: 0,
            train_fraction: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub port: Option<u16>,
    pub stitch_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

/// The fully resolved configuration of one invocation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// Single source of randomness for every subcommand.
    pub seed: u64,
    pub split: SplitSection,
    pub style: StyleSection,
    /// EmbGAN settings; `train.seed` is always replaced by the top-level seed.
    pub train: GanConfig,
    pub synth: SynthSection,
    pub serve: ServeSection,
}

impl CliConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::usage(format!("invalid config: {e}")))
    }

    /// Defaults overlaid with `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text).map_err(|e| CliError::usage(format!("{}: {}", p.display(), e.message)))
            }
        }
    }

    /// Copies the top-level seed everywhere it is used.
    pub fn finish(mut self) -> Self {
        self.train.seed = self.seed;
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_other_defaults() {
        let cfg = CliConfig::from_toml("seed = 7\n[style]\nbeta = 50.0\n[train.weights]\nlambda_cyc = 3.0\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.style.beta, 50.0);
        assert_eq!(cfg.style.alpha, StyleSection::default().alpha);
        assert_eq!(cfg.train.weights.lambda_cyc, 3.0);
        assert_eq!(cfg.train.weights.lambda_idt, GanConfig::default().weights.lambda_idt);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(CliConfig::from_toml("[style]\nbetta = 1.0\n").is_err());
        assert!(CliConfig::from_toml("[train.generator]\nfilters = 3\n").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = CliConfig::default();
        cfg.seed = 42;
        cfg.serve.port = Some(9000);
        let cfg = cfg.finish();
        assert_eq!(CliConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
