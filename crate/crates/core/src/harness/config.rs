use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::nets::{BasisKind, ModelConfig, TdcnConfig, TrainConfig};
use crate::transforms::FrameSpec;

/// Basis window sizes an experiment may use, in milliseconds.
pub const WINDOWS_MS: [f64; 5] = [2.5, 5.0, 10.0, 25.0, 50.0];

/// One experiment as a TOML file. The hop is always half the window and
/// the STFT basis size follows from the window, so neither is stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub basis: BasisSection,
    pub network: NetworkSection,
    pub training: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSection {
    pub task: String,
    /// `manifest.jsonl` of a rendered dataset.
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSection {
    pub kind: BasisKind,
    pub window_ms: f64,
    pub sample_rate_hz: u32,
    /// Learned basis size; ignored for the STFT.
    pub n_learned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSection {
    pub bottleneck: usize,
    pub conv_channels: usize,
    pub skip_channels: usize,
    pub kernel: usize,
    pub blocks_per_repeat: usize,
    pub repeats: usize,
    pub n_sources: usize,
    pub use_feature_norm: bool,
    pub iterative: bool,
}

impl ExperimentConfig {
    /// Desk-scale defaults for `kind` at `window_ms`.
    pub fn desk(task: &str, kind: BasisKind, window_ms: f64) -> Result<Self, HarnessError> {
        let spec = FrameSpec::from_window_ms(window_ms, crate::signal::DEFAULT_SAMPLE_RATE)?;
        let net = TdcnConfig::desk(kind, spec);
        let cfg = Self {
            experiment: ExperimentSection {
                task: task.to_string(),
                manifest: PathBuf::from("data/manifest.jsonl"),
                output_dir: PathBuf::from(format!("runs/{task}")),
            },
            basis: BasisSection {
                kind,
                window_ms,
                sample_rate_hz: spec.sample_rate_hz,
                n_learned: 64,
            },
            network: NetworkSection {
                bottleneck: net.bottleneck,
                conv_channels: net.conv_channels,
                skip_channels: net.skip_channels,
                kernel: net.kernel,
                blocks_per_repeat: net.blocks_per_repeat,
                repeats: net.repeats,
                n_sources: net.n_sources,
                use_feature_norm: net.use_feature_norm,
                iterative: false,
            },
            training: TrainConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn frame_spec(&self) -> Result<FrameSpec, HarnessError> {
        if !WINDOWS_MS.contains(&self.basis.window_ms) {
            return Err(HarnessError::Config(format!(
                "window_ms = {} is not one of {WINDOWS_MS:?}",
                self.basis.window_ms
            )));
        }
        Ok(FrameSpec::from_window_ms(self.basis.window_ms, self.basis.sample_rate_hz)?)
    }

    pub fn model_config(&self) -> Result<ModelConfig, HarnessError> {
        let spec = self.frame_spec()?;
        let n = &self.network;
        let network = TdcnConfig {
            n_basis: match self.basis.kind {
                BasisKind::Stft => spec.n_bins(),
                BasisKind::Learned => self.basis.n_learned,
            },
            bottleneck: n.bottleneck,
            conv_channels: n.conv_channels,
            skip_channels: n.skip_channels,
            kernel: n.kernel,
            blocks_per_repeat: n.blocks_per_repeat,
            repeats: n.repeats,
            n_sources: n.n_sources,
            basis_kind: self.basis.kind,
            frame_spec: spec,
            use_feature_norm: n.use_feature_norm,
        };
        network.validate()?;
        Ok(ModelConfig {
            network,
            iterative: n.iterative,
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.model_config()?;
        let t = &self.training;
        if t.steps == 0 || t.batch_size == 0 || !(t.crop_s >= 0.0) || !(t.snr_tau >= 0.0) {
            return Err(HarnessError::Config(format!("invalid training section {t:?}")));
        }
        Ok(())
    }

    /// Same experiment at another window size.
    pub fn with_window(&self, window_ms: f64) -> Result<Self, HarnessError> {
        let mut cfg = self.clone();
        cfg.basis.window_ms = window_ms;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Directory holding the manifest, i.e. the dataset root.
    pub fn dataset_dir(&self) -> &Path {
        self.experiment.manifest.parent().unwrap_or(Path::new("."))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(super::io_err(path))?)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_toml()).map_err(super::io_err(path))
    }
}
