//! The TDCN++ masking network, its two-stage iterative variant and the
//! training loop.
//!
//! Networks see coefficients channel-major (`N × frames`). A
//! [`SeparationModel`] bundles one or two TDCN++ stages with the analysis /
//! synthesis basis and runs either on a [`Tape`](crate::autograd::Tape) for
//! training or through the plain transforms for inference.

mod model;
mod tdcn;
mod train;

pub use model::{itdcn_pp_forward, load_model, save_model, separate, ModelConfig, SeparationModel};
pub use tdcn::{feature_norm, tdcn_pp_forward, tdcn_pp_init, TdcnLayout, TdcnParams, FEATURE_NORM_EPS};
pub use train::{train, TrainConfig, TrainExample, TrainLogRow, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::GradError;
use crate::masking::MaskError;
use crate::objectives::MetricError;
use crate::transforms::{FrameSpec, TransformError};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("input has {got} feature rows, network expects {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error("non-finite training loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("training data: {0}")]
    Data(String),
    #[error("checkpoint does not match the model config: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Stft,
    Learned,
}

/// Sizes of one TDCN++ stage and the basis it sits on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdcnConfig {
    /// Coefficient rows N; for the STFT basis this is the bin count.
    pub n_basis: usize,
    pub bottleneck: usize,
    pub conv_channels: usize,
    pub skip_channels: usize,
    /// Depthwise kernel taps (odd).
    pub kernel: usize,
    pub blocks_per_repeat: usize,
    pub repeats: usize,
    pub n_sources: usize,
    pub basis_kind: BasisKind,
    pub frame_spec: FrameSpec,
    /// Turning normalization off makes each mask frame depend only on input
    /// frames inside the receptive field.
    #[serde(default = "default_true")]
    pub use_feature_norm: bool,
}

fn default_true() -> bool {
    true
}

impl TdcnConfig {
    /// Desk-scale sizes: B=32, H=64, Sc=32, X=4, R=2, P=3, two sources.
    /// N is 64 for the learned basis and the bin count for the STFT.
    pub fn desk(basis_kind: BasisKind, frame_spec: FrameSpec) -> Self {
        let n_basis = match basis_kind {
            BasisKind::Stft => frame_spec.n_bins(),
            BasisKind::Learned => 64,
        };
        Self {
            n_basis,
            bottleneck: 32,
            conv_channels: 64,
            skip_channels: 32,
            kernel: 3,
            blocks_per_repeat: 4,
            repeats: 2,
            n_sources: 2,
            basis_kind,
            frame_spec,
            use_feature_norm: true,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let sizes = [
            ("n_basis", self.n_basis),
            ("bottleneck", self.bottleneck),
            ("conv_channels", self.conv_channels),
            ("skip_channels", self.skip_channels),
            ("kernel", self.kernel),
            ("blocks_per_repeat", self.blocks_per_repeat),
            ("repeats", self.repeats),
            ("n_sources", self.n_sources),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(NetError::Config(format!("{name} must be positive")));
        }
        if self.kernel % 2 == 0 {
            return Err(NetError::Config(format!("kernel must be odd, got {}", self.kernel)));
        }
        if self.n_sources > crate::objectives::MAX_PIT_SOURCES {
            return Err(NetError::Config(format!("at most 4 sources, got {}", self.n_sources)));
        }
        if self.blocks_per_repeat > 16 {
            return Err(NetError::Config("dilation 2^x overflows beyond 16 blocks per repeat".into()));
        }
        FrameSpec::new(
            self.frame_spec.window_len,
            self.frame_spec.hop,
            self.frame_spec.sample_rate_hz,
        )?;
        if self.basis_kind == BasisKind::Stft && self.n_basis != self.frame_spec.n_bins() {
            return Err(NetError::Config(format!(
                "STFT basis with a {}-point FFT has {} bins, config says n_basis = {}",
                self.frame_spec.fft_len,
                self.frame_spec.n_bins(),
                self.n_basis
            )));
        }
        Ok(())
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks_per_repeat * self.repeats
    }
}
