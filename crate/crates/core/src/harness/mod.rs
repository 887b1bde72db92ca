//! Experiment plumbing shared by the command-line tool: TOML experiment
//! configs, PIT-aligned evaluation reports, window sweeps and the gradient
//! check suite.

mod config;
mod eval;
mod gradsuite;
mod sweep;

pub use config::{BasisSection, ExperimentConfig, ExperimentSection, NetworkSection, WINDOWS_MS};
pub use eval::{evaluate_example, evaluate_model, evaluate_model_stages, oracle_eval, read_rows_csv, EvalReport, EvalRow};
pub use gradsuite::{
    check_end_to_end, grad_check_suite, tiny_model_config, GradSuiteReport, SuiteEntry, TINY_SIGNAL_LEN,
};
pub use sweep::{oracle_sweep, run_sweep, write_sweep_csv, SweepCell};

use thiserror::Error;

use crate::autograd::GradError;
use crate::datagen::DataError;
use crate::masking::MaskError;
use crate::nets::NetError;
use crate::objectives::MetricError;
use crate::signal::AudioError;
use crate::transforms::TransformError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Csv(e.to_string())
    }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}
