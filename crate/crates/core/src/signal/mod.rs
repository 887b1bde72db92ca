//! Time-domain signals: the [`Waveform`] type, WAV file I/O, seeded random
//! streams and synthetic source generators.

mod rng;
mod synth;
mod wav;

pub use rng::{derive_seed, seeded_rng, SeedRng};
pub use synth::{synth_source, SynthKind, SynthSpec};
pub use wav::{read_wav, write_wav, WavEncoding};

use thiserror::Error;

/// Default sample rate used across the toolkit.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot read audio file {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: hound::Error,
    },
    #[error("unsupported WAV encoding in {path}: {format} {bits}-bit")]
    UnsupportedEncoding {
        path: String,
        format: &'static str,
        bits: u16,
    },
    #[error("audio file {0} contains no samples")]
    Empty(String),
    #[error("cannot write audio file {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: hound::Error,
    },
    #[error("sample {index} = {value} is outside [-1, 1]; PCM16 output needs the clip flag")]
    OutOfRange { index: usize, value: f64 },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("invalid synth spec: {0}")]
    InvalidSynth(String),
}

/// Mono audio with its sample rate. Samples are finite 64-bit floats with a
/// nominal range of [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if sample_rate_hz == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Self {
        assert!(sample_rate_hz > 0, "sample rate must be positive");
        Self {
            samples: vec![0.0; len],
            sample_rate_hz,
        }
    }

    /// Builds a waveform without the finiteness scan. Callers guarantee the
    /// invariants hold.
    pub(crate) fn from_trusted(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Samples `[start, start + len)`, zero-filled outside the signal.
    pub fn segment(&self, start: isize, len: usize) -> Waveform {
        let n = self.samples.len() as isize;
        let samples = (0..len as isize)
            .map(|i| {
                let j = start + i;
                if j >= 0 && j < n {
                    self.samples[j as usize]
                } else {
                    0.0
                }
            })
            .collect();
        Self::from_trusted(samples, self.sample_rate_hz)
    }
}
