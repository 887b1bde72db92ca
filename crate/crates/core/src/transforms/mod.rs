//! Framewise analysis-synthesis transforms.
//!
//! Both transform pairs share one framing policy: the signal is pre-padded
//! with `window_len - hop` zeros and post-padded until every original sample
//! is covered by the full set of overlapping frames. Synthesis crops the
//! same region back out, so frame counts agree between the STFT and the
//! learned basis for an identical [`FrameSpec`].

mod container;
mod learned;
mod stft;

pub use container::{read_coeffs, write_coeffs};
pub use learned::{learned_analysis, learned_synthesis, LearnedBasis};
pub use stft::{
    istft, log_magnitude_features, sqrt_hann_window, stft, stft_adjoint, synthesis_gain,
    StftMatrices,
};

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("window length {0} must be even and at least 2")]
    BadWindow(usize),
    #[error("hop {hop} must be a positive divisor of window length {window_len}")]
    BadHop { window_len: usize, hop: usize },
    #[error("window of {0} ms is not a whole, even number of samples at this rate")]
    BadWindowMs(f64),
    #[error("sample rate mismatch: frames at {expected} Hz, signal at {actual} Hz")]
    RateMismatch { expected: u32, actual: u32 },
    #[error("expected {expected:?} coefficients, got {actual:?}")]
    KindMismatch { expected: CoeffKind, actual: CoeffKind },
    #[error("target length {target_len} needs {expected} frames, coefficients have {actual}")]
    FrameCount {
        target_len: usize,
        expected: usize,
        actual: usize,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("coefficient container: {0}")]
    Container(String),
}

/// Framing parameters shared by the STFT and the learned basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub window_len: usize,
    pub hop: usize,
    /// Smallest power of two not below `window_len`.
    pub fft_len: usize,
    pub sample_rate_hz: u32,
}

impl FrameSpec {
    pub fn new(window_len: usize, hop: usize, sample_rate_hz: u32) -> Result<Self, TransformError> {
        if window_len < 2 || window_len % 2 != 0 {
            return Err(TransformError::BadWindow(window_len));
        }
        if hop == 0 || window_len % hop != 0 {
            return Err(TransformError::BadHop { window_len, hop });
        }
        Ok(Self {
            window_len,
            hop,
            fft_len: window_len.next_power_of_two(),
            sample_rate_hz,
        })
    }

    /// Window of `window_ms` milliseconds with a hop of half the window.
    pub fn from_window_ms(window_ms: f64, sample_rate_hz: u32) -> Result<Self, TransformError> {
        let exact = window_ms * sample_rate_hz as f64 / 1000.0;
        let window_len = exact.round();
        if (exact - window_len).abs() > 1e-9 || window_len < 2.0 || window_len as usize % 2 != 0 {
            return Err(TransformError::BadWindowMs(window_ms));
        }
        let window_len = window_len as usize;
        Self::new(window_len, window_len / 2, sample_rate_hz)
    }

    pub fn n_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// Zeros prepended before the first frame.
    pub fn pre_pad(&self) -> usize {
        self.window_len - self.hop
    }

    /// Number of frames covering a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        let span = (len + self.window_len).saturating_sub(2 * self.hop);
        span.div_ceil(self.hop) + 1
    }

    /// Length of the padded signal the frames tile exactly.
    pub fn padded_len(&self, len: usize) -> usize {
        (self.n_frames(len) - 1) * self.hop + self.window_len
    }

    pub fn window_ms(&self) -> f64 {
        self.window_len as f64 * 1000.0 / self.sample_rate_hz as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffKind {
    ComplexStft,
    RealLearned,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CoeffData {
    Complex(Vec<Complex<f64>>),
    Real(Vec<f64>),
}

/// A frames × bins coefficient matrix, stored row-major, with the framing it
/// came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffFrames {
    pub data: CoeffData,
    pub n_frames: usize,
    pub n_bins: usize,
    pub spec: FrameSpec,
    pub original_len: usize,
}

impl CoeffFrames {
    pub fn kind(&self) -> CoeffKind {
        match self.data {
            CoeffData::Complex(_) => CoeffKind::ComplexStft,
            CoeffData::Real(_) => CoeffKind::RealLearned,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_frames, self.n_bins)
    }

    pub fn zeros_like(&self) -> Self {
        let data = match &self.data {
            CoeffData::Complex(v) => CoeffData::Complex(vec![Complex::new(0.0, 0.0); v.len()]),
            CoeffData::Real(v) => CoeffData::Real(vec![0.0; v.len()]),
        };
        Self { data, ..self.clone() }
    }

    /// |c| for every coefficient, row-major.
    pub fn magnitudes(&self) -> Vec<f64> {
        match &self.data {
            CoeffData::Complex(v) => v.iter().map(|c| c.norm()).collect(),
            CoeffData::Real(v) => v.iter().map(|c| c.abs()).collect(),
        }
    }

    pub fn as_complex(&self) -> Option<&[Complex<f64>]> {
        match &self.data {
            CoeffData::Complex(v) => Some(v),
            CoeffData::Real(_) => None,
        }
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match &self.data {
            CoeffData::Real(v) => Some(v),
            CoeffData::Complex(_) => None,
        }
    }

    /// Real inner product, treating complex values as (re, im) pairs.
    pub fn inner(&self, other: &CoeffFrames) -> f64 {
        match (&self.data, &other.data) {
            (CoeffData::Complex(a), CoeffData::Complex(b)) => {
                a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
            }
            (CoeffData::Real(a), CoeffData::Real(b)) => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            _ => panic!("inner product across coefficient kinds"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_spec_from_milliseconds() {
        let s = FrameSpec::from_window_ms(2.5, 16_000).unwrap();
        assert_eq!((s.window_len, s.hop, s.fft_len, s.n_bins()), (40, 20, 64, 33));
        let s = FrameSpec::from_window_ms(10.0, 16_000).unwrap();
        assert_eq!((s.window_len, s.hop, s.fft_len), (160, 80, 256));
        let s = FrameSpec::from_window_ms(50.0, 16_000).unwrap();
        assert_eq!((s.window_len, s.fft_len), (800, 1024));
        // already a power of two stays put
        assert_eq!(FrameSpec::new(256, 128, 16_000).unwrap().fft_len, 256);
        assert!(FrameSpec::from_window_ms(0.03, 16_000).is_err());
    }

    #[test]
    fn invalid_frame_specs() {
        assert_eq!(FrameSpec::new(7, 1, 8000), Err(TransformError::BadWindow(7)));
        assert_eq!(FrameSpec::new(0, 1, 8000), Err(TransformError::BadWindow(0)));
        assert!(matches!(FrameSpec::new(8, 3, 8000), Err(TransformError::BadHop { .. })));
        assert!(matches!(FrameSpec::new(8, 0, 8000), Err(TransformError::BadHop { .. })));
    }

    #[test]
    fn frame_count_matches_padding_policy() {
        let s = FrameSpec::new(40, 20, 16_000).unwrap();
        for len in [0usize, 1, 19, 20, 21, 40, 399, 48_000] {
            let t = s.n_frames(len);
            let padded = s.padded_len(len);
            assert_eq!(t, (padded - s.window_len) / s.hop + 1);
            // the last original sample sits in the final hop-aligned region
            assert!(padded >= s.pre_pad() + len + s.pre_pad());
            assert!(padded < s.pre_pad() + len + s.pre_pad() + s.hop);
        }
        assert_eq!(s.n_frames(48_000), 2401);
    }
}
