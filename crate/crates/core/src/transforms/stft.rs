use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{CoeffData, CoeffFrames, CoeffKind, FrameSpec, TransformError};
use crate::signal::Waveform;

/// Square root of the periodic Hann window. `w[n]^2 + w[n + len/2]^2 = 1`.
pub fn sqrt_hann_window(window_len: usize) -> Result<Vec<f64>, TransformError> {
    if window_len < 2 || window_len % 2 != 0 {
        return Err(TransformError::BadWindow(window_len));
    }
    Ok((0..window_len)
        .map(|n| {
            let hann = 0.5 - 0.5 * (2.0 * PI * n as f64 / window_len as f64).cos();
            hann.max(0.0).sqrt()
        })
        .collect())
}

fn check_rate(spec: &FrameSpec, waveform: &Waveform) -> Result<(), TransformError> {
    if spec.sample_rate_hz != waveform.sample_rate_hz() {
        return Err(TransformError::RateMismatch {
            expected: spec.sample_rate_hz,
            actual: waveform.sample_rate_hz(),
        });
    }
    Ok(())
}

pub(crate) fn check_target(coeffs: &CoeffFrames, target_len: usize) -> Result<(), TransformError> {
    let expected = coeffs.spec.n_frames(target_len);
    if expected != coeffs.n_frames {
        return Err(TransformError::FrameCount {
            target_len,
            expected,
            actual: coeffs.n_frames,
        });
    }
    Ok(())
}

/// Zero-padded copy of the signal laid out for framing.
pub(crate) fn padded_signal(samples: &[f64], spec: &FrameSpec) -> Vec<f64> {
    let mut padded = vec![0.0; spec.padded_len(samples.len())];
    let pre = spec.pre_pad();
    padded[pre..pre + samples.len()].copy_from_slice(samples);
    padded
}

/// Forward STFT with a sqrt-Hann analysis window; frames are zero-padded to
/// `fft_len` and only the non-negative frequency bins are kept.
pub fn stft(waveform: &Waveform, spec: &FrameSpec) -> Result<CoeffFrames, TransformError> {
    check_rate(spec, waveform)?;
    let window = sqrt_hann_window(spec.window_len)?;
    let padded = padded_signal(waveform.samples(), spec);
    let n_frames = spec.n_frames(waveform.len());
    let n_bins = spec.n_bins();
    let fft = FftPlanner::new().plan_fft_forward(spec.fft_len);
    let mut buf = vec![Complex::new(0.0, 0.0); spec.fft_len];
    let mut data = Vec::with_capacity(n_frames * n_bins);
    for t in 0..n_frames {
        let frame = &padded[t * spec.hop..t * spec.hop + spec.window_len];
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (b, (&x, &w)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            b.re = x * w;
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..n_bins]);
    }
    Ok(CoeffFrames {
        data: CoeffData::Complex(data),
        n_frames,
        n_bins,
        spec: *spec,
        original_len: waveform.len(),
    })
}

/// Overlap-added squared synthesis window over the cropped output region.
pub fn synthesis_gain(spec: &FrameSpec, target_len: usize) -> Result<Vec<f64>, TransformError> {
    let window = sqrt_hann_window(spec.window_len)?;
    let n_frames = spec.n_frames(target_len);
    let mut acc = vec![0.0; spec.padded_len(target_len)];
    for t in 0..n_frames {
        for (j, w) in window.iter().enumerate() {
            acc[t * spec.hop + j] += w * w;
        }
    }
    let pre = spec.pre_pad();
    Ok(acc[pre..pre + target_len].to_vec())
}

fn overlap_add_frames(
    coeffs: &CoeffFrames,
    target_len: usize,
    mut frame_fn: impl FnMut(&[Complex<f64>], &mut [Complex<f64>]),
) -> Result<Vec<f64>, TransformError> {
    let spec = &coeffs.spec;
    let data = coeffs.as_complex().ok_or(TransformError::KindMismatch {
        expected: CoeffKind::ComplexStft,
        actual: coeffs.kind(),
    })?;
    check_target(coeffs, target_len)?;
    let window = sqrt_hann_window(spec.window_len)?;
    let mut out = vec![0.0; spec.padded_len(target_len)];
    let mut buf = vec![Complex::new(0.0, 0.0); spec.fft_len];
    for t in 0..coeffs.n_frames {
        let row = &data[t * coeffs.n_bins..(t + 1) * coeffs.n_bins];
        frame_fn(row, &mut buf);
        for (j, w) in window.iter().enumerate() {
            out[t * spec.hop + j] += buf[j].re * w;
        }
    }
    let pre = spec.pre_pad();
    Ok(out[pre..pre + target_len].to_vec())
}

/// Inverse STFT: per-frame inverse real FFT, truncation to the window,
/// sqrt-Hann synthesis window, overlap-add, and division by the summed
/// squared window wherever it is nonzero.
pub fn istft(coeffs: &CoeffFrames, target_len: usize) -> Result<Waveform, TransformError> {
    let n = coeffs.spec.fft_len;
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let scale = 1.0 / n as f64;
    let mut samples = overlap_add_frames(coeffs, target_len, |row, buf| {
        buf[0] = row[0];
        for k in 1..n / 2 {
            buf[k] = row[k];
            buf[n - k] = row[k].conj();
        }
        buf[n / 2] = row[n / 2];
        ifft.process(buf);
        buf.iter_mut().for_each(|c| *c *= scale);
    })?;
    let gain = synthesis_gain(&coeffs.spec, target_len)?;
    for (s, g) in samples.iter_mut().zip(&gain) {
        if *g > f64::EPSILON {
            *s /= g;
        }
    }
    Ok(Waveform::from_trusted(samples, coeffs.spec.sample_rate_hz))
}

/// Exact adjoint of [`stft`] under the real inner product on (re, im) pairs.
pub fn stft_adjoint(coeffs: &CoeffFrames, target_len: usize) -> Result<Waveform, TransformError> {
    let n = coeffs.spec.fft_len;
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let samples = overlap_add_frames(coeffs, target_len, |row, buf| {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        buf[..row.len()].copy_from_slice(row);
        ifft.process(buf);
    })?;
    Ok(Waveform::from_trusted(samples, coeffs.spec.sample_rate_hz))
}

/// `ln(|X| + 1e-5)` features, bins × frames (channel-major) for the masking
/// network.
pub fn log_magnitude_features(coeffs: &CoeffFrames) -> Vec<f64> {
    let mags = coeffs.magnitudes();
    let mut out = vec![0.0; mags.len()];
    for t in 0..coeffs.n_frames {
        for k in 0..coeffs.n_bins {
            out[k * coeffs.n_frames + t] = (mags[t * coeffs.n_bins + k] + LOG_FLOOR).ln();
        }
    }
    out
}

pub(crate) const LOG_FLOOR: f64 = 1e-5;

/// Dense real matrices realizing the windowed STFT and its inverse frame by
/// frame. Used by the differentiable pipeline, where the transform must be a
/// composition of recorded linear operators.
#[derive(Debug, Clone)]
pub struct StftMatrices {
    /// bins × window: `re[k][j] = w[j] cos(2πkj/N)`
    pub analysis_re: Vec<f64>,
    /// bins × window: `im[k][j] = -w[j] sin(2πkj/N)`
    pub analysis_im: Vec<f64>,
    /// window × bins: inverse real DFT of the real parts, times the window.
    pub synthesis_re: Vec<f64>,
    /// window × bins: inverse real DFT of the imaginary parts, times the window.
    pub synthesis_im: Vec<f64>,
    pub n_bins: usize,
    pub window_len: usize,
}

impl StftMatrices {
    pub fn new(spec: &FrameSpec) -> Result<Self, TransformError> {
        let window = sqrt_hann_window(spec.window_len)?;
        let (n, w, b) = (spec.fft_len, spec.window_len, spec.n_bins());
        let mut analysis_re = vec![0.0; b * w];
        let mut analysis_im = vec![0.0; b * w];
        let mut synthesis_re = vec![0.0; w * b];
        let mut synthesis_im = vec![0.0; w * b];
        for k in 0..b {
            // Hermitian weight: interior bins appear twice in the full spectrum
            let weight = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
            for j in 0..w {
                let arg = 2.0 * PI * ((k * j) % n) as f64 / n as f64;
                let (s, c) = arg.sin_cos();
                analysis_re[k * w + j] = window[j] * c;
                analysis_im[k * w + j] = -window[j] * s;
                synthesis_re[j * b + k] = window[j] * weight * c / n as f64;
                synthesis_im[j * b + k] = if weight == 1.0 {
                    0.0
                } else {
                    -window[j] * weight * s / n as f64
                };
            }
        }
        Ok(Self {
            analysis_re,
            analysis_im,
            synthesis_re,
            synthesis_im,
            n_bins: b,
            window_len: w,
        })
    }
}
