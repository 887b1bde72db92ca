use rand::Rng;

use super::stft::{check_target, padded_signal};
use super::{CoeffData, CoeffFrames, CoeffKind, FrameSpec, TransformError};
use crate::signal::{seeded_rng, Waveform};

/// A learnable real analysis/synthesis basis: `n_basis` rows of
/// `window_len` taps each, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedBasis {
    pub analysis: Vec<f64>,
    pub synthesis: Vec<f64>,
    pub n_basis: usize,
    pub spec: FrameSpec,
}

impl LearnedBasis {
    /// Entries i.i.d. uniform in `[-1/sqrt(window_len), 1/sqrt(window_len)]`.
    pub fn init(n_basis: usize, spec: FrameSpec, seed: u64) -> Self {
        let w = spec.window_len;
        let bound = 1.0 / (w as f64).sqrt();
        let mut rng = seeded_rng(seed);
        let draw = |rng: &mut crate::signal::SeedRng| -> Vec<f64> {
            loop {
                let m: Vec<f64> = (0..n_basis * w).map(|_| rng.gen_range(-bound..=bound)).collect();
                if m.chunks(w).all(|row| row.iter().any(|&v| v != 0.0)) {
                    return m;
                }
            }
        };
        let analysis = draw(&mut rng);
        let synthesis = draw(&mut rng);
        Self {
            analysis,
            synthesis,
            n_basis,
            spec,
        }
    }

    pub fn from_matrices(
        analysis: Vec<f64>,
        synthesis: Vec<f64>,
        n_basis: usize,
        spec: FrameSpec,
    ) -> Result<Self, TransformError> {
        let want = n_basis * spec.window_len;
        if analysis.len() != want || synthesis.len() != want {
            return Err(TransformError::Dimension(format!(
                "basis matrices need {n_basis}×{} = {want} entries, got {} and {}",
                spec.window_len,
                analysis.len(),
                synthesis.len()
            )));
        }
        Ok(Self {
            analysis,
            synthesis,
            n_basis,
            spec,
        })
    }
}

/// `coeffs[t, n] = max(0, <analysis_n, frame_t>)`: a strided 1-D convolution
/// followed by a ReLU.
pub fn learned_analysis(waveform: &Waveform, basis: &LearnedBasis) -> Result<CoeffFrames, TransformError> {
    let spec = &basis.spec;
    if spec.sample_rate_hz != waveform.sample_rate_hz() {
        return Err(TransformError::RateMismatch {
            expected: spec.sample_rate_hz,
            actual: waveform.sample_rate_hz(),
        });
    }
    let w = spec.window_len;
    let padded = padded_signal(waveform.samples(), spec);
    let n_frames = spec.n_frames(waveform.len());
    let mut data = Vec::with_capacity(n_frames * basis.n_basis);
    for t in 0..n_frames {
        let frame = &padded[t * spec.hop..t * spec.hop + w];
        for row in basis.analysis.chunks(w) {
            let dot: f64 = row.iter().zip(frame).map(|(a, x)| a * x).sum();
            data.push(dot.max(0.0));
        }
    }
    Ok(CoeffFrames {
        data: CoeffData::Real(data),
        n_frames,
        n_bins: basis.n_basis,
        spec: *spec,
        original_len: waveform.len(),
    })
}

/// Transposed 1-D convolution: each frame is `synthesisᵀ · coeffs[t]`, and
/// raw frames are overlap-added with stride `hop` (no synthesis window).
pub fn learned_synthesis(
    coeffs: &CoeffFrames,
    basis: &LearnedBasis,
    target_len: usize,
) -> Result<Waveform, TransformError> {
    let data = coeffs.as_real().ok_or(TransformError::KindMismatch {
        expected: CoeffKind::RealLearned,
        actual: coeffs.kind(),
    })?;
    if coeffs.n_bins != basis.n_basis || coeffs.spec != basis.spec {
        return Err(TransformError::Dimension(format!(
            "coefficients have {} bins, basis has {} rows",
            coeffs.n_bins, basis.n_basis
        )));
    }
    check_target(coeffs, target_len)?;
    let spec = &basis.spec;
    let w = spec.window_len;
    let mut out = vec![0.0; spec.padded_len(target_len)];
    for t in 0..coeffs.n_frames {
        let row = &data[t * coeffs.n_bins..(t + 1) * coeffs.n_bins];
        let frame = &mut out[t * spec.hop..t * spec.hop + w];
        for (&c, basis_row) in row.iter().zip(basis.synthesis.chunks(w)) {
            if c != 0.0 {
                frame.iter_mut().zip(basis_row).for_each(|(o, b)| *o += c * b);
            }
        }
    }
    let pre = spec.pre_pad();
    Ok(Waveform::from_trusted(
        out[pre..pre + target_len].to_vec(),
        spec.sample_rate_hz,
    ))
}
