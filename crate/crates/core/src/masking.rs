//! Mask application, mixture consistency and oracle binary masking.

use thiserror::Error;

use crate::signal::Waveform;
use crate::transforms::{istft, stft, CoeffData, CoeffFrames, CoeffKind, FrameSpec, TransformError};

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("shape mismatch: masks are {masks:?}, coefficients are {coeffs:?}")]
    Shape {
        masks: (usize, usize),
        coeffs: (usize, usize),
    },
    #[error("signal length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("at least {needed} sources required, got {got}")]
    TooFewSources { needed: usize, got: usize },
    #[error("mask value {value} at flat index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("oracle masks need complex STFT references, got {0:?}")]
    NotStft(CoeffKind),
    #[error("references were framed differently")]
    SpecMismatch,
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// K masks in [0, 1], each `n_frames × n_bins`, stored source-major then
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    values: Vec<f64>,
    n_sources: usize,
    n_frames: usize,
    n_bins: usize,
}

impl MaskSet {
    pub fn new(values: Vec<f64>, n_sources: usize, n_frames: usize, n_bins: usize) -> Result<Self, MaskError> {
        if values.len() != n_sources * n_frames * n_bins {
            return Err(MaskError::Shape {
                masks: (n_frames, n_bins),
                coeffs: (values.len(), n_sources),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(MaskError::OutOfRange { index, value });
        }
        Ok(Self {
            values,
            n_sources,
            n_frames,
            n_bins,
        })
    }

    pub fn constant(value: f64, n_sources: usize, n_frames: usize, n_bins: usize) -> Result<Self, MaskError> {
        Self::new(vec![value; n_sources * n_frames * n_bins], n_sources, n_frames, n_bins)
    }

    pub fn n_sources(&self) -> usize {
        self.n_sources
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_frames, self.n_bins)
    }

    /// Mask of source `k`, row-major `n_frames × n_bins`.
    pub fn mask(&self, k: usize) -> &[f64] {
        let size = self.n_frames * self.n_bins;
        &self.values[k * size..(k + 1) * size]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `estimate_k[t, n] = mask_k[t, n] · mixture[t, n]`; real masks scale complex
/// STFT values without touching their phase.
pub fn apply_masks(masks: &MaskSet, mixture: &CoeffFrames) -> Result<Vec<CoeffFrames>, MaskError> {
    if masks.shape() != mixture.shape() {
        return Err(MaskError::Shape {
            masks: masks.shape(),
            coeffs: mixture.shape(),
        });
    }
    Ok((0..masks.n_sources())
        .map(|k| {
            let m = masks.mask(k);
            let data = match &mixture.data {
                CoeffData::Complex(v) => CoeffData::Complex(v.iter().zip(m).map(|(c, g)| c * *g).collect()),
                CoeffData::Real(v) => CoeffData::Real(v.iter().zip(m).map(|(c, g)| c * g).collect()),
            };
            CoeffFrames {
                data,
                ..mixture.clone()
            }
        })
        .collect())
}

/// Correction steps per sample. Two suffice in practice: the second only
/// cleans up the roundoff of the first.
const CONSISTENCY_STEPS: usize = 8;

/// Uniform mixture-consistency projection:
/// `s'_k = s_k + (x - Σ_j s_j) / K`, after which the estimates sum to `x`.
///
/// A residual within `K/2 · ε · (|x| + Σ_j |s_j|)` is treated as zero, and
/// the correction is repeated until the residual is that small. The output
/// is therefore a fixed point: projecting it again returns it bit for bit.
pub fn mixture_consistency(estimates: &[Waveform], mixture: &Waveform) -> Result<Vec<Waveform>, MaskError> {
    let k = estimates.len();
    if k == 0 {
        return Err(MaskError::TooFewSources { needed: 1, got: 0 });
    }
    let len = mixture.len();
    if let Some(bad) = estimates.iter().find(|e| e.len() != len) {
        return Err(MaskError::Length(bad.len(), len));
    }
    let roundoff = 0.5 * k as f64 * f64::EPSILON;
    let mut out: Vec<Vec<f64>> = estimates.iter().map(|e| e.samples().to_vec()).collect();
    let mut column = vec![0.0; k];
    for (i, &x) in mixture.samples().iter().enumerate() {
        column.iter_mut().zip(&out).for_each(|(c, o)| *c = o[i]);
        for _ in 0..CONSISTENCY_STEPS {
            let (total, size) = column.iter().fold((0.0, x.abs()), |(t, m), v| (t + v, m + v.abs()));
            let d = x - total;
            if d.abs() <= roundoff * size {
                break;
            }
            column.iter_mut().for_each(|c| *c += d / k as f64);
        }
        out.iter_mut().zip(&column).for_each(|(o, c)| o[i] = *c);
    }
    Ok(out
        .into_iter()
        .zip(estimates)
        .map(|(s, e)| Waveform::from_trusted(s, e.sample_rate_hz()))
        .collect())
}

/// Binary masks selecting, per time-frequency bin, the reference with the
/// largest magnitude; ties go to the lowest source index.
pub fn oracle_binary_mask(references: &[CoeffFrames]) -> Result<MaskSet, MaskError> {
    let k = references.len();
    if k < 2 {
        return Err(MaskError::TooFewSources { needed: 2, got: k });
    }
    let first = &references[0];
    for r in references {
        if r.kind() != CoeffKind::ComplexStft {
            return Err(MaskError::NotStft(r.kind()));
        }
        if r.shape() != first.shape() {
            return Err(MaskError::Shape {
                masks: first.shape(),
                coeffs: r.shape(),
            });
        }
        if r.spec != first.spec {
            return Err(MaskError::SpecMismatch);
        }
    }
    let mags: Vec<Vec<f64>> = references.iter().map(CoeffFrames::magnitudes).collect();
    let size = first.n_frames * first.n_bins;
    let mut values = vec![0.0; k * size];
    for i in 0..size {
        let mut best = 0;
        for s in 1..k {
            if mags[s][i] > mags[best][i] {
                best = s;
            }
        }
        values[best * size + i] = 1.0;
    }
    MaskSet::new(values, k, first.n_frames, first.n_bins)
}

/// Oracle binary-mask separation: STFT every signal, build the oracle masks
/// from the references, mask the mixture and invert.
pub fn separate_oracle(
    mixture: &Waveform,
    references: &[Waveform],
    spec: &FrameSpec,
) -> Result<Vec<Waveform>, MaskError> {
    if let Some(bad) = references.iter().find(|r| r.len() != mixture.len()) {
        return Err(MaskError::Length(bad.len(), mixture.len()));
    }
    let ref_coeffs = references
        .iter()
        .map(|r| stft(r, spec))
        .collect::<Result<Vec<_>, _>>()?;
    let masks = oracle_binary_mask(&ref_coeffs)?;
    let mix = stft(mixture, spec)?;
    apply_masks(&masks, &mix)?
        .iter()
        .map(|c| istft(c, mixture.len()).map_err(MaskError::from))
        .collect()
}
