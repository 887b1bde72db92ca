use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::signal::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipParams {
    pub clip_len_s: f64,
    /// Clip centres sit up to this far after the event.
    pub max_offset_s: f64,
    /// Silent gap between repetitions of looped short files.
    pub max_loop_delay_s: f64,
    /// Each source is attenuated by a gain drawn uniformly in
    /// `[-max_gain_db, 0]` dB. Zero leaves every source at unit gain.
    #[serde(default)]
    pub max_gain_db: f64,
}

impl Default for ClipParams {
    fn default() -> Self {
        Self {
            clip_len_s: 3.0,
            max_offset_s: 0.5,
            max_loop_delay_s: 1.0,
            max_gain_db: 0.0,
        }
    }
}

impl ClipParams {
    pub fn clip_len(&self, sample_rate_hz: u32) -> usize {
        (self.clip_len_s * sample_rate_hz as f64).round() as usize
    }

    pub(crate) fn validate(&self) -> Result<(), DataError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        let all_ok = ok(self.clip_len_s) && ok(self.max_offset_s) && ok(self.max_loop_delay_s) && ok(self.max_gain_db);
        if !(self.clip_len_s > 0.0) || !all_ok {
            return Err(DataError::Param(format!("invalid clip parameters {self:?}")));
        }
        Ok(())
    }
}

/// Where a clip is cut from its source file, in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipPlacement {
    pub event_sample: usize,
    pub offset_samples: usize,
    /// Present for files shorter than the clip, which are tiled from their
    /// start with this gap between repetitions.
    pub loop_delay_samples: Option<usize>,
}

pub fn draw_placement(
    file_len: usize,
    sample_rate_hz: u32,
    event_sample: usize,
    params: &ClipParams,
    rng: &mut impl Rng,
) -> ClipPlacement {
    let sr = sample_rate_hz as f64;
    if file_len < params.clip_len(sample_rate_hz) {
        let max_delay = (params.max_loop_delay_s * sr).round() as usize;
        ClipPlacement {
            event_sample,
            offset_samples: 0,
            loop_delay_samples: Some(rng.gen_range(0..=max_delay)),
        }
    } else {
        let max_offset = (params.max_offset_s * sr).round() as usize;
        ClipPlacement {
            event_sample,
            offset_samples: rng.gen_range(0..=max_offset),
            loop_delay_samples: None,
        }
    }
}

/// Cuts `clip_len` samples centred on `event + offset`, zero-padded past the
/// file bounds, or tiles a short file from its first sample.
pub fn place_clip(source: &Waveform, placement: &ClipPlacement, clip_len: usize) -> Waveform {
    match placement.loop_delay_samples {
        Some(delay) if !source.is_empty() => {
            let mut out = vec![0.0; clip_len];
            let mut pos = 0;
            while pos < clip_len {
                let n = source.len().min(clip_len - pos);
                out[pos..pos + n].copy_from_slice(&source.samples()[..n]);
                pos += source.len() + delay;
            }
            Waveform::new(out, source.sample_rate_hz()).expect("copied samples are finite")
        }
        _ => {
            let center = (placement.event_sample + placement.offset_samples) as isize;
            source.segment(center - (clip_len / 2) as isize, clip_len)
        }
    }
}

/// Draws a placement for `event_sample` and cuts the clip.
pub fn extract_clip(
    source: &Waveform,
    event_sample: usize,
    params: &ClipParams,
    rng: &mut impl Rng,
) -> Result<(Waveform, ClipPlacement), DataError> {
    params.validate()?;
    let placement = draw_placement(source.len(), source.sample_rate_hz(), event_sample, params, rng);
    Ok((place_clip(source, &placement, params.clip_len(source.sample_rate_hz())), placement))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::seeded_rng;

    fn ramp(len: usize) -> Waveform {
        Waveform::new((0..len).map(|i| (i + 1) as f64 / len as f64).collect(), 16_000).unwrap()
    }

    #[test]
    fn centred_cut_with_zero_offset() {
        let src = ramp(160_000);
        let p = ClipPlacement {
            event_sample: 80_000,
            offset_samples: 0,
            loop_delay_samples: None,
        };
        let clip = place_clip(&src, &p, 48_000);
        assert_eq!(clip.samples(), &src.samples()[56_000..104_000]);
    }

    #[test]
    fn cut_past_the_end_is_zero_padded() {
        let src = ramp(60_000);
        let p = ClipPlacement {
            event_sample: 59_000,
            offset_samples: 8000,
            loop_delay_samples: None,
        };
        let clip = place_clip(&src, &p, 48_000);
        assert_eq!(clip.len(), 48_000);
        assert_eq!(clip.samples()[0], src.samples()[43_000]);
        assert!(clip.samples()[17_000..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_files_are_tiled_with_the_drawn_gap() {
        let src = ramp(16_000);
        let mut rng = seeded_rng(3);
        let (clip, p) = extract_clip(&src, 0, &ClipParams::default(), &mut rng).unwrap();
        let gap = p.loop_delay_samples.unwrap();
        assert!(gap <= 16_000);
        assert_eq!(clip.len(), 48_000);
        assert_eq!(&clip.samples()[..16_000], src.samples());
        assert!(clip.samples()[16_000..16_000 + gap].iter().all(|&v| v == 0.0));
        let second = 16_000 + gap;
        assert_eq!(&clip.samples()[second..second + 16_000], src.samples());
    }

    #[test]
    fn every_output_has_clip_length() {
        let mut rng = seeded_rng(9);
        for len in [1usize, 100, 47_999, 48_000, 100_000] {
            let src = ramp(len);
            for ev in [0, len / 2, len - 1] {
                let (clip, p) = extract_clip(&src, ev, &ClipParams::default(), &mut rng).unwrap();
                assert_eq!(clip.len(), 48_000);
                assert!(p.offset_samples <= 8000);
            }
        }
    }
}
