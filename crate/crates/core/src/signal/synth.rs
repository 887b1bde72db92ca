use std::f64::consts::PI;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{seeded_rng, AudioError, Waveform};

/// Kind-specific parameters of a synthetic source. Frequencies are in Hz,
/// times in seconds, amplitudes are peak values in (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthKind {
    Tone {
        freq_hz: f64,
        amplitude: f64,
    },
    /// Linear frequency sweep over the whole duration.
    Chirp {
        start_hz: f64,
        end_hz: f64,
        amplitude: f64,
    },
    /// Random-phase noise with a flat magnitude spectrum inside the band.
    BandNoise {
        low_hz: f64,
        high_hz: f64,
        amplitude: f64,
    },
    ImpulseTrain {
        rate_hz: f64,
        amplitude: f64,
    },
    /// Silence until `onset_s`, then `inner` (optionally for `burst_s` only).
    SilenceThenBurst {
        onset_s: f64,
        burst_s: Option<f64>,
        inner: Box<SynthKind>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(flatten)]
    pub kind: SynthKind,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, seed: u64) -> Self {
        Self { kind, seed }
    }
}

impl SynthKind {
    fn validate(&self, duration_s: f64, sample_rate_hz: u32) -> Result<(), AudioError> {
        let nyquist = sample_rate_hz as f64 / 2.0;
        let bad = |msg: String| Err(AudioError::InvalidSynth(msg));
        let freq_ok = |f: f64| f.is_finite() && f >= 0.0 && f < nyquist;
        let amp_ok = |a: f64| a > 0.0 && a <= 1.0;
        match self {
            SynthKind::Tone { freq_hz, amplitude } => {
                if !freq_ok(*freq_hz) {
                    return bad(format!("tone frequency {freq_hz} Hz not below {nyquist} Hz"));
                }
                if !amp_ok(*amplitude) {
                    return bad(format!("amplitude {amplitude} outside (0, 1]"));
                }
            }
            SynthKind::Chirp {
                start_hz,
                end_hz,
                amplitude,
            } => {
                if !freq_ok(*start_hz) || !freq_ok(*end_hz) {
                    return bad(format!("chirp {start_hz}..{end_hz} Hz not below {nyquist} Hz"));
                }
                if !amp_ok(*amplitude) {
                    return bad(format!("amplitude {amplitude} outside (0, 1]"));
                }
            }
            SynthKind::BandNoise {
                low_hz,
                high_hz,
                amplitude,
            } => {
                if !freq_ok(*low_hz) || !freq_ok(*high_hz) || low_hz >= high_hz {
                    return bad(format!("band {low_hz}..{high_hz} Hz invalid for {nyquist} Hz"));
                }
                if !amp_ok(*amplitude) {
                    return bad(format!("amplitude {amplitude} outside (0, 1]"));
                }
            }
            SynthKind::ImpulseTrain { rate_hz, amplitude } => {
                if !freq_ok(*rate_hz) || *rate_hz <= 0.0 {
                    return bad(format!("impulse rate {rate_hz} Hz invalid"));
                }
                if !amp_ok(*amplitude) {
                    return bad(format!("amplitude {amplitude} outside (0, 1]"));
                }
            }
            SynthKind::SilenceThenBurst {
                onset_s,
                burst_s,
                inner,
            } => {
                if !(*onset_s >= 0.0 && *onset_s < duration_s) {
                    return bad(format!("onset {onset_s} s outside the {duration_s} s signal"));
                }
                if let Some(b) = burst_s {
                    if !(*b > 0.0) {
                        return bad(format!("burst duration {b} s must be positive"));
                    }
                }
                inner.validate(duration_s, sample_rate_hz)?;
            }
        }
        Ok(())
    }

    fn render(&self, len: usize, sample_rate_hz: u32, seed: u64) -> Vec<f64> {
        let sr = sample_rate_hz as f64;
        match *self {
            SynthKind::Tone { freq_hz, amplitude } => (0..len)
                .map(|n| amplitude * (2.0 * PI * freq_hz * n as f64 / sr).sin())
                .collect(),
            SynthKind::Chirp {
                start_hz,
                end_hz,
                amplitude,
            } => {
                let dur = len as f64 / sr;
                (0..len)
                    .map(|n| {
                        let t = n as f64 / sr;
                        let phase = start_hz * t + (end_hz - start_hz) * t * t / (2.0 * dur);
                        amplitude * (2.0 * PI * phase).sin()
                    })
                    .collect()
            }
            SynthKind::BandNoise {
                low_hz,
                high_hz,
                amplitude,
            } => band_noise(len, sr, low_hz, high_hz, amplitude, seed),
            SynthKind::ImpulseTrain { rate_hz, amplitude } => {
                let period = (sr / rate_hz).round().max(1.0) as usize;
                (0..len)
                    .map(|n| if n % period == 0 { amplitude } else { 0.0 })
                    .collect()
            }
            SynthKind::SilenceThenBurst {
                onset_s,
                burst_s,
                ref inner,
            } => {
                let mut out = inner.render(len, sample_rate_hz, seed);
                let onset = ((onset_s * sr).round() as usize).min(len);
                let end = burst_s
                    .map(|b| (onset + (b * sr).round() as usize).min(len))
                    .unwrap_or(len);
                out[..onset].iter_mut().for_each(|s| *s = 0.0);
                out[end..].iter_mut().for_each(|s| *s = 0.0);
                out
            }
        }
    }
}

fn band_noise(len: usize, sr: f64, low_hz: f64, high_hz: f64, amplitude: f64, seed: u64) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    let mut rng = seeded_rng(seed);
    let mut spectrum = vec![Complex::new(0.0, 0.0); len];
    let half = len / 2;
    for k in 1..=half {
        let f = k as f64 * sr / len as f64;
        if f < low_hz || f > high_hz {
            continue;
        }
        let phase = rng.gen::<f64>() * 2.0 * PI;
        let c = Complex::from_polar(1.0, phase);
        if 2 * k == len {
            spectrum[k] = Complex::new(c.re, 0.0);
        } else {
            spectrum[k] = c;
            spectrum[len - k] = c.conj();
        }
    }
    FftPlanner::new().plan_fft_inverse(len).process(&mut spectrum);
    let mut out: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let g = amplitude / peak;
        out.iter_mut().for_each(|s| *s *= g);
    }
    out
}

/// Renders a synthetic source. Output is a pure function of the arguments
/// and its peak never exceeds 1.
pub fn synth_source(
    spec: &SynthSpec,
    duration_s: f64,
    sample_rate_hz: u32,
) -> Result<Waveform, AudioError> {
    if sample_rate_hz == 0 {
        return Err(AudioError::ZeroSampleRate);
    }
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(AudioError::InvalidSynth(format!(
            "duration {duration_s} s must be positive"
        )));
    }
    spec.kind.validate(duration_s, sample_rate_hz)?;
    let len = (duration_s * sample_rate_hz as f64).round() as usize;
    let samples = spec.kind.render(len, sample_rate_hz, spec.seed);
    Waveform::new(samples, sample_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: SynthKind) -> SynthSpec {
        SynthSpec::new(kind, 11)
    }

    #[test]
    fn tone_matches_closed_form() {
        let w = synth_source(
            &spec(SynthKind::Tone {
                freq_hz: 440.0,
                amplitude: 0.8,
            }),
            1.0,
            16_000,
        )
        .unwrap();
        assert_eq!(w.len(), 16_000);
        for (n, &s) in w.samples().iter().enumerate() {
            let expected = 0.8 * (2.0 * PI * 440.0 * n as f64 / 16_000.0).sin();
            assert_eq!(s, expected);
        }
    }

    #[test]
    fn same_spec_same_output() {
        let s = spec(SynthKind::BandNoise {
            low_hz: 2000.0,
            high_hz: 3000.0,
            amplitude: 0.5,
        });
        let a = synth_source(&s, 0.7, 16_000).unwrap();
        let b = synth_source(&s, 0.7, 16_000).unwrap();
        assert_eq!(a, b);
        let c = synth_source(&SynthSpec::new(s.kind.clone(), 12), 0.7, 16_000).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn band_noise_energy_stays_in_band() {
        let w = synth_source(
            &spec(SynthKind::BandNoise {
                low_hz: 2000.0,
                high_hz: 3000.0,
                amplitude: 0.9,
            }),
            1.0,
            16_000,
        )
        .unwrap();
        assert!((w.peak() - 0.9).abs() < 1e-12);
        // oracle: plain complex FFT of the rendered signal
        let n = w.len();
        let mut buf: Vec<Complex<f64>> = w.samples().iter().map(|&s| Complex::new(s, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let (mut inside, mut total) = (0.0, 0.0);
        for (k, c) in buf.iter().enumerate().take(n / 2 + 1) {
            let f = k as f64 * 16_000.0 / n as f64;
            let e = c.norm_sqr();
            total += e;
            if (2000.0..=3000.0).contains(&f) {
                inside += e;
            }
        }
        assert!(inside / total >= 0.95, "in-band fraction {}", inside / total);
    }

    #[test]
    fn burst_is_silent_before_onset() {
        let w = synth_source(
            &spec(SynthKind::SilenceThenBurst {
                onset_s: 0.5,
                burst_s: Some(0.25),
                inner: Box::new(SynthKind::Tone {
                    freq_hz: 1000.0,
                    amplitude: 1.0,
                }),
            }),
            1.0,
            16_000,
        )
        .unwrap();
        assert!(w.samples()[..8000].iter().all(|&s| s == 0.0));
        assert!(w.samples()[8000..12_000].iter().any(|&s| s != 0.0));
        assert!(w.samples()[12_000..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let nyq = spec(SynthKind::Tone {
            freq_hz: 8000.0,
            amplitude: 0.5,
        });
        assert!(synth_source(&nyq, 1.0, 16_000).is_err());
        let ok = spec(SynthKind::Tone {
            freq_hz: 100.0,
            amplitude: 0.5,
        });
        assert!(synth_source(&ok, 0.0, 16_000).is_err());
        assert!(synth_source(&ok, -1.0, 16_000).is_err());
        let loud = spec(SynthKind::Tone {
            freq_hz: 100.0,
            amplitude: 1.5,
        });
        assert!(synth_source(&loud, 1.0, 16_000).is_err());
    }

    #[test]
    fn every_kind_is_finite_and_bounded() {
        let kinds = vec![
            SynthKind::Tone { freq_hz: 3.0, amplitude: 1.0 },
            SynthKind::Chirp { start_hz: 100.0, end_hz: 7000.0, amplitude: 1.0 },
            SynthKind::BandNoise { low_hz: 10.0, high_hz: 7999.0, amplitude: 1.0 },
            SynthKind::ImpulseTrain { rate_hz: 30.0, amplitude: 1.0 },
        ];
        for (i, k) in kinds.into_iter().enumerate() {
            for dur in [0.01, 1.0, 2.3] {
                let w = synth_source(&SynthSpec::new(k.clone(), i as u64), dur, 16_000).unwrap();
                assert!(w.samples().iter().all(|s| s.is_finite()));
                assert!(w.peak() <= 1.0);
            }
        }
    }
}
