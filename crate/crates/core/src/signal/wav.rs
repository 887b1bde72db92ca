use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioError, Waveform};

const PCM16_SCALE: f64 = 32768.0;

/// On-disk sample encoding for [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    /// 16-bit integer PCM. Samples outside [-1, 1] are an error unless
    /// `clip` is set, in which case they saturate.
    Pcm16 { clip: bool },
    /// IEEE float32; lossless for values already representable in f32.
    Float32,
}

/// Reads a PCM16 or float32 WAV file. Multi-channel files yield channel 0.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let reader = WavReader::open(path).map_err(|source| AudioError::Unreadable {
        path: shown.clone(),
        source,
    })?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    if channels > 1 {
        log::warn!("{shown}: {channels} channels, using channel 0");
    }
    let unreadable = |source| AudioError::Unreadable {
        path: shown.clone(),
        source,
    };
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .step_by(channels)
            .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
            .collect::<Result<_, _>>()
            .map_err(unreadable)?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .step_by(channels)
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(unreadable)?,
        (format, bits) => {
            return Err(AudioError::UnsupportedEncoding {
                path: shown,
                format: match format {
                    SampleFormat::Int => "int",
                    SampleFormat::Float => "float",
                },
                bits,
            })
        }
    };
    if samples.is_empty() {
        return Err(AudioError::Empty(shown));
    }
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav(
    waveform: &Waveform,
    path: impl AsRef<Path>,
    encoding: WavEncoding,
) -> Result<(), AudioError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let (bits, sample_format) = match encoding {
        WavEncoding::Pcm16 { .. } => (16, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    if let WavEncoding::Pcm16 { clip: false } = encoding {
        if let Some((index, &value)) = waveform
            .samples()
            .iter()
            .enumerate()
            .find(|(_, s)| s.abs() > 1.0)
        {
            return Err(AudioError::OutOfRange { index, value });
        }
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate_hz(),
        bits_per_sample: bits,
        sample_format,
    };
    let write_err = |source| AudioError::Write {
        path: shown.clone(),
        source,
    };
    let mut writer = WavWriter::create(path, spec).map_err(write_err)?;
    for &s in waveform.samples() {
        match encoding {
            WavEncoding::Pcm16 { .. } => writer.write_sample(pcm16_code(s)),
            WavEncoding::Float32 => writer.write_sample(s as f32),
        }
        .map_err(write_err)?;
    }
    writer.finalize().map_err(write_err)
}

/// Saturating PCM16 quantizer.
pub(crate) fn pcm16_code(sample: f64) -> i16 {
    (sample * PCM16_SCALE)
        .round()
        .clamp(i16::MIN as f64, i16::MAX as f64) as i16
}
