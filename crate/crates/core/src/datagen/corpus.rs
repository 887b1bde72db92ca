use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::events::detect_events;
use super::{io_err, DataError};
use crate::signal::{derive_seed, read_wav, seeded_rng, synth_source, write_wav, SynthKind, SynthSpec, WavEncoding};

/// One usable source file of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusFile {
    /// Path relative to the corpus root, `/`-separated.
    pub id: String,
    /// First directory component of `id`; empty for top-level files.
    pub class: String,
    pub len: usize,
    pub events: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CorpusIndex {
    pub root: PathBuf,
    pub sample_rate_hz: u32,
    /// Sorted by id.
    pub files: Vec<CorpusFile>,
    /// All-zero files, which cannot serve as references.
    pub skipped_silent: Vec<String>,
}

impl CorpusIndex {
    pub fn get(&self, id: &str) -> Option<&CorpusFile> {
        self.files
            .binary_search_by(|f| f.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.files[i])
    }

    pub fn path_of(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }
}

/// File ids to leave out, one per line; blank lines and `#` comments are
/// ignored.
pub fn read_exclusion_list(path: &Path) -> Result<Vec<String>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Scans `root` for WAV files, runs onset detection on each and records the
/// events. All files must share one sample rate.
pub fn index_corpus(root: &Path, exclude: &[String], rms_window_s: f64) -> Result<CorpusIndex, DataError> {
    let mut paths = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| DataError::Io {
            path: root.display().to_string(),
            source: e.into(),
        })?;
        let is_wav = entry
            .path()
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if entry.file_type().is_file() && is_wav {
            paths.push(entry.into_path());
        }
    }
    let mut files = Vec::new();
    let mut skipped_silent = Vec::new();
    let mut sample_rate_hz = None;
    for path in paths {
        let rel = path.strip_prefix(root).expect("walked under root");
        let id = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        if exclude.contains(&id) {
            continue;
        }
        let wave = read_wav(&path)?;
        match sample_rate_hz {
            None => sample_rate_hz = Some(wave.sample_rate_hz()),
            Some(sr) if sr != wave.sample_rate_hz() => {
                return Err(DataError::Param(format!(
                    "{id} is {} Hz, corpus is {sr} Hz",
                    wave.sample_rate_hz()
                )))
            }
            _ => {}
        }
        let events = detect_events(&id, &wave, rms_window_s)?;
        if events.silent {
            log::warn!("skipping silent file {id}");
            skipped_silent.push(id);
            continue;
        }
        let class = if rel.components().count() > 1 {
            id.split('/').next().unwrap_or("").to_string()
        } else {
            String::new()
        };
        files.push(CorpusFile {
            id,
            class,
            len: wave.len(),
            events: events.event_times,
        });
    }
    files.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(CorpusIndex {
        root: root.to_path_buf(),
        sample_rate_hz: sample_rate_hz.unwrap_or(crate::signal::DEFAULT_SAMPLE_RATE),
        files,
        skipped_silent,
    })
}

/// Content of a generated stand-in corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticProfile {
    /// `tonal/`: tones and chirps in 200-1800 Hz; `noise/`: band noise
    /// inside 3-7 kHz. The classes never share a frequency bin.
    DisjointBands,
    /// `tonal_a/` and `tonal_b/`: tones and chirps drawn from the same
    /// 200-1800 Hz range, so sources can be close in frequency.
    Tonal,
    /// Tonal, band-noise and impulse-train classes.
    Mixed,
}

impl SyntheticProfile {
    fn classes(self) -> &'static [&'static str] {
        match self {
            SyntheticProfile::DisjointBands => &["noise", "tonal"],
            SyntheticProfile::Tonal => &["tonal_a", "tonal_b"],
            SyntheticProfile::Mixed => &["impulse", "noise", "tonal"],
        }
    }
}

fn class_kind(class: &str, rng: &mut impl Rng) -> SynthKind {
    match class {
        "noise" => {
            let low = rng.gen_range(3000.0..4500.0);
            SynthKind::BandNoise {
                low_hz: low,
                high_hz: (low + rng.gen_range(1500.0..2500.0)).min(7000.0),
                amplitude: rng.gen_range(0.4..0.8),
            }
        }
        "impulse" => SynthKind::ImpulseTrain {
            rate_hz: rng.gen_range(2.0..10.0),
            amplitude: rng.gen_range(0.3..0.6),
        },
        _ => {
            let amplitude = rng.gen_range(0.15..0.4);
            if rng.gen_bool(0.5) {
                SynthKind::Tone {
                    freq_hz: rng.gen_range(200.0..1800.0),
                    amplitude,
                }
            } else {
                SynthKind::Chirp {
                    start_hz: rng.gen_range(200.0..1800.0),
                    end_hz: rng.gen_range(200.0..1800.0),
                    amplitude,
                }
            }
        }
    }
}

/// Writes `files_per_class` float WAV files per class under `dir` and returns
/// their ids. Durations range over 1-6 s so that some files need looping;
/// half the files start after a silent lead-in.
pub fn write_synthetic_corpus(
    dir: &Path,
    profile: SyntheticProfile,
    files_per_class: usize,
    seed: u64,
    sample_rate_hz: u32,
) -> Result<Vec<String>, DataError> {
    let mut ids = Vec::new();
    for (c, class) in profile.classes().iter().enumerate() {
        let class_dir = dir.join(class);
        fs::create_dir_all(&class_dir).map_err(io_err(&class_dir))?;
        for i in 0..files_per_class {
            let file_seed = derive_seed(seed, &[c as u64, i as u64]);
            let mut rng = seeded_rng(file_seed);
            let duration_s = (rng.gen_range(1.0..6.0) * 10.0f64).round() / 10.0;
            let mut kind = class_kind(class, &mut rng);
            if rng.gen_bool(0.5) && duration_s > 1.5 {
                let onset_s = rng.gen_range(0.2..(duration_s - 1.0).min(2.0));
                kind = SynthKind::SilenceThenBurst {
                    onset_s,
                    burst_s: None,
                    inner: Box::new(kind),
                };
            }
            let wave = synth_source(&SynthSpec::new(kind, file_seed), duration_s, sample_rate_hz)?;
            let id = format!("{class}/{class}_{i:03}.wav");
            write_wav(&wave, dir.join(&id), WavEncoding::Float32)?;
            ids.push(id);
        }
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_corpus_indexes_with_classes() {
        let dir = tempfile::tempdir().unwrap();
        let ids = write_synthetic_corpus(dir.path(), SyntheticProfile::DisjointBands, 3, 5, 16_000).unwrap();
        assert_eq!(ids.len(), 6);
        let idx = index_corpus(dir.path(), &[], 0.05).unwrap();
        assert_eq!(idx.files.len(), 6);
        assert_eq!(idx.files.iter().filter(|f| f.class == "tonal").count(), 3);
        assert!(idx.files.iter().all(|f| !f.events.is_empty()));
        assert!(idx.get("noise/noise_001.wav").is_some());

        let again = tempfile::tempdir().unwrap();
        write_synthetic_corpus(again.path(), SyntheticProfile::DisjointBands, 3, 5, 16_000).unwrap();
        for id in &ids {
            assert_eq!(fs::read(dir.path().join(id)).unwrap(), fs::read(again.path().join(id)).unwrap());
        }
    }

    #[test]
    fn exclusions_and_silent_files_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_corpus(dir.path(), SyntheticProfile::Tonal, 2, 1, 16_000).unwrap();
        write_wav(
            &crate::signal::Waveform::zeros(800, 16_000),
            dir.path().join("quiet.wav"),
            WavEncoding::Float32,
        )
        .unwrap();
        let list = dir.path().join("exclude.txt");
        fs::write(&list, "# ambience\ntonal_a/tonal_a_000.wav\n\n").unwrap();
        let exclude = read_exclusion_list(&list).unwrap();
        let idx = index_corpus(dir.path(), &exclude, 0.05).unwrap();
        assert_eq!(idx.files.len(), 3);
        assert!(idx.get("tonal_a/tonal_a_000.wav").is_none());
        assert_eq!(idx.skipped_silent, vec!["quiet.wav".to_string()]);
    }
}
