use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::clip::{place_clip, ClipParams};
use super::corpus::CorpusIndex;
use super::manifest::{DatasetManifest, MixtureRecipe, Split};
use super::{io_err, DataError};
use crate::signal::{read_wav, write_wav, WavEncoding, Waveform};

/// References are rounded to multiples of this step. With sources in
/// [-1, 1] (gains only attenuate) every reference and every sum of up to 8 of them is then exact
/// in both f32 and f64, so a Float32 WAV tree keeps `mixture = Σ references`
/// bit for bit.
pub const REFERENCE_GRID: f64 = 1.0 / (1u64 << 20) as f64;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExample {
    pub id: String,
    pub mixture: Waveform,
    pub references: Vec<Waveform>,
}

fn quantize(w: &Waveform) -> Waveform {
    let q = w
        .samples()
        .iter()
        .map(|x| (x / REFERENCE_GRID).round() * REFERENCE_GRID)
        .collect();
    Waveform::new(q, w.sample_rate_hz()).expect("rounded samples are finite")
}

fn render_with(recipe: &MixtureRecipe, clip_len: usize, sources: &Sources) -> Result<MixtureExample, DataError> {
    let mut references = Vec::with_capacity(recipe.sources.len());
    for draw in &recipe.sources {
        let source = sources
            .get(&draw.file)
            .ok_or_else(|| DataError::MissingFile(draw.file.clone()))?;
        let mut clip = place_clip(source, &draw.placement, clip_len);
        if draw.gain_db != 0.0 {
            let g = 10f64.powf(draw.gain_db / 20.0);
            clip = Waveform::new(clip.samples().iter().map(|x| g * x).collect(), clip.sample_rate_hz())?;
        }
        references.push(quantize(&clip));
    }
    let sr = references
        .first()
        .map(Waveform::sample_rate_hz)
        .ok_or_else(|| DataError::Manifest(format!("{} has no sources", recipe.mixture_id)))?;
    let mut sum = vec![0.0; clip_len];
    for r in &references {
        sum.iter_mut().zip(r.samples()).for_each(|(m, x)| *m += x);
    }
    Ok(MixtureExample {
        id: recipe.mixture_id.clone(),
        mixture: Waveform::new(sum, sr)?,
        references,
    })
}

type Sources = HashMap<String, Waveform>;

/// Reads every file the recipes mention, once each.
fn read_sources<'a>(recipes: impl IntoIterator<Item = &'a MixtureRecipe>, index: &CorpusIndex) -> Result<Sources, DataError> {
    let ids: BTreeSet<&str> = recipes
        .into_iter()
        .flat_map(|r| r.sources.iter().map(|d| d.file.as_str()))
        .collect();
    ids.into_par_iter()
        .map(|id| {
            if index.get(id).is_none() {
                return Err(DataError::MissingFile(id.to_string()));
            }
            let w = read_wav(index.path_of(id))?;
            if w.sample_rate_hz() != index.sample_rate_hz {
                return Err(DataError::Param(format!(
                    "{id} is at {} Hz, corpus is at {} Hz",
                    w.sample_rate_hz(),
                    index.sample_rate_hz
                )));
            }
            Ok((id.to_string(), w))
        })
        .collect()
}

/// Cuts, scales, quantizes and sums the clips of one recipe.
pub fn render_mixture(recipe: &MixtureRecipe, index: &CorpusIndex, clip: &ClipParams) -> Result<MixtureExample, DataError> {
    let sources = read_sources([recipe], index)?;
    render_with(recipe, clip.clip_len(index.sample_rate_hz), &sources)
}

/// Writes `manifest.jsonl` and, per recipe, `{split}/{id}/mixture.wav` and
/// `source{k}.wav` under `out_dir`. Recipes render in parallel; each one
/// depends only on its own recorded draws.
pub fn render_dataset(manifest: &DatasetManifest, index: &CorpusIndex, out_dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let clip_len = manifest.header.clip.clip_len(index.sample_rate_hz);
    let sources = read_sources(&manifest.recipes, index)?;
    manifest.recipes.par_iter().try_for_each(|recipe| {
        let ex = render_with(recipe, clip_len, &sources)?;
        let dir = out_dir.join(&recipe.output_dir);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_wav(&ex.mixture, dir.join("mixture.wav"), WavEncoding::Float32)?;
        for (k, r) in ex.references.iter().enumerate() {
            write_wav(r, dir.join(format!("source{k}.wav")), WavEncoding::Float32)?;
        }
        Ok::<_, DataError>(())
    })?;
    manifest.write(&out_dir.join(MANIFEST_FILE))
}

/// Loads the rendered examples of one split in manifest order.
pub fn load_split(dataset_dir: &Path, split: Split) -> Result<Vec<MixtureExample>, DataError> {
    let manifest = DatasetManifest::read(&dataset_dir.join(MANIFEST_FILE))?;
    manifest
        .recipes_in(split)
        .map(|r| {
            let dir = dataset_dir.join(&r.output_dir);
            Ok(MixtureExample {
                id: r.mixture_id.clone(),
                mixture: read_wav(dir.join("mixture.wav"))?,
                references: (0..r.sources.len())
                    .map(|k| read_wav(dir.join(format!("source{k}.wav"))))
                    .collect::<Result<_, _>>()?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_manifest, index_corpus, write_synthetic_corpus, DrawPolicy, SplitCounts, SyntheticProfile};

    #[test]
    fn rendered_tree_sums_exactly_and_is_repeatable() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        write_synthetic_corpus(&corpus, SyntheticProfile::DisjointBands, 10, 1, 16_000).unwrap();
        let index = index_corpus(&corpus, &[], 0.05).unwrap();
        let counts = SplitCounts {
            train: 3,
            validation: 1,
            test: 1,
        };
        let m = build_manifest(&index, 2, counts, ClipParams::default(), DrawPolicy::OnePerClass, 2).unwrap();
        let first = render_mixture(&m.recipes[0], &index, &m.header.clip).unwrap();
        assert_eq!(first, render_mixture(&m.recipes[0], &index, &m.header.clip).unwrap());

        let out = dir.path().join("data");
        render_dataset(&m, &index, &out).unwrap();
        let train = load_split(&out, Split::Train).unwrap();
        assert_eq!(train.len(), 3);
        assert_eq!(train[0], first);
        for ex in train.iter().chain(&load_split(&out, Split::Test).unwrap()) {
            assert_eq!(ex.mixture.len(), 48_000);
            for t in 0..ex.mixture.len() {
                let sum: f64 = ex.references.iter().map(|r| r.samples()[t]).sum();
                assert_eq!(ex.mixture.samples()[t], sum);
            }
        }
    }

    #[test]
    fn gain_draws_attenuate_and_keep_exact_sums() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_corpus(dir.path(), SyntheticProfile::DisjointBands, 10, 4, 16_000).unwrap();
        let index = index_corpus(dir.path(), &[], 0.05).unwrap();
        let counts = SplitCounts {
            train: 4,
            validation: 0,
            test: 0,
        };
        let plain = build_manifest(&index, 2, counts, ClipParams::default(), DrawPolicy::OnePerClass, 3).unwrap();
        assert!(!plain.to_jsonl().contains("\"gain_db\""));
        let clip = ClipParams {
            max_gain_db: 12.0,
            ..ClipParams::default()
        };
        let m = build_manifest(&index, 2, counts, clip, DrawPolicy::OnePerClass, 3).unwrap();
        assert_eq!(DatasetManifest::from_jsonl(&m.to_jsonl()).unwrap(), m);
        for (r, p) in m.recipes.iter().zip(&plain.recipes) {
            let gained = render_mixture(r, &index, &m.header.clip).unwrap();
            let unit = render_mixture(p, &index, &plain.header.clip).unwrap();
            for (k, draw) in r.sources.iter().enumerate() {
                assert!((-12.0..=0.0).contains(&draw.gain_db));
                let g = 10f64.powf(draw.gain_db / 20.0);
                let (a, b) = (&gained.references[k], &unit.references[k]);
                assert!(a.peak() <= 1.0);
                for (x, y) in a.samples().iter().zip(b.samples()) {
                    assert!((x - g * y).abs() <= REFERENCE_GRID);
                }
            }
            for t in 0..gained.mixture.len() {
                let sum: f64 = gained.references.iter().map(|r| r.samples()[t]).sum();
                assert_eq!(gained.mixture.samples()[t], sum);
            }
        }
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_corpus(dir.path(), SyntheticProfile::Tonal, 3, 0, 16_000).unwrap();
        let index = index_corpus(dir.path(), &[], 0.05).unwrap();
        let counts = SplitCounts {
            train: 1,
            validation: 0,
            test: 0,
        };
        let mut m = build_manifest(&index, 2, counts, ClipParams::default(), DrawPolicy::Uniform, 0).unwrap();
        m.recipes[0].sources[0].file = "nope.wav".into();
        assert!(matches!(
            render_mixture(&m.recipes[0], &index, &m.header.clip),
            Err(DataError::MissingFile(_))
        ));
    }
}
