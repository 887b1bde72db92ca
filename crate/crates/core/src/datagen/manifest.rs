use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::clip::{draw_placement, ClipParams, ClipPlacement};
use super::corpus::{CorpusFile, CorpusIndex};
use super::{io_err, DataError};
use crate::signal::{derive_seed, seeded_rng};

const MANIFEST_FORMAT: &str = "sepkit-manifest";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn index(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| DataError::Param(format!("unknown split {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut usize {
        match split {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
            Split::Test => &mut self.test,
        }
    }
}

/// How the K files of a mixture are chosen within a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawPolicy {
    /// K distinct files uniformly at random.
    Uniform,
    /// K distinct classes, one file from each, in random source order.
    OnePerClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    pub global_seed: u64,
    pub n_sources: usize,
    pub sample_rate_hz: u32,
    pub clip: ClipParams,
    pub policy: DrawPolicy,
    pub partition: BTreeMap<String, Split>,
    pub file_counts: SplitCounts,
    pub mixture_counts: SplitCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDraw {
    pub file: String,
    #[serde(flatten)]
    pub placement: ClipPlacement,
    #[serde(default, skip_serializing_if = "is_unit_gain")]
    pub gain_db: f64,
}

fn is_unit_gain(g: &f64) -> bool {
    *g == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecipe {
    pub mixture_id: String,
    pub split: Split,
    /// Seed of the stream the draws below came from.
    pub seed: u64,
    pub sources: Vec<SourceDraw>,
    /// Directory of the rendered WAVs, relative to the dataset root.
    pub output_dir: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub recipes: Vec<MixtureRecipe>,
}

impl DatasetManifest {
    /// Header line, then one recipe per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.recipes {
            out.push_str(&serde_json::to_string(r).expect("recipe serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DataError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines.next().ok_or_else(|| DataError::Manifest("empty manifest".into()))?;
        let header: ManifestHeader =
            serde_json::from_str(first).map_err(|e| DataError::Manifest(format!("header: {e}")))?;
        if header.format != MANIFEST_FORMAT || header.version != MANIFEST_VERSION {
            return Err(DataError::Manifest(format!(
                "unsupported manifest {} v{}",
                header.format, header.version
            )));
        }
        let recipes = lines
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| DataError::Manifest(format!("recipe {i}: {e}"))))
            .collect::<Result<Vec<MixtureRecipe>, _>>()?;
        Ok(Self { header, recipes })
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_jsonl()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        Self::from_jsonl(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// Hex SHA-256 of the serialized manifest.
    pub fn checksum(&self) -> String {
        Sha256::digest(self.to_jsonl().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn recipes_in(&self, split: Split) -> impl Iterator<Item = &MixtureRecipe> {
        self.recipes.iter().filter(move |r| r.split == split)
    }
}

/// Assigns files to splits: files are shuffled within their class, the
/// classes are interleaved, and the sequence is cut at `round(0.7 n)` and
/// `round(0.7 n) + round(0.2 n)`. Interleaving spreads every class over all
/// splits while keeping the overall counts exact.
pub fn partition_files(files: &[CorpusFile], seed: u64) -> BTreeMap<String, Split> {
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for f in files {
        by_class.entry(f.class.as_str()).or_default().push(f.id.as_str());
    }
    let mut rng = seeded_rng(derive_seed(seed, &[0]));
    for ids in by_class.values_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
    }
    let longest = by_class.values().map(Vec::len).max().unwrap_or(0);
    let order: Vec<&str> = (0..longest)
        .flat_map(|i| by_class.values().filter_map(move |ids| ids.get(i).copied()))
        .collect();
    let n = order.len();
    let n_train = (0.7 * n as f64).round() as usize;
    let n_val = ((0.2 * n as f64).round() as usize).min(n - n_train);
    order
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
            (id.to_string(), split)
        })
        .collect()
}

/// Partitions the corpus and draws `mixtures.get(split)` recipes per split.
/// Each recipe uses its own stream seeded from `(seed, split, index)`.
pub fn build_manifest(
    index: &CorpusIndex,
    n_sources: usize,
    mixtures: SplitCounts,
    clip: ClipParams,
    policy: DrawPolicy,
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    clip.validate()?;
    if n_sources == 0 {
        return Err(DataError::Param("at least one source per mixture".into()));
    }
    let partition = partition_files(&index.files, seed);
    let mut file_counts = SplitCounts::default();
    for split in partition.values() {
        *file_counts.get_mut(*split) += 1;
    }
    let mut recipes = Vec::new();
    for split in Split::ALL {
        let wanted = mixtures.get(split);
        if wanted == 0 {
            continue;
        }
        let pool: Vec<&CorpusFile> = index.files.iter().filter(|f| partition[&f.id] == split).collect();
        let mut classes: BTreeMap<&str, Vec<&CorpusFile>> = BTreeMap::new();
        for f in &pool {
            classes.entry(f.class.as_str()).or_default().push(f);
        }
        let available = match policy {
            DrawPolicy::Uniform => pool.len(),
            DrawPolicy::OnePerClass => classes.len(),
        };
        if available < n_sources {
            return Err(DataError::TooFewFiles {
                split,
                have: available,
                need: n_sources,
            });
        }
        for i in 0..wanted {
            let recipe_seed = derive_seed(seed, &[1 + split.index(), i as u64]);
            let mut rng = seeded_rng(recipe_seed);
            let mut chosen: Vec<&CorpusFile> = match policy {
                DrawPolicy::Uniform => rand::seq::index::sample(&mut rng, pool.len(), n_sources)
                    .into_iter()
                    .map(|j| pool[j])
                    .collect(),
                DrawPolicy::OnePerClass => {
                    let names: Vec<&str> = classes.keys().copied().collect();
                    rand::seq::index::sample(&mut rng, names.len(), n_sources)
                        .into_iter()
                        .map(|j| {
                            let members = &classes[names[j]];
                            members[rng.gen_range(0..members.len())]
                        })
                        .collect()
                }
            };
            chosen.shuffle(&mut rng);
            let mut sources = chosen
                .iter()
                .map(|f| {
                    let event = f.events[rng.gen_range(0..f.events.len())];
                    SourceDraw {
                        file: f.id.clone(),
                        placement: draw_placement(f.len, index.sample_rate_hz, event, &clip, &mut rng),
                        gain_db: 0.0,
                    }
                })
                .collect::<Vec<_>>();
            // Drawn last so that enabling gains leaves every other draw unchanged.
            if clip.max_gain_db > 0.0 {
                for s in &mut sources {
                    s.gain_db = -rng.gen_range(0.0..=clip.max_gain_db);
                }
            }
            let mixture_id = format!("{split}_{i:05}");
            recipes.push(MixtureRecipe {
                output_dir: format!("{split}/{mixture_id}"),
                mixture_id,
                split,
                seed: recipe_seed,
                sources,
            });
        }
    }
    Ok(DatasetManifest {
        header: ManifestHeader {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            global_seed: seed,
            n_sources,
            sample_rate_hz: index.sample_rate_hz,
            clip,
            policy,
            partition,
            file_counts,
            mixture_counts: mixtures,
        },
        recipes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn files(n: usize, classes: usize) -> Vec<CorpusFile> {
        let mut v: Vec<CorpusFile> = (0..n)
            .map(|i| CorpusFile {
                id: format!("c{}/f{i:02}.wav", i % classes),
                class: format!("c{}", i % classes),
                len: 20_000 + 10_000 * i,
                events: vec![0, 5000 + i],
            })
            .collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    fn index(n: usize, classes: usize) -> CorpusIndex {
        CorpusIndex {
            root: PathBuf::from("/nonexistent"),
            sample_rate_hz: 16_000,
            files: files(n, classes),
            skipped_silent: vec![],
        }
    }

    #[test]
    fn ten_files_split_seven_two_one() {
        let p = partition_files(&files(10, 2), 3);
        let count = |s| p.values().filter(|&&v| v == s).count();
        assert_eq!((count(Split::Train), count(Split::Validation), count(Split::Test)), (7, 2, 1));
    }

    #[test]
    fn partition_counts_within_one_file() {
        for n in 3..60 {
            let p = partition_files(&files(n, 3), n as u64);
            let train = p.values().filter(|&&v| v == Split::Train).count() as f64;
            let val = p.values().filter(|&&v| v == Split::Validation).count() as f64;
            let test = n as f64 - train - val;
            assert!((train - 0.7 * n as f64).abs() <= 1.0);
            assert!((val - 0.2 * n as f64).abs() <= 1.0);
            assert!((test - 0.1 * n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn recipes_use_distinct_files_of_their_split() {
        let idx = index(30, 3);
        let counts = SplitCounts {
            train: 40,
            validation: 10,
            test: 5,
        };
        for k in [2, 3] {
            for policy in [DrawPolicy::Uniform, DrawPolicy::OnePerClass] {
                let m = build_manifest(&idx, k, counts, ClipParams::default(), policy, 11).unwrap();
                assert_eq!(m.recipes.len(), 55);
                for r in &m.recipes {
                    assert_eq!(r.sources.len(), k);
                    let mut ids: Vec<&str> = r.sources.iter().map(|s| s.file.as_str()).collect();
                    ids.sort_unstable();
                    ids.dedup();
                    assert_eq!(ids.len(), k);
                    assert!(r.sources.iter().all(|s| m.header.partition[&s.file] == r.split));
                    if policy == DrawPolicy::OnePerClass {
                        let mut cls: Vec<&str> = r.sources.iter().map(|s| &s.file[..2]).collect();
                        cls.sort_unstable();
                        cls.dedup();
                        assert_eq!(cls.len(), k);
                    }
                }
            }
        }
    }

    #[test]
    fn manifest_round_trips_and_is_deterministic() {
        let idx = index(20, 2);
        let counts = SplitCounts {
            train: 8,
            validation: 3,
            test: 2,
        };
        let a = build_manifest(&idx, 2, counts, ClipParams::default(), DrawPolicy::OnePerClass, 5).unwrap();
        let b = build_manifest(&idx, 2, counts, ClipParams::default(), DrawPolicy::OnePerClass, 5).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert_eq!(a.checksum(), b.checksum());
        let c = build_manifest(&idx, 2, counts, ClipParams::default(), DrawPolicy::OnePerClass, 6).unwrap();
        assert_ne!(a.checksum(), c.checksum());
        assert_eq!(DatasetManifest::from_jsonl(&a.to_jsonl()).unwrap(), a);
        assert_eq!(a.to_jsonl().lines().count(), 14);
    }

    #[test]
    fn too_few_files_is_an_error() {
        let idx = index(4, 2);
        let counts = SplitCounts {
            train: 1,
            validation: 0,
            test: 1,
        };
        assert!(matches!(
            build_manifest(&idx, 2, counts, ClipParams::default(), DrawPolicy::Uniform, 0),
            Err(DataError::TooFewFiles { split: Split::Test, .. })
        ));
    }
}
