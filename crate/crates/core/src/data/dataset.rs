//! Manifests, sample loading, normalization and splitting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{load_pgm, resize_bilinear, Sample};
use crate::error::{Error, Result};
use crate::nn::InputStats;

/// Standard deviations below this are replaced by it when normalizing.
pub const STD_FLOOR: f64 = 1e-8;

const MANIFEST_HEADER: &str = "path,label";
const CLASS_FILE: &str = "classes.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if let Some((i, e)) = self
            .entries
            .iter()
            .enumerate()
            .find(|(_, e)| e.label >= self.class_names.len())
        {
            return Err(Error::Data(format!(
                "manifest row {}: label {} but only {} classes",
                i + 1,
                e.label,
                self.class_names.len()
            )));
        }
        Ok(())
    }

    /// Reads a `path,label` CSV. Class names come from an optional
    /// `classes.txt` next to the manifest (one name per line); otherwise
    /// they are the label numbers.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
            _ => {
                return Err(Error::Data(format!(
                    "{}: first line must be {MANIFEST_HEADER:?}",
                    path.display()
                )))
            }
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |why: &str| Error::Data(format!("{} line {}: {why}", path.display(), i + 1));
            let (p, l) = line.rsplit_once(',').ok_or_else(|| bad("expected path,label"))?;
            let label = l.trim().parse().map_err(|_| bad("label is not a class index"))?;
            entries.push(ManifestEntry {
                path: PathBuf::from(p.trim()),
                label,
            });
        }
        let class_file = root.join(CLASS_FILE);
        let class_names = if class_file.exists() {
            fs::read_to_string(&class_file)
                .map_err(|e| Error::io(&class_file, e))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect()
        } else {
            let k = entries.iter().map(|e| e.label + 1).max().unwrap_or(0);
            (0..k).map(|i| i.to_string()).collect()
        };
        let m = Self {
            root,
            entries,
            class_names,
        };
        m.validate()?;
        Ok(m)
    }

    /// Writes `manifest.csv`-style output to `path` and the class names to
    /// `classes.txt` beside it.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut out = format!("{MANIFEST_HEADER}\n");
        for e in &self.entries {
            let p = e.path.to_string_lossy().replace('\\', "/");
            out.push_str(&format!("{p},{}\n", e.label));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let class_file = dir.join(CLASS_FILE);
        let names: String = self.class_names.iter().map(|n| format!("{n}\n")).collect();
        fs::write(&class_file, names).map_err(|e| Error::io(&class_file, e))
    }
}

/// Loads every manifest image (in parallel on the current rayon pool),
/// optionally resizing to `side x side`. The result follows manifest order.
pub fn load_samples(manifest: &DatasetManifest, side: Option<usize>) -> Result<Vec<Sample>> {
    manifest.validate()?;
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let full = manifest.root.join(&e.path);
            let mut image = load_pgm(&full)?;
            if let Some(s) = side {
                image = resize_bilinear(&image, s, s)?;
            }
            Ok(Sample {
                image,
                label: e.label,
                source_id: e.path.to_string_lossy().into_owned(),
            })
        })
        .collect()
}

/// Rec. 601 luma, for converting colour pixels to grayscale.
pub fn luma601(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Standardizes `samples` by their global pixel mean and population
/// standard deviation, returning the statistics for reuse on other splits.
pub fn normalize_dataset(samples: &[Sample]) -> Result<(Vec<Sample>, InputStats)> {
    let count: usize = samples.iter().map(|s| s.image.len()).sum();
    if count == 0 {
        return Err(Error::Data("cannot normalize an empty dataset".into()));
    }
    let n = count as f64;
    let mean = samples.iter().map(|s| s.image.sum()).sum::<f64>() / n;
    let var = samples
        .iter()
        .flat_map(|s| s.image.data())
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let stats = InputStats {
        mean,
        std: var.sqrt().max(STD_FLOOR),
    };
    Ok((apply_normalization(samples, &stats), stats))
}

pub fn apply_normalization(samples: &[Sample], stats: &InputStats) -> Vec<Sample> {
    let std = stats.std.max(STD_FLOOR);
    samples
        .iter()
        .map(|s| Sample {
            image: s.image.map(|v| (v - stats.mean) / std),
            ..s.clone()
        })
        .collect()
}

/// Train count for `n` items: `ceil(n * fraction)` clamped so both sides
/// are non-empty.
fn train_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction - 1e-9).ceil() as usize).clamp(1, n - 1)
}

/// Splits into `(train, validation)`. Both outputs keep input order. With
/// `stratified`, each class is split separately with rounding toward
/// train.
pub fn split_dataset<R: Rng + ?Sized>(
    samples: &[Sample],
    train_fraction: f64,
    rng: &mut R,
    stratified: bool,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    if stratified {
        for (i, s) in samples.iter().enumerate() {
            groups.entry(s.label).or_default().push(i);
        }
    } else {
        groups.insert(0, (0..samples.len()).collect());
    }
    let mut in_train = vec![false; samples.len()];
    for (label, mut idx) in groups {
        if idx.len() < 2 {
            let what = if stratified {
                format!("class {label} has {} sample(s)", idx.len())
            } else {
                format!("dataset has {} sample(s)", idx.len())
            };
            return Err(Error::Data(format!("{what}; splitting needs at least 2")));
        }
        let k = train_count(idx.len(), train_fraction);
        idx.shuffle(rng);
        for &i in &idx[..k] {
            in_train[i] = true;
        }
    }
    let (train, val): (Vec<_>, Vec<_>) = samples.iter().zip(&in_train).partition(|(_, &t)| t);
    Ok((
        train.into_iter().map(|(s, _)| s.clone()).collect(),
        val.into_iter().map(|(s, _)| s.clone()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(v: f64, label: usize, id: usize) -> Sample {
        Sample {
            image: Tensor::filled(&[1, 2, 2], v),
            label,
            source_id: format!("s{id}"),
        }
    }

    #[test]
    fn normalization_fixtures() {
        let (out, stats) = normalize_dataset(&[sample(0.0, 0, 0), sample(1.0, 0, 1)]).unwrap();
        assert_eq!((stats.mean, stats.std), (0.5, 0.5));
        assert!(out[0].image.data().iter().all(|&v| v == -1.0));
        assert!(out[1].image.data().iter().all(|&v| v == 1.0));

        let (flat, stats) = normalize_dataset(&[sample(0.3, 0, 0), sample(0.3, 1, 1)]).unwrap();
        assert_eq!(stats.std, STD_FLOOR);
        assert!(flat.iter().all(|s| s.image.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn normalized_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<Sample> = (0..20)
            .map(|i| Sample {
                image: Tensor::new(vec![1, 4, 4], (0..16).map(|_| rng.random::<f64>()).collect()).unwrap(),
                label: 0,
                source_id: i.to_string(),
            })
            .collect();
        let (out, _) = normalize_dataset(&samples).unwrap();
        let all: Vec<f64> = out.iter().flat_map(|s| s.image.data().to_vec()).collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let std = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9);
        assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn stratified_split_counts() {
        let samples: Vec<Sample> = (0..4000).map(|i| sample(0.0, i % 4, i)).collect();
        let (train, val) = split_dataset(&samples, 0.8, &mut ChaCha8Rng::seed_from_u64(1), true).unwrap();
        for c in 0..4 {
            assert_eq!(train.iter().filter(|s| s.label == c).count(), 800);
            assert_eq!(val.iter().filter(|s| s.label == c).count(), 200);
        }
        let pair = [sample(0.0, 0, 0), sample(0.0, 0, 1)];
        let (t, v) = split_dataset(&pair, 0.5, &mut ChaCha8Rng::seed_from_u64(1), true).unwrap();
        assert_eq!((t.len(), v.len()), (1, 1));
    }

    #[test]
    fn split_rejects_singleton_class() {
        let s = [sample(0.0, 0, 0), sample(0.0, 0, 1), sample(0.0, 1, 2)];
        let err = split_dataset(&s, 0.5, &mut ChaCha8Rng::seed_from_u64(0), true).unwrap_err();
        assert!(err.to_string().contains("class 1"), "{err}");
        assert!(split_dataset(&s, 1.0, &mut ChaCha8Rng::seed_from_u64(0), false).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            root: dir.path().to_path_buf(),
            entries: vec![
                ManifestEntry {
                    path: "a/x.pgm".into(),
                    label: 1,
                },
                ManifestEntry {
                    path: "y.pgm".into(),
                    label: 0,
                },
            ],
            class_names: vec!["cat".into(), "dog".into()],
        };
        let path = dir.path().join("manifest.csv");
        m.save(&path).unwrap();
        assert!(fs::read_to_string(&path).unwrap().starts_with("path,label\na/x.pgm,1\n"));
        assert_eq!(DatasetManifest::load(&path).unwrap(), m);
    }

    #[test]
    fn manifest_label_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "path,label\nx.pgm,0\n").unwrap();
        fs::write(dir.path().join(CLASS_FILE), "only\n").unwrap();
        fs::write(&path, "path,label\nx.pgm,3\n").unwrap();
        assert!(matches!(DatasetManifest::load(&path), Err(Error::Data(_))));
    }
}
