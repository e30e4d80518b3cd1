//! Procedural four-class grayscale dataset.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{save_pgm, DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Class names in label order.
pub const SYNTH_CLASSES: [&str; 4] = ["disk", "square", "cross", "stripes"];

const NOISE_SIGMA: f64 = 0.04;

/// Signed distance (in pixels) from the shape boundary, negative inside.
fn shape_distance(class: usize, u: f64, v: f64, size: f64, side: f64, period: f64, phase: f64) -> f64 {
    let stroke = (0.12 * side).max(2.0);
    match class {
        0 => u.hypot(v) - size,
        1 => (u.abs().max(v.abs()) - size).abs() - stroke / 2.0,
        2 => {
            let arm = ((u - v).abs() * FRAC_1_SQRT_2).min((u + v).abs() * FRAC_1_SQRT_2) - stroke / 2.0;
            arm.max(u.abs().max(v.abs()) - size)
        }
        _ => ((v + phase).rem_euclid(period) - period / 2.0).abs() - period / 4.0,
    }
}

/// Draws one `[1, side, side]` image of class `class` with random
/// position, size, rotation, contrast and additive Gaussian noise.
pub fn render_synthetic<R: Rng + ?Sized>(class: usize, side: usize, rng: &mut R) -> Result<Tensor> {
    if class >= SYNTH_CLASSES.len() {
        return Err(Error::Config(format!("synthetic class {class} does not exist")));
    }
    if side < 16 {
        return Err(Error::Config(format!("synthetic side {side} must be >= 16")));
    }
    let s = side as f64;
    let background = rng.random_range(0.05..0.2);
    let foreground = rng.random_range(0.7..0.95);
    let cx = s / 2.0 + rng.random_range(-0.12..0.12) * s;
    let cy = s / 2.0 + rng.random_range(-0.12..0.12) * s;
    let size = rng.random_range(0.22..0.32) * s;
    let angle: f64 = rng.random_range(-0.35..0.35);
    let period = rng.random_range(0.18..0.26) * s;
    let phase = rng.random_range(0.0..period);
    let (sin, cos) = angle.sin_cos();
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut data = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let u = cos * dx + sin * dy;
            let v = -sin * dx + cos * dy;
            let d = shape_distance(class, u, v, size, s, period, phase);
            let coverage = (0.5 - d).clamp(0.0, 1.0);
            let value = background + (foreground - background) * coverage + noise.sample(rng);
            data.push(value.clamp(0.0, 1.0));
        }
    }
    Tensor::new(vec![1, side, side], data)
}

/// Writes `n_per_class` PGM images per class into `dir` as
/// `{class}_{index}.pgm`, plus `manifest.csv`. Output is byte-identical for
/// equal arguments.
pub fn gen_synthetic(dir: &Path, n_per_class: usize, side: usize, seed: u64) -> Result<DatasetManifest> {
    if n_per_class == 0 {
        return Err(Error::Config("synthetic n_per_class must be >= 1".into()));
    }
    if side < 16 {
        return Err(Error::Config(format!("synthetic side {side} must be >= 16")));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(n_per_class * SYNTH_CLASSES.len());
    for (label, name) in SYNTH_CLASSES.iter().enumerate() {
        for i in 0..n_per_class {
            let image = render_synthetic(label, side, &mut rng)?;
            let file = format!("{name}_{i:04}.pgm");
            save_pgm(&dir.join(&file), &image, 255)?;
            entries.push(ManifestEntry {
                path: file.into(),
                label,
            });
        }
    }
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        entries,
        class_names: SYNTH_CLASSES.iter().map(|s| s.to_string()).collect(),
    };
    manifest.save(&dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_samples;

    #[test]
    fn rejects_small_side() {
        let dir = tempfile::tempdir().unwrap();
        assert!(gen_synthetic(dir.path(), 1, 8, 0).is_err());
        assert!(gen_synthetic(dir.path(), 0, 32, 0).is_err());
    }

    #[test]
    fn counts_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = gen_synthetic(a.path(), 50, 32, 7).unwrap();
        gen_synthetic(b.path(), 50, 32, 7).unwrap();
        assert_eq!(m.entries.len(), 200);
        for c in 0..4 {
            assert_eq!(m.entries.iter().filter(|e| e.label == c).count(), 50);
        }
        let pgms = fs::read_dir(a.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
            .count();
        assert_eq!(pgms, 200);
        let rows = fs::read_to_string(a.path().join("manifest.csv")).unwrap().lines().count();
        assert_eq!(rows, 201);
        for e in &m.entries {
            assert_eq!(
                fs::read(a.path().join(&e.path)).unwrap(),
                fs::read(b.path().join(&e.path)).unwrap()
            );
        }
        let loaded = DatasetManifest::load(&a.path().join("manifest.csv")).unwrap();
        assert_eq!(loaded.class_names, SYNTH_CLASSES);
    }

    /// Nearest class centroid on raw pixels, fitted on one seed and scored
    /// on another.
    #[test]
    fn nearest_centroid_baseline_learns() {
        let train_dir = tempfile::tempdir().unwrap();
        let test_dir = tempfile::tempdir().unwrap();
        let train = load_samples(&gen_synthetic(train_dir.path(), 50, 32, 1).unwrap(), None).unwrap();
        let test = load_samples(&gen_synthetic(test_dir.path(), 25, 32, 2).unwrap(), None).unwrap();
        let mut centroids = vec![vec![0.0; 32 * 32]; 4];
        for s in &train {
            for (c, v) in centroids[s.label].iter_mut().zip(s.image.data()) {
                *c += v / 50.0;
            }
        }
        let correct = test
            .iter()
            .filter(|s| {
                let dist = |c: &Vec<f64>| -> f64 { c.iter().zip(s.image.data()).map(|(a, b)| (a - b).powi(2)).sum() };
                let best = (0..4)
                    .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                    .unwrap();
                best == s.label
            })
            .count();
        let acc = correct as f64 / test.len() as f64;
        assert!(acc > 0.6, "nearest-centroid accuracy {acc}");
    }
}
