//! Geometric image transforms and the augmentation recipe.

use rand::Rng;

use super::Sample;
use crate::error::{Error, Result};
use crate::nn::Tensor;

fn gray_dims(image: &Tensor) -> Result<(usize, usize)> {
    match *image.shape() {
        [1, h, w] => Ok((h, w)),
        ref s => Err(Error::Shape(format!("expected a [1,H,W] image, got {s:?}"))),
    }
}

/// Bilinear read at fractional `(y, x)` with coordinates clamped to the
/// image edge.
fn sample_clamped(data: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = data[y0 * w + x0] * (1.0 - fx) + data[y0 * w + x1] * fx;
    let bottom = data[y1 * w + x0] * (1.0 - fx) + data[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear resize with half-pixel-centre mapping:
/// `src = (dst + 0.5) * in / out - 0.5`.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = gray_dims(image)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config(format!("resize target {out_h}x{out_w} must be positive")));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let src = image.data();
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let y = (oy as f64 + 0.5) * sy - 0.5;
        for ox in 0..out_w {
            let x = (ox as f64 + 0.5) * sx - 0.5;
            out.push(sample_clamped(src, h, w, y, x));
        }
    }
    Tensor::new(vec![1, out_h, out_w], out)
}

pub fn hflip(image: &Tensor) -> Result<Tensor> {
    let (h, w) = gray_dims(image)?;
    let d = image.data();
    let out = (0..h).flat_map(|y| (0..w).rev().map(move |x| d[y * w + x])).collect();
    Tensor::new(vec![1, h, w], out)
}

pub fn vflip(image: &Tensor) -> Result<Tensor> {
    let (h, w) = gray_dims(image)?;
    let d = image.data();
    let out = (0..h).rev().flat_map(|y| d[y * w..(y + 1) * w].iter().copied()).collect();
    Tensor::new(vec![1, h, w], out)
}

/// Cuts the `ch x cw` window at `(top, left)` and resizes it back to the
/// original extent.
pub fn crop_resize(image: &Tensor, top: usize, left: usize, ch: usize, cw: usize) -> Result<Tensor> {
    let (h, w) = gray_dims(image)?;
    if ch == 0 || cw == 0 || top + ch > h || left + cw > w {
        return Err(Error::Shape(format!(
            "crop {ch}x{cw} at ({top},{left}) outside {h}x{w} image"
        )));
    }
    let d = image.data();
    let window: Vec<f64> = (top..top + ch)
        .flat_map(|y| d[y * w + left..y * w + left + cw].iter().copied())
        .collect();
    resize_bilinear(&Tensor::new(vec![1, ch, cw], window)?, h, w)
}

/// Shear along x by `shear` radians, then stretch by `(scale_y, scale_x)`,
/// both about the image centre. Output pixels are pulled back through the
/// inverse map and read bilinearly with edge clamping.
pub fn affine(image: &Tensor, scale_y: f64, scale_x: f64, shear: f64) -> Result<Tensor> {
    let (h, w) = gray_dims(image)?;
    if !(scale_x > 0.0 && scale_y > 0.0) {
        return Err(Error::Config("affine scales must be positive".into()));
    }
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let t = shear.tan();
    let d = image.data();
    let mut out = Vec::with_capacity(h * w);
    for oy in 0..h {
        let v = (oy as f64 - cy) / scale_y;
        for ox in 0..w {
            let u = (ox as f64 - cx) / scale_x - t * v;
            out.push(sample_clamped(d, h, w, v + cy, u + cx));
        }
    }
    Tensor::new(vec![1, h, w], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    /// Side fraction of the random crop window.
    pub crop: Option<(f64, f64)>,
    /// Independent stretch factors for each axis.
    pub scale: Option<(f64, f64)>,
    /// Shear angle range in degrees.
    pub shear_deg: Option<(f64, f64)>,
    /// Augmented copies emitted per original.
    pub multiplier: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip: true,
            vflip: true,
            crop: Some((0.8, 1.0)),
            scale: Some((0.9, 1.1)),
            shear_deg: Some((-10.0, 10.0)),
            multiplier: 1,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, (lo, hi): (f64, f64)| {
            if lo <= hi && lo.is_finite() && hi.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("augment {name} range ({lo}, {hi}) is not ordered")))
            }
        };
        if let Some(r) = self.crop {
            ordered("crop", r)?;
            if !(r.0 > 0.0 && r.1 <= 1.0) {
                return Err(Error::Config(format!("augment crop fraction {r:?} outside (0, 1]")));
            }
        }
        if let Some(r) = self.scale {
            ordered("scale", r)?;
            if !(r.0 >= 0.5 && r.1 <= 2.0) {
                return Err(Error::Config(format!("augment scale {r:?} outside [0.5, 2]")));
            }
        }
        if let Some(r) = self.shear_deg {
            ordered("shear", r)?;
            if !(r.0 >= -45.0 && r.1 <= 45.0) {
                return Err(Error::Config(format!("augment shear {r:?} outside [-45, 45] degrees")));
            }
        }
        Ok(())
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Emits `cfg.multiplier` transformed copies of `sample`. Each enabled flip
/// fires with probability 1/2; crop, stretch and shear draw their
/// parameters uniformly from the configured ranges.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let (h, w) = gray_dims(&sample.image)?;
    let mut out = Vec::with_capacity(cfg.multiplier);
    for copy in 0..cfg.multiplier {
        let mut img = sample.image.clone();
        if cfg.hflip && rng.random_bool(0.5) {
            img = hflip(&img)?;
        }
        if cfg.vflip && rng.random_bool(0.5) {
            img = vflip(&img)?;
        }
        if let Some(range) = cfg.crop {
            let f = draw(rng, range);
            let ch = ((h as f64 * f).round() as usize).clamp(1, h);
            let cw = ((w as f64 * f).round() as usize).clamp(1, w);
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            img = crop_resize(&img, top, left, ch, cw)?;
        }
        let (sy, sx) = match cfg.scale {
            Some(r) => (draw(rng, r), draw(rng, r)),
            None => (1.0, 1.0),
        };
        let shear = cfg.shear_deg.map_or(0.0, |r| draw(rng, r).to_radians());
        if sy != 1.0 || sx != 1.0 || shear != 0.0 {
            img = affine(&img, sy, sx, shear)?;
        }
        out.push(Sample {
            image: img,
            label: sample.label,
            source_id: format!("{}#aug{copy}", sample.source_id),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn resize_fixtures() {
        let a = img(&[&[0.1, 0.2, 0.3], &[0.4, 0.5, 0.6]]);
        let same = resize_bilinear(&a, 2, 3).unwrap();
        for (x, y) in same.data().iter().zip(a.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = resize_bilinear(&Tensor::filled(&[1, 5, 7], 0.3), 3, 11).unwrap();
        assert!(c.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        let checker = img(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(resize_bilinear(&checker, 1, 1).unwrap().data(), [0.5]);
        assert!(resize_bilinear(&checker, 0, 1).is_err());
    }

    #[test]
    fn flips() {
        let a = img(&[&[1., 2.], &[3., 4.]]);
        assert_eq!(hflip(&a).unwrap().data(), [2., 1., 4., 3.]);
        assert_eq!(vflip(&a).unwrap().data(), [3., 4., 1., 2.]);
        assert_eq!(vflip(&vflip(&a).unwrap()).unwrap(), a);
    }

    #[test]
    fn identity_affine() {
        let a = Tensor::new(vec![1, 4, 5], (0..20).map(|v| f64::from(v) / 20.0).collect()).unwrap();
        let b = affine(&a, 1.0, 1.0, 0.0).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn full_crop_is_identity() {
        let a = img(&[&[0.1, 0.9], &[0.3, 0.4]]);
        assert_eq!(crop_resize(&a, 0, 0, 2, 2).unwrap(), a);
        assert!(crop_resize(&a, 1, 0, 2, 2).is_err());
    }

    #[test]
    fn augment_preserves_shape_label_range() {
        let s = Sample {
            image: Tensor::new(vec![1, 8, 8], (0..64).map(|v| f64::from(v) / 63.0).collect()).unwrap(),
            label: 2,
            source_id: "x".into(),
        };
        let cfg = AugmentConfig {
            multiplier: 5,
            shear_deg: Some((-30.0, 30.0)),
            ..AugmentConfig::default()
        };
        let a = augment(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = augment(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a.len(), 5);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.label, 2);
            assert_eq!(x.image.shape(), [1, 8, 8]);
            assert!(x.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn augment_rejects_bad_ranges() {
        let bad = AugmentConfig {
            shear_deg: Some((-60.0, 0.0)),
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig {
            crop: Some((0.0, 0.5)),
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
