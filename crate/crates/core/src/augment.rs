//! Training-time augmentation: zero padding, random crop, horizontal flip and
//! optional per-image standardization.

use alloc::format;
use alloc::vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::image::Image;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSpec {
    pub pad_width: usize,
    pub crop_size: (usize, usize),
    pub horizontal_flip_prob: f64,
    pub per_image_standardize: bool,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self { pad_width: 4, crop_size: (32, 32), horizontal_flip_prob: 0.5, per_image_standardize: false, seed: 0 }
    }
}

impl AugmentationSpec {
    /// No padding, no flips: the model sees the image as stored.
    pub fn identity(height: usize, width: usize) -> Self {
        Self { pad_width: 0, crop_size: (height, width), horizontal_flip_prob: 0.0, per_image_standardize: false, seed: 0 }
    }

    pub fn validate_for(&self, height: usize, width: usize) -> Result<()> {
        let (ch, cw) = self.crop_size;
        if ch == 0 || cw == 0 || ch > height + 2 * self.pad_width || cw > width + 2 * self.pad_width {
            return Err(config_err(format!(
                "crop {ch}x{cw} is infeasible for {height}x{width} images padded by {}",
                self.pad_width
            )));
        }
        if !(0.0..=1.0).contains(&self.horizontal_flip_prob) {
            return Err(config_err(format!("flip probability {} outside [0, 1]", self.horizontal_flip_prob)));
        }
        Ok(())
    }
}

/// Crop offset within the padded image and the flip decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentDraw {
    pub top: usize,
    pub left: usize,
    pub flip: bool,
}

impl AugmentDraw {
    pub fn sample(spec: &AugmentationSpec, height: usize, width: usize, rng: &mut Rng) -> Self {
        let (ch, cw) = spec.crop_size;
        let top = rng.random_range(0..=height + 2 * spec.pad_width - ch);
        let left = rng.random_range(0..=width + 2 * spec.pad_width - cw);
        let flip = rng.random::<f64>() < spec.horizontal_flip_prob;
        Self { top, left, flip }
    }

    /// Deterministic evaluation draw: centered crop, no flip.
    pub fn center(spec: &AugmentationSpec, height: usize, width: usize) -> Self {
        let (ch, cw) = spec.crop_size;
        Self {
            top: (height + 2 * spec.pad_width - ch) / 2,
            left: (width + 2 * spec.pad_width - cw) / 2,
            flip: false,
        }
    }
}

/// Applies one augmentation draw and returns the `[3, h, w]` model input.
pub fn augment_with(img: &Image, spec: &AugmentationSpec, draw: AugmentDraw) -> Result<Tensor> {
    spec.validate_for(img.height(), img.width())?;
    let (ch, cw) = spec.crop_size;
    let pad = spec.pad_width as isize;
    let mut data = vec![0.0; 3 * ch * cw];
    for y in 0..ch {
        let sy = (draw.top + y) as isize - pad;
        if sy < 0 || sy >= img.height() as isize {
            continue;
        }
        for x in 0..cw {
            let ox = if draw.flip { cw - 1 - x } else { x };
            let sx = (draw.left + ox) as isize - pad;
            if sx < 0 || sx >= img.width() as isize {
                continue;
            }
            for c in 0..3 {
                data[c * ch * cw + y * cw + x] = img.get(sy as usize, sx as usize, c);
            }
        }
    }
    if spec.per_image_standardize {
        standardize(&mut data);
    }
    Tensor::new(vec![3, ch, cw], data)
}

pub fn augment(img: &Image, spec: &AugmentationSpec, rng: &mut Rng) -> Result<Tensor> {
    spec.validate_for(img.height(), img.width())?;
    let draw = AugmentDraw::sample(spec, img.height(), img.width(), rng);
    augment_with(img, spec, draw)
}

/// Evaluation path: no randomness.
pub fn augment_eval(img: &Image, spec: &AugmentationSpec) -> Result<Tensor> {
    spec.validate_for(img.height(), img.width())?;
    augment_with(img, spec, AugmentDraw::center(spec, img.height(), img.width()))
}

/// `(v − mean) / max(stddev, 1/√count)` over every value of the image.
pub fn standardize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = libm::sqrt(var).max(1.0 / libm::sqrt(n));
    values.iter_mut().for_each(|v| *v = (*v - mean) / scale);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use alloc::vec::Vec;

    fn ramp(h: usize, w: usize) -> Image {
        let px: Vec<f64> = (0..h * w * 3).map(|i| (i % 97) as f64 / 96.0).collect();
        Image::new(h, w, px).unwrap()
    }

    #[test]
    fn double_flip_restores() {
        let img = ramp(4, 6);
        let spec = AugmentationSpec { pad_width: 0, crop_size: (4, 6), horizontal_flip_prob: 1.0, ..Default::default() };
        let draw = AugmentDraw { top: 0, left: 0, flip: true };
        let once = Image::from_chw(&augment_with(&img, &spec, draw).unwrap()).unwrap();
        assert_ne!(once, img);
        let twice = Image::from_chw(&augment_with(&once, &spec, draw).unwrap()).unwrap();
        assert_eq!(twice, img);
    }

    #[test]
    fn pad_then_center_crop_is_identity() {
        let img = ramp(32, 32);
        let spec = AugmentationSpec::default();
        assert_eq!(augment_eval(&img, &spec).unwrap(), img.to_chw());
    }

    #[test]
    fn standardized_moments() {
        let img = ramp(8, 8);
        let spec = AugmentationSpec { per_image_standardize: true, ..AugmentationSpec::identity(8, 8) };
        let t = augment_eval(&img, &spec).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let sd = libm::sqrt(t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
        assert!(mean.abs() < 1e-9);
        assert!((sd - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_crop_rejected() {
        let spec = AugmentationSpec { pad_width: 0, crop_size: (40, 40), ..Default::default() };
        assert!(augment_eval(&ramp(32, 32), &spec).is_err());
    }

    #[test]
    fn seeded_augmentation_reproducible() {
        let img = ramp(32, 32);
        let spec = AugmentationSpec::default();
        let a = augment(&img, &spec, &mut rng_from(7)).unwrap();
        let b = augment(&img, &spec, &mut rng_from(7)).unwrap();
        assert_eq!(a, b);
    }
}
