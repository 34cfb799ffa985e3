//! Procedural ten-class corpus where every label carries two cues: a
//! silhouette (shape) and a faint oriented grating (texture).
//!
//! Shapes are bright figures on a dark background, drawn at random position
//! and scale with random colors, so the silhouette survives binarization.
//! With probability `1 - shape_fidelity` the silhouette belongs to a random
//! other class, which makes shape the less reliable cue. The grating always
//! matches the label. It has a class-specific orientation and frequency, a
//! random phase and an amplitude a few times the usual l∞ attack budget, so
//! it sits in the high-frequency band and disappears under strong saturation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::image::{Image, LabeledDataset};
use crate::rng;

pub const CLASS_NAMES: [&str; 10] =
    ["disk", "square", "triangle", "plus", "ring", "diamond", "frame", "half_disk", "star", "dots"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    /// Peak grating amplitude in pixel units.
    pub texture_amplitude: f64,
    /// Probability that the silhouette matches the label.
    pub shape_fidelity: f64,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { count: 1000, size: 32, seed: 0, texture_amplitude: 0.06, shape_fidelity: 0.7, noise: 0.0 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(config_err(format!("synthetic images must be at least 8 pixels wide, got {}", self.size)));
        }
        if !(0.0..=0.5).contains(&self.texture_amplitude) {
            return Err(config_err(format!("texture amplitude must be in [0, 0.5], got {}", self.texture_amplitude)));
        }
        if !(0.0..=1.0).contains(&self.shape_fidelity) {
            return Err(config_err(format!("shape fidelity must be in [0, 1], got {}", self.shape_fidelity)));
        }
        if !(self.noise >= 0.0) {
            return Err(config_err(format!("noise must be >= 0, got {}", self.noise)));
        }
        Ok(())
    }

    /// Label of image `index`: classes cycle so every prefix is balanced.
    pub fn label(&self, index: usize) -> usize {
        index % CLASS_NAMES.len()
    }

    /// Renders image `index` independently of all others.
    pub fn image(&self, index: usize) -> Result<Image> {
        self.validate()?;
        render(self, self.label(index), &mut rng::stream(self.seed, index as u64))
    }

    pub fn generate(&self) -> Result<LabeledDataset> {
        self.validate()?;
        let images = (0..self.count).map(|i| self.image(i)).collect::<Result<Vec<_>>>()?;
        let labels = (0..self.count).map(|i| self.label(i)).collect();
        LabeledDataset::new(images, labels, CLASS_NAMES.iter().map(|s| String::from(*s)).collect())
    }
}

/// Whether local coordinates `(u, v)` (shape radius ≈ 1) fall inside the
/// silhouette of `class`.
pub fn inside(class: usize, u: f64, v: f64) -> bool {
    let r = libm::sqrt(u * u + v * v);
    match class {
        0 => r < 0.9,
        1 => u.abs() < 0.75 && v.abs() < 0.75,
        // Upward triangle with vertices (0, -0.9), (±0.9, 0.7).
        2 => v < 0.7 && v > -0.9 + 1.7778 * u.abs(),
        3 => (u.abs() < 0.3 && v.abs() < 0.95) || (v.abs() < 0.3 && u.abs() < 0.95),
        4 => r < 0.95 && r > 0.55,
        5 => u.abs() + v.abs() < 1.0,
        6 => u.abs().max(v.abs()) < 0.85 && u.abs().max(v.abs()) > 0.5,
        7 => r < 0.95 && v > -0.1,
        8 => {
            let theta = libm::atan2(v, u);
            r < 0.45 + 0.5 * libm::cos(5.0 * theta).max(0.0)
        }
        _ => {
            let d1 = libm::sqrt((u + 0.5) * (u + 0.5) + v * v);
            let d2 = libm::sqrt((u - 0.5) * (u - 0.5) + v * v);
            d1 < 0.38 || d2 < 0.38
        }
    }
}

/// Grating orientation (radians) and frequency (cycles per image side). Each
/// image uses the orientation or its mirror image at random, so the texture
/// class survives horizontal flips.
pub fn texture_of(class: usize) -> (f64, f64) {
    let degrees = [0.0, 30.0, 45.0, 60.0, 90.0][class % 5];
    let freq = if class < 5 { 9.0 } else { 13.0 };
    (degrees * PI / 180.0, freq)
}

/// Background channels in [0.05, 0.35], figure channels in [0.65, 0.95].
fn contrasting_pair(rng: &mut rng::Rng) -> ([f64; 3], [f64; 3]) {
    let mut bg = [0.0; 3];
    let mut fg = [0.0; 3];
    for c in 0..3 {
        bg[c] = 0.05 + 0.3 * rng.random::<f64>();
        fg[c] = 0.95 - 0.3 * rng.random::<f64>();
    }
    (bg, fg)
}

fn render(spec: &SyntheticSpec, class: usize, rng: &mut rng::Rng) -> Result<Image> {
    let n = spec.size as f64;
    let (bg, fg) = contrasting_pair(rng);
    let scale = n * (0.30 + 0.08 * rng.random::<f64>());
    let margin = scale + 1.0;
    let cx = margin + (n - 2.0 * margin) * rng.random::<f64>();
    let cy = margin + (n - 2.0 * margin) * rng.random::<f64>();
    let classes = CLASS_NAMES.len();
    let silhouette =
        if rng.random_bool(spec.shape_fidelity) { class } else { (class + 1 + rng.random_range(0..classes - 1)) % classes };
    let (theta, freq) = texture_of(class);
    let theta = if rng.random_bool(0.5) { PI - theta } else { theta };
    let (ts, tc) = (libm::sin(theta), libm::cos(theta));
    let phase = 2.0 * PI * rng.random::<f64>();
    let noise = Normal::new(0.0, spec.noise).map_err(|e| config_err(format!("{e}")))?;

    let mut px = Vec::with_capacity(spec.size * spec.size * 3);
    for y in 0..spec.size {
        for x in 0..spec.size {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let color = if inside(silhouette, dx / scale, dy / scale) { fg } else { bg };
            let t = spec.texture_amplitude
                * libm::sin(2.0 * PI * freq * (x as f64 * tc + y as f64 * ts) / n + phase);
            for ch in color {
                let e = if spec.noise > 0.0 { noise.sample(rng) } else { 0.0 };
                px.push(ch + t + e);
            }
        }
    }
    Image::from_clamped(spec.size, spec.size, px)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let spec = SyntheticSpec { count: 20, seed: 3, ..SyntheticSpec::default() };
        let a = spec.generate().unwrap();
        let b = spec.generate().unwrap();
        assert_eq!(a, b);
        for k in 0..10 {
            assert_eq!(a.labels().iter().filter(|&&l| l == k).count(), 2);
        }
        assert_eq!(spec.image(7).unwrap(), a.images()[7]);
    }

    #[test]
    fn every_class_has_foreground() {
        for class in 0..10 {
            let hits = (0..400).filter(|i| inside(class, (i % 20) as f64 / 10.0 - 1.0, (i / 20) as f64 / 10.0 - 1.0)).count();
            assert!(hits > 20 && hits < 380, "class {class}: {hits}");
        }
    }

    #[test]
    fn without_texture_images_are_two_tone_figure_on_dark_ground() {
        let spec = SyntheticSpec { count: 10, texture_amplitude: 0.0, ..SyntheticSpec::default() };
        for img in spec.generate().unwrap().images() {
            let mut figure = 0;
            for px in img.pixels().chunks_exact(3) {
                let bright = px.iter().filter(|&&v| v > 0.5).count();
                assert!(bright == 0 || bright == 3, "{px:?}");
                figure += usize::from(bright == 3);
            }
            assert!(figure > 20 && figure < 32 * 32 / 2, "{figure}");
        }
    }

    #[test]
    fn shape_fidelity_only_changes_silhouettes() {
        let base = SyntheticSpec { count: 40, seed: 9, shape_fidelity: 1.0, ..SyntheticSpec::default() };
        let noisy = SyntheticSpec { shape_fidelity: 0.0, ..base.clone() };
        let (a, b) = (base.generate().unwrap(), noisy.generate().unwrap());
        assert_eq!(a.labels(), b.labels());
        assert!(a.images().iter().zip(b.images()).all(|(x, y)| x != y));
        assert!(SyntheticSpec { shape_fidelity: 1.5, ..base }.validate().is_err());
    }

    #[test]
    fn textures_are_distinct() {
        for a in 0..10 {
            for b in a + 1..10 {
                assert_ne!(texture_of(a), texture_of(b));
            }
        }
    }
}
