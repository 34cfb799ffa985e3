use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{config_err, dim_err, Error, Result};
use crate::tensor::Tensor;

/// `height × width × 3` pixel intensities in `[0, 1]`, stored row-major HWC.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(dim_err("image", "height and width must be positive"));
        }
        if pixels.len() != height * width * 3 {
            return Err(dim_err(
                "image",
                format!("{height}x{width}x3 image needs {} values, got {}", height * width * 3, pixels.len()),
            ));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(config_err(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, pixels })
    }

    /// Builds an image by clamping every value into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, mut pixels: Vec<f64>) -> Result<Self> {
        pixels.iter_mut().for_each(|v| *v = clamp01(*v));
        Self::new(height, width, pixels)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, pixels: alloc::vec![clamp01(value); height * width * 3] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    /// Channel-planar `[3, H, W]` tensor.
    pub fn to_chw(&self) -> Tensor {
        let (h, w) = (self.height, self.width);
        let mut data = alloc::vec![0.0; 3 * h * w];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * h * w + i] = px[c];
            }
        }
        Tensor::new(alloc::vec![3, h, w], data).expect("consistent dims")
    }

    /// Inverse of [`Image::to_chw`]; values are clamped into `[0, 1]`.
    pub fn from_chw(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(dim_err("image", format!("expected [3,H,W], got {s:?}")));
        }
        let (h, w) = (s[1], s[2]);
        let mut pixels = alloc::vec![0.0; 3 * h * w];
        for c in 0..3 {
            for i in 0..h * w {
                pixels[i * 3 + c] = clamp01(t.data()[c * h * w + i]);
            }
        }
        Ok(Self { height: h, width: w, pixels })
    }

    /// 8-bit quantization, `round_half_up(255 · v)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| f64::from(b) / 255.0).collect())
    }

    /// Central crop to `height × width`.
    pub fn center_crop(&self, height: usize, width: usize) -> Result<Self> {
        if height > self.height || width > self.width {
            return Err(config_err(format!(
                "crop {height}x{width} exceeds image {}x{}",
                self.height, self.width
            )));
        }
        let top = (self.height - height) / 2;
        let left = (self.width - width) / 2;
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in top..top + height {
            let start = (y * self.width + left) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + width * 3]);
        }
        Ok(Self { height, width, pixels })
    }
}

pub fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Maps `[0, 1]` onto a byte with round-half-up.
pub fn quantize(v: f64) -> u8 {
    libm::floor(clamp01(v) * 255.0 + 0.5) as u8
}

/// Images with aligned class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    images: Vec<Image>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Alignment { clean: images.len(), transformed: labels.len() });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Index(format!("label {l} outside {} classes", class_names.len())));
        }
        Ok(Self { images, labels, class_names })
    }

    /// Dataset with classes named `"0"`, `"1"`, …
    pub fn with_class_count(images: Vec<Image>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        Self::new(images, labels, (0..classes).map(|c| format!("{c}")).collect())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            class_names: self.class_names.clone(),
        }
    }

    /// Same labels, new images (index aligned).
    pub fn with_images(&self, images: Vec<Image>) -> Result<Self> {
        Self::new(images, self.labels.clone(), self.class_names.clone())
    }

    /// Splits off the last `fraction` of items (rounded down, at least one
    /// when the set has two or more items) as a validation set.
    pub fn split_tail(&self, fraction: f64) -> (Self, Self) {
        let mut tail = (self.len() as f64 * fraction) as usize;
        if tail == 0 && self.len() >= 2 && fraction > 0.0 {
            tail = 1;
        }
        let cut = self.len() - tail;
        let part = |r: core::ops::Range<usize>| Self {
            images: self.images[r.clone()].to_vec(),
            labels: self.labels[r].to_vec(),
            class_names: self.class_names.clone(),
        };
        (part(0..cut), part(cut..self.len()))
    }
}
