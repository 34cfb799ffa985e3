//! Shape/texture dissociating transforms: saturation, patch shuffling and
//! Fourier-domain masking.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::exec::Executor;
use crate::fft;
use crate::image::{clamp01, Image, LabeledDataset};
use crate::rng::{self, Rng};

/// One distortion with its parameter. The textual form doubles as the CLI
/// flag syntax: `identity`, `sat:<p>`, `patch:<k>`, `fourier:low:<r>`,
/// `fourier:high:<r>`, `fourier:rand:<p>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Distortion {
    Identity,
    /// Saturation level `p > 0`; `f64::INFINITY` binarizes.
    Saturation(f64),
    /// Split into `k × k` patches and permute them.
    PatchShuffle(usize),
    /// Keep modes within `radius_frac` of the half-diagonal.
    LowPass(f64),
    /// Keep modes outside `radius_frac` of the half-diagonal.
    HighPass(f64),
    /// Zero each mode (jointly with its conjugate) with probability `p`.
    RandomFourier(f64),
}

impl Distortion {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Distortion::Identity => Ok(()),
            Distortion::Saturation(p) if p > 0.0 => Ok(()),
            Distortion::Saturation(p) => Err(config_err(format!("saturation level must be > 0, got {p}"))),
            Distortion::PatchShuffle(k) if k >= 2 => Ok(()),
            Distortion::PatchShuffle(k) => Err(config_err(format!("patch grid k must be >= 2, got {k}"))),
            Distortion::LowPass(r) | Distortion::HighPass(r) if r > 0.0 && r <= 1.0 => Ok(()),
            Distortion::LowPass(r) | Distortion::HighPass(r) => {
                Err(config_err(format!("radius fraction must be in (0, 1], got {r}")))
            }
            Distortion::RandomFourier(p) if (0.0..=1.0).contains(&p) => Ok(()),
            Distortion::RandomFourier(p) => Err(config_err(format!("drop probability must be in [0, 1], got {p}"))),
        }
    }

    /// Transform family name used in reports.
    pub fn family(&self) -> &'static str {
        match self {
            Distortion::Identity => "identity",
            Distortion::Saturation(_) => "saturation",
            Distortion::PatchShuffle(_) => "patch_shuffle",
            Distortion::LowPass(_) => "fourier_low",
            Distortion::HighPass(_) => "fourier_high",
            Distortion::RandomFourier(_) => "fourier_random",
        }
    }

    /// Parameter rendered for reports.
    pub fn param(&self) -> String {
        match *self {
            Distortion::Identity => "-".into(),
            Distortion::Saturation(p) => fmt_num(p),
            Distortion::PatchShuffle(k) => format!("{k}"),
            Distortion::LowPass(r) | Distortion::HighPass(r) | Distortion::RandomFourier(r) => fmt_num(r),
        }
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

fn parse_num(s: &str) -> Result<f64> {
    if s == "inf" {
        return Ok(f64::INFINITY);
    }
    s.parse::<f64>().map_err(|_| config_err(format!("`{s}` is not a number")))
}

impl fmt::Display for Distortion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distortion::Identity => write!(f, "identity"),
            Distortion::Saturation(_) => write!(f, "sat:{}", self.param()),
            Distortion::PatchShuffle(k) => write!(f, "patch:{k}"),
            Distortion::LowPass(_) => write!(f, "fourier:low:{}", self.param()),
            Distortion::HighPass(_) => write!(f, "fourier:high:{}", self.param()),
            Distortion::RandomFourier(_) => write!(f, "fourier:rand:{}", self.param()),
        }
    }
}

impl FromStr for Distortion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let d = match parts.as_slice() {
            ["identity"] => Distortion::Identity,
            ["sat", p] => Distortion::Saturation(parse_num(p)?),
            ["patch", k] => Distortion::PatchShuffle(k.parse().map_err(|_| config_err(format!("`{k}` is not a patch count")))?),
            ["fourier", "low", r] => Distortion::LowPass(parse_num(r)?),
            ["fourier", "high", r] => Distortion::HighPass(parse_num(r)?),
            ["fourier", "rand", p] => Distortion::RandomFourier(parse_num(p)?),
            _ => {
                return Err(config_err(format!(
                    "unknown distortion `{s}`; expected identity, sat:<p>, patch:<k>, fourier:low:<r>, fourier:high:<r> or fourier:rand:<p>"
                )))
            }
        };
        d.validate()?;
        Ok(d)
    }
}

impl Serialize for Distortion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Distortion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A distortion plus the master seed for its random variants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionSpec {
    pub distortion: Distortion,
    pub seed: u64,
}

impl DistortionSpec {
    pub fn new(distortion: Distortion, seed: u64) -> Self {
        Self { distortion, seed }
    }

    /// Seed of image `index`: `seed ⊕ index`, so any image can be regenerated
    /// on its own.
    pub fn image_seed(&self, index: usize) -> u64 {
        self.seed ^ index as u64
    }

    /// Transforms image `index` of a dataset.
    pub fn apply(&self, img: &Image, index: usize) -> Result<Image> {
        let mut r = rng::rng_from(self.image_seed(index));
        apply_with(img, self.distortion, &mut r)
    }
}

pub fn apply_with(img: &Image, d: Distortion, rng: &mut Rng) -> Result<Image> {
    d.validate()?;
    match d {
        Distortion::Identity => Ok(img.clone()),
        Distortion::Saturation(p) => saturate(img, p),
        Distortion::PatchShuffle(k) => patch_shuffle(img, k, rng),
        Distortion::LowPass(r) => fourier_filter(img, FourierMask::Low(r), rng),
        Distortion::HighPass(r) => fourier_filter(img, FourierMask::High(r), rng),
        Distortion::RandomFourier(p) => fourier_filter(img, FourierMask::Random(p), rng),
    }
}

/// `sign(2v − 1)·|2v − 1|^(2/p) / 2 + 1/2` for one intensity.
pub fn saturate_value(v: f64, p: f64) -> f64 {
    let t = 2.0 * v - 1.0;
    if p.is_infinite() {
        return if t > 0.0 {
            1.0
        } else if t < 0.0 {
            0.0
        } else {
            0.5
        };
    }
    let sign = if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    };
    sign * libm::pow(libm::fabs(t), 2.0 / p) / 2.0 + 0.5
}

pub fn saturate(img: &Image, p: f64) -> Result<Image> {
    if !(p > 0.0) {
        return Err(config_err(format!("saturation level must be > 0, got {p}")));
    }
    Image::new(img.height(), img.width(), img.pixels().iter().map(|&v| saturate_value(v, p)).collect())
}

/// Largest centered crop whose sides are multiples of `k`.
pub fn crop_to_multiple(img: &Image, k: usize) -> Result<Image> {
    if k == 0 || k > img.height().min(img.width()) {
        return Err(config_err(format!(
            "patch grid {k} is larger than the {}x{} image",
            img.height(),
            img.width()
        )));
    }
    let (h, w) = (img.height() - img.height() % k, img.width() - img.width() % k);
    if (h, w) == (img.height(), img.width()) {
        Ok(img.clone())
    } else {
        img.center_crop(h, w)
    }
}

/// Rearranges the `k × k` patch grid so that output slot `i` (row-major)
/// holds input patch `perm[i]`.
pub fn patch_permute(img: &Image, k: usize, perm: &[usize]) -> Result<Image> {
    let img = crop_to_multiple(img, k)?;
    if perm.len() != k * k {
        return Err(config_err(format!("permutation has {} entries, grid has {}", perm.len(), k * k)));
    }
    let mut seen = vec![false; k * k];
    for &p in perm {
        if p >= k * k || core::mem::replace(&mut seen[p], true) {
            return Err(config_err("patch order is not a permutation"));
        }
    }
    let (ph, pw) = (img.height() / k, img.width() / k);
    let w = img.width();
    let src = img.pixels();
    let mut out = vec![0.0; src.len()];
    for (slot, &from) in perm.iter().enumerate() {
        let (sr, sc) = (from / k, from % k);
        let (dr, dc) = (slot / k, slot % k);
        for y in 0..ph {
            let s = ((sr * ph + y) * w + sc * pw) * 3;
            let d = ((dr * ph + y) * w + dc * pw) * 3;
            out[d..d + pw * 3].copy_from_slice(&src[s..s + pw * 3]);
        }
    }
    Image::new(img.height(), img.width(), out)
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Uniformly random permutation of the `k × k` grid.
pub fn random_patch_order(k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..k * k).collect();
    perm.shuffle(rng);
    perm
}

pub fn patch_shuffle(img: &Image, k: usize, rng: &mut Rng) -> Result<Image> {
    if k < 2 {
        return Err(config_err(format!("patch grid k must be >= 2, got {k}")));
    }
    let perm = random_patch_order(k, rng);
    patch_permute(img, k, &perm)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FourierMask {
    Low(f64),
    High(f64),
    Random(f64),
}

/// Keep/drop decision per mode of an `h × w` spectrum (unshifted layout).
pub fn fourier_mask(h: usize, w: usize, mask: FourierMask, rng: &mut Rng) -> Vec<bool> {
    let signed = |i: usize, n: usize| if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
    let (hh, hw) = (h as f64 / 2.0, w as f64 / 2.0);
    let half_diag = libm::sqrt(hh * hh + hw * hw);
    match mask {
        FourierMask::Low(r) | FourierMask::High(r) => {
            let low = matches!(mask, FourierMask::Low(_));
            (0..h * w)
                .map(|i| {
                    let (u, v) = (signed(i / w, h), signed(i % w, w));
                    let inside = libm::sqrt(u * u + v * v) <= r * half_diag;
                    inside == low
                })
                .collect()
        }
        FourierMask::Random(p) => {
            let mut keep = vec![true; h * w];
            for i in 0..h * w {
                let (u, v) = (i / w, i % w);
                let j = ((h - u) % h) * w + (w - v) % w;
                keep[i] = if j < i { keep[j] } else { rng.random::<f64>() >= p };
            }
            keep
        }
    }
}

/// Filtered channels before clamping, plus the largest imaginary magnitude
/// discarded by the inverse transform.
pub struct FourierRaw {
    pub height: usize,
    pub width: usize,
    /// HWC layout, unclamped.
    pub values: Vec<f64>,
    pub max_imaginary: f64,
}

pub fn fourier_filter_raw(img: &Image, mask: FourierMask, rng: &mut Rng) -> FourierRaw {
    let (h, w) = (img.height(), img.width());
    let keep = fourier_mask(h, w, mask, rng);
    let mut values = vec![0.0; h * w * 3];
    let mut max_imaginary = 0.0f64;
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    for c in 0..3 {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(img.pixels()[i * 3 + c], 0.0);
        }
        fft::fft2(&mut buf, h, w, false);
        for (b, &k) in buf.iter_mut().zip(&keep) {
            if !k {
                *b = Complex64::new(0.0, 0.0);
            }
        }
        fft::fft2(&mut buf, h, w, true);
        for (i, b) in buf.iter().enumerate() {
            values[i * 3 + c] = b.re;
            max_imaginary = max_imaginary.max(libm::fabs(b.im));
        }
    }
    FourierRaw { height: h, width: w, values, max_imaginary }
}

pub fn fourier_filter(img: &Image, mask: FourierMask, rng: &mut Rng) -> Result<Image> {
    let raw = fourier_filter_raw(img, mask, rng);
    Image::new(raw.height, raw.width, raw.values.into_iter().map(clamp01).collect())
}

/// Applies `spec` to every image, index aligned with the source.
pub fn distort_dataset<E: Executor>(src: &LabeledDataset, spec: &DistortionSpec, exec: &E) -> Result<LabeledDataset> {
    spec.distortion.validate()?;
    let images: Vec<Result<Image>> = exec.map(src.len(), |i| spec.apply(&src.images()[i], i));
    src.with_images(images.into_iter().collect::<Result<_>>()?)
}
