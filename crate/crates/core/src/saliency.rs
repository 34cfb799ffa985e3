//! Input-gradient sensitivity maps: Grad (the gradient of the class
//! log-probability with respect to the pixels) and SmoothGrad (the same
//! gradient averaged over Gaussian-noised copies of the image).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{dim_err, Error, Result};
use crate::image::{quantize, Image};
use crate::model::Network;
use crate::rng;
use crate::tensor::Tensor;

/// Default number of noisy copies for SmoothGrad.
pub const SMOOTHGRAD_SAMPLES: usize = 100;
/// Default noise level σ / (x_max − x_min).
pub const SMOOTHGRAD_SIGMA_REL: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Grad,
    SmoothGrad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    pub method: Method,
    pub class: usize,
    pub samples: usize,
    pub sigma: f64,
}

/// Non-negative `height × width` map normalized to a maximum of 1 (an
/// all-zero map stays all zero).
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub provenance: Option<Provenance>,
}

impl SaliencyMap {
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(dim_err("saliency", format!("{height}x{width} map needs {} values", height * width)));
        }
        Ok(Self { height, width, values, provenance: None })
    }

    /// 8-bit grayscale bytes, `round(255 · value)`.
    pub fn to_gray_bytes(&self) -> Vec<u8> {
        self.values.iter().map(|&v| quantize(v)).collect()
    }
}

/// Gradient of `log p_class(x)` with respect to a `[C, H, W]` input.
pub fn log_prob_gradient(net: &Network, x: &Tensor, class: usize) -> Result<Tensor> {
    if class >= net.class_count() {
        return Err(Error::Index(format!("class {class} outside [0, {})", net.class_count())));
    }
    let shape = x.shape().to_vec();
    let mut batch_shape = alloc::vec![1];
    batch_shape.extend_from_slice(&shape);
    let mut tape = Tape::new();
    let input = tape.variable(x.clone().reshape(&batch_shape)?);
    let rec = net.record(&mut tape, input, false)?;
    let lp = tape.log_softmax(rec.logits)?;
    // cross_entropy of a single row is −log p_class.
    let nll = tape.cross_entropy(lp, &[class])?;
    let mut grads = tape.backward(nll)?;
    let g = grads.take(input).expect("input requires grad");
    Ok(g.map(|v| -v).reshape(&shape)?)
}

/// Mean of `gradient` over `samples` copies of `x` with i.i.d. `N(0, σ²)`
/// noise per value. Copies are not clamped to the pixel range.
pub fn smoothgrad_raw(
    mut gradient: impl FnMut(&Tensor) -> Result<Tensor>,
    x: &Tensor,
    samples: usize,
    sigma: f64,
    seed: u64,
) -> Result<Tensor> {
    if samples == 0 {
        return Err(crate::error::config_err("smoothgrad needs at least one sample"));
    }
    if !(sigma >= 0.0) {
        return Err(crate::error::config_err(format!("noise level must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        // Every copy equals x, so the mean is the plain gradient.
        return gradient(x);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| crate::error::config_err(format!("{e}")))?;
    let mut acc = Tensor::zeros(x.shape());
    for i in 0..samples {
        let mut r = rng::stream(seed, i as u64);
        let noise: Vec<f64> = (0..x.len()).map(|_| normal.sample(&mut r)).collect();
        let data = x.data().iter().zip(&noise).map(|(v, e)| v + e).collect();
        let noisy = Tensor::new(x.shape().to_vec(), data)?;
        let g = gradient(&noisy)?;
        acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
    }
    let inv = samples as f64;
    Ok(acc.map(|v| v / inv))
}

/// Sums absolute values over the channel axis of a `[C, H, W]` gradient and
/// divides by the map maximum.
pub fn aggregate_channels(raw: &Tensor) -> Result<SaliencyMap> {
    let s = raw.shape();
    if s.len() != 3 {
        return Err(dim_err("aggregate_channels", format!("expected [C,H,W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut values = alloc::vec![0.0; h * w];
    for ch in 0..c {
        for (v, g) in values.iter_mut().zip(&raw.data()[ch * h * w..(ch + 1) * h * w]) {
            *v += libm::fabs(*g);
        }
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
    SaliencyMap::from_values(h, w, values)
}

pub fn grad_map(net: &Network, x: &Image, class: usize, model_id: &str) -> Result<SaliencyMap> {
    let raw = log_prob_gradient(net, &x.to_chw(), class)?;
    let mut map = aggregate_channels(&raw)?;
    map.provenance = Some(Provenance { model_id: model_id.into(), method: Method::Grad, class, samples: 1, sigma: 0.0 });
    Ok(map)
}

/// SmoothGrad with σ = `sigma_rel · (x_max − x_min)` measured on this image.
pub fn smoothgrad_map(
    net: &Network,
    x: &Image,
    class: usize,
    samples: usize,
    sigma_rel: f64,
    seed: u64,
    model_id: &str,
) -> Result<SaliencyMap> {
    if !(sigma_rel >= 0.0) {
        return Err(crate::error::config_err(format!("sigma_rel must be >= 0, got {sigma_rel}")));
    }
    if class >= net.class_count() {
        return Err(Error::Index(format!("class {class} outside [0, {})", net.class_count())));
    }
    let t = x.to_chw();
    let lo = t.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sigma = sigma_rel * (hi - lo);
    let raw = smoothgrad_raw(|v| log_prob_gradient(net, v, class), &t, samples, sigma, seed)?;
    let mut map = aggregate_channels(&raw)?;
    map.provenance = Some(Provenance { model_id: model_id.into(), method: Method::SmoothGrad, class, samples, sigma });
    Ok(map)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapDistance {
    #[default]
    MeanAbsolute,
    Rms,
}

pub fn map_distance(a: &SaliencyMap, b: &SaliencyMap, metric: MapDistance) -> Result<f64> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(dim_err(
            "map_distance",
            format!("maps are {}x{} and {}x{}", a.height, a.width, b.height, b.width),
        ));
    }
    let n = a.values.len() as f64;
    let diffs = a.values.iter().zip(&b.values).map(|(p, q)| p - q);
    Ok(match metric {
        MapDistance::MeanAbsolute => diffs.map(libm::fabs).sum::<f64>() / n,
        MapDistance::Rms => libm::sqrt(diffs.map(|d| d * d).sum::<f64>() / n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn opposite_channels_add_magnitudes() {
        let raw = Tensor::new(vec![3, 1, 2], vec![0.5, 0.25, -0.5, 0.0, 0.0, 0.0]).unwrap();
        let m = aggregate_channels(&raw).unwrap();
        // pixel 0 → 1.0 before normalization, pixel 1 → 0.25
        assert_eq!(m.values, vec![1.0, 0.25]);
    }

    #[test]
    fn single_pixel_normalizes_to_one() {
        let mut raw = Tensor::zeros(&[3, 2, 2]);
        raw.data_mut()[5] = -3.0;
        let m = aggregate_channels(&raw).unwrap();
        assert_eq!(m.values, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_map_stays_zero() {
        let m = aggregate_channels(&Tensor::zeros(&[3, 2, 2])).unwrap();
        assert_eq!(m.values, vec![0.0; 4]);
        assert_eq!(m.to_gray_bytes(), vec![0; 4]);
    }

    #[test]
    fn distances() {
        let zeros = SaliencyMap::from_values(2, 2, vec![0.0; 4]).unwrap();
        let ones = SaliencyMap::from_values(2, 2, vec![1.0; 4]).unwrap();
        assert_eq!(map_distance(&zeros, &zeros, MapDistance::MeanAbsolute).unwrap(), 0.0);
        assert_eq!(map_distance(&zeros, &ones, MapDistance::MeanAbsolute).unwrap(), 1.0);
        assert_eq!(map_distance(&zeros, &ones, MapDistance::Rms).unwrap(), 1.0);
        let other = SaliencyMap::from_values(1, 4, vec![0.0; 4]).unwrap();
        assert!(map_distance(&zeros, &other, MapDistance::Rms).is_err());
    }

    #[test]
    fn value_one_quantizes_to_255() {
        let m = SaliencyMap::from_values(1, 2, vec![1.0, 0.5]).unwrap();
        assert_eq!(m.to_gray_bytes(), vec![255, 128]);
    }
}
