//! CIFAR-10 binary records: one label byte followed by 3072 channel-planar
//! pixel bytes (1024 red, 1024 green, 1024 blue, each row-major 32×32).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Image;

pub const RECORD_LEN: usize = 3073;
pub const SIDE: usize = 32;

pub const CLASS_NAMES: [&str; 10] =
    ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"];

pub fn class_names() -> Vec<String> {
    CLASS_NAMES.iter().map(|s| String::from(*s)).collect()
}

/// Decodes a whole batch file, preserving record order.
pub fn parse_records(bytes: &[u8]) -> Result<(Vec<Image>, Vec<usize>)> {
    if bytes.len() % RECORD_LEN != 0 {
        return Err(Error::Format(format!(
            "CIFAR-10 batch of {} bytes is not a multiple of the {RECORD_LEN}-byte record",
            bytes.len()
        )));
    }
    let plane = SIDE * SIDE;
    let mut images = Vec::with_capacity(bytes.len() / RECORD_LEN);
    let mut labels = Vec::with_capacity(bytes.len() / RECORD_LEN);
    for (i, rec) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        let label = rec[0] as usize;
        if label >= 10 {
            return Err(Error::Format(format!("record {i} has label {label}, expected 0..10")));
        }
        let px = &rec[1..];
        let mut pixels = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            for c in 0..3 {
                pixels.push(f64::from(px[c * plane + p]) / 255.0);
            }
        }
        images.push(Image::new(SIDE, SIDE, pixels)?);
        labels.push(label);
    }
    Ok((images, labels))
}

/// Inverse of [`parse_records`] at 8-bit precision.
pub fn encode_records(images: &[Image], labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(images.len() * RECORD_LEN);
    for (img, &label) in images.iter().zip(labels) {
        if img.height() != SIDE || img.width() != SIDE || label >= 256 {
            return Err(Error::Format("CIFAR-10 records hold 32x32 images with byte labels".into()));
        }
        out.push(label as u8);
        let bytes = img.to_bytes();
        for c in 0..3 {
            out.extend(bytes.iter().skip(c).step_by(3));
        }
    }
    Ok(out)
}
