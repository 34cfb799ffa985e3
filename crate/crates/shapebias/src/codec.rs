//! PNG and binary PPM codecs at 8-bit precision.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};
use shapebias_core::image::Image;
use shapebias_core::saliency::SaliencyMap;

use crate::error::{format_err, io_err, Result};

/// Reads an 8-bit RGB or grayscale PNG; grayscale is replicated to three
/// channels.
pub fn read_png(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let decoded = ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png)
        .decode()
        .map_err(|e| format_err(path, format!("PNG decode failed: {e}")))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let rgb: Vec<u8> = match decoded {
        DynamicImage::ImageRgb8(buf) => buf.into_raw(),
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().flat_map(|v| [v, v, v]).collect(),
        other => {
            return Err(format_err(
                path,
                format!("unsupported PNG pixel format {:?}; expected 8-bit RGB or grayscale", other.color()),
            ))
        }
    };
    Ok(Image::from_bytes(h, w, &rgb)?)
}

pub fn write_png(img: &Image, path: &Path) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_bytes()).expect("buffer size");
    save(DynamicImage::ImageRgb8(buf), path)
}

/// Grayscale PNG with `pixel = round(255 · value)`.
pub fn write_map_png(map: &SaliencyMap, path: &Path) -> Result<()> {
    let buf = image::GrayImage::from_raw(map.width as u32, map.height as u32, map.to_gray_bytes()).expect("buffer size");
    save(DynamicImage::ImageLuma8(buf), path)
}

/// Side-by-side panel: the image on the left, its map (as gray) on the right.
pub fn write_montage_png(img: &Image, map: &SaliencyMap, path: &Path) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    if (map.height, map.width) != (h, w) {
        return Err(format_err(path, format!("map is {}x{}, image is {h}x{w}", map.height, map.width)));
    }
    let left = img.to_bytes();
    let right = map.to_gray_bytes();
    let mut out = Vec::with_capacity(h * w * 6);
    for y in 0..h {
        out.extend_from_slice(&left[y * w * 3..(y + 1) * w * 3]);
        for &g in &right[y * w..(y + 1) * w] {
            out.extend_from_slice(&[g, g, g]);
        }
    }
    let buf = image::RgbImage::from_raw(2 * w as u32, h as u32, out).expect("buffer size");
    save(DynamicImage::ImageRgb8(buf), path)
}

fn save(img: DynamicImage, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| format_err(path, format!("PNG encode failed: {e}")))?;
    fs::write(path, bytes).map_err(io_err(path))
}

/// Binary `P6` PPM with maxval 255.
pub fn write_ppm(img: &Image, path: &Path) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(&img.to_bytes());
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_ppm(&bytes).map_err(|detail| format_err(path, detail))
}

fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PPM header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(format!("unsupported PPM magic {:?}; only binary P6 is read", fields[0]));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad PPM header field {s:?}"));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 {
        return Err(format!("unsupported PPM maxval {max}; expected 255"));
    }
    let data = &bytes[pos + 1..];
    if data.len() != w * h * 3 {
        return Err(format!("PPM body holds {} bytes, header implies {}", data.len(), w * h * 3));
    }
    Image::from_bytes(h, w, data).map_err(|e| e.to_string())
}

/// Reads `.png` or `.ppm` by extension.
pub fn read_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => read_png(path),
        Some("ppm") => read_ppm(path),
        _ => Err(format_err(path, "unknown image extension; expected .png or .ppm")),
    }
}

