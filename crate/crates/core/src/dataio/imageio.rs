use std::io::Cursor;
use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use super::atomic_write;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    /// Luma, replicated into three identical channels.
    Gray,
    Rgb,
}

/// 8-bit value to `[-1, 1]`.
pub fn from_u8(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// `[-1, 1]` to 8-bit, rounding half away from zero and clamping.
pub fn to_u8(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory(&bytes).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Decodes an image and returns its luma plane at native size.
pub fn load_gray_u8(path: &Path) -> Result<GrayImage> {
    Ok(decode(path)?.to_luma8())
}

/// Loads a PNG or JPEG as a `[3, size, size]` tensor in `[-1, 1]`, resizing
/// bilinearly when the stored size differs.
pub fn load_image(path: &Path, size: usize, mode: ColorMode) -> Result<Tensor> {
    if size == 0 {
        return Err(Error::Config("target image size must be positive".into()));
    }
    let img = decode(path)?;
    let s = size as u32;
    let rgb: RgbImage = match mode {
        ColorMode::Gray => {
            let mut g = img.to_luma8();
            if g.dimensions() != (s, s) {
                g = image::imageops::resize(&g, s, s, FilterType::Triangle);
            }
            DynamicImage::ImageLuma8(g).to_rgb8()
        }
        ColorMode::Rgb => {
            let mut c = img.to_rgb8();
            if c.dimensions() != (s, s) {
                c = image::imageops::resize(&c, s, s, FilterType::Triangle);
            }
            c
        }
    };
    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = from_u8(px.0[c]);
        }
    }
    Tensor::new(vec![3, size, size], data)
}

fn planes(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] if c == 1 || c == 3 => Ok((c, h, w)),
        _ => Err(Error::Shape(format!(
            "image tensors must be [1|3,H,W], got {}",
            t.shape_string()
        ))),
    }
}

/// Luma plane of a `[1|3,H,W]` tensor; three channels are averaged.
pub fn tensor_to_gray(t: &Tensor) -> Result<GrayImage> {
    let (c, h, w) = planes(t)?;
    let plane = h * w;
    let d = t.data();
    let buf = (0..plane)
        .map(|i| {
            let v = (0..c).map(|k| d[k * plane + i]).sum::<f32>() / c as f32;
            to_u8(v)
        })
        .collect();
    Ok(GrayImage::from_raw(w as u32, h as u32, buf).expect("buffer sized to plane"))
}

pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let (c, h, w) = planes(t)?;
    let plane = h * w;
    let d = t.data();
    let mut buf = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for k in 0..3 {
            buf.push(to_u8(d[(k % c) * plane + i]));
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized to plane"))
}

/// Inverse of [`load_image`] at native size; writes PNG atomically.
pub fn save_image(t: &Tensor, path: &Path, mode: ColorMode) -> Result<()> {
    let img = match mode {
        ColorMode::Gray => DynamicImage::ImageLuma8(tensor_to_gray(t)?),
        ColorMode::Rgb => DynamicImage::ImageRgb8(tensor_to_rgb(t)?),
    };
    save_png(&img, path)
}

pub fn save_png(img: &DynamicImage, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    atomic_write(path, &bytes)
}

pub fn save_gray_u8(img: &GrayImage, path: &Path) -> Result<()> {
    save_png(&DynamicImage::ImageLuma8(img.clone()), path)
}

/// Image files (png, jpg, jpeg) directly under or below `dir`, sorted.
pub fn list_images(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| e.to_ascii_lowercase())
                    .as_deref(),
                Some("png" | "jpg" | "jpeg")
            ) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}
