//! Procedural labeled corpus: each class is a filled shape of one type and
//! one color on white, paired with its exact outline drawn black on white.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::imageio::{save_gray_u8, save_png};
use super::manifest::{assign_splits, write_manifest, Manifest, PairRecord, SplitFractions};
use crate::error::{Error, Result};

pub const SHAPES: [&str; 4] = ["circle", "square", "triangle", "diamond"];

const PALETTE: [(&str, [u8; 3]); 6] = [
    ("red", [205, 45, 40]),
    ("blue", [40, 70, 200]),
    ("green", [40, 160, 60]),
    ("orange", [235, 140, 20]),
    ("purple", [130, 50, 170]),
    ("teal", [20, 150, 150]),
];

/// Half-width of the outline stroke, in pixels.
pub const OUTLINE_HALF_WIDTH: f32 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub per_class: usize,
    pub num_classes: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            per_class: 32,
            num_classes: 2,
            size: 32,
            seed: 0,
        }
    }
}

pub fn class_name(class: usize) -> String {
    let (color, _) = PALETTE[class % PALETTE.len()];
    let shape = SHAPES[class % SHAPES.len()];
    // (color, shape) pairs repeat with period lcm(6, 4) = 12.
    let round = class / 12;
    if round == 0 {
        format!("{color}-{shape}")
    } else {
        format!("{color}-{shape}-{round}")
    }
}

pub fn class_color(class: usize) -> [u8; 3] {
    PALETTE[class % PALETTE.len()].1
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shape {
    pub class: usize,
    pub cx: f32,
    pub cy: f32,
    pub r: f32,
}

impl Shape {
    pub fn random<R: Rng>(class: usize, size: usize, rng: &mut R) -> Self {
        let s = size as f32;
        let r = rng.random_range(0.22..0.34) * s;
        let margin = r + 1.5;
        let (lo, hi) = (margin, (s - margin).max(margin + 1e-3));
        Shape {
            class,
            cx: rng.random_range(lo..hi),
            cy: rng.random_range(lo..hi),
            r,
        }
    }

    /// Signed distance in pixels (negative inside) at point `(x, y)`.
    pub fn distance(&self, x: f32, y: f32) -> f32 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        match self.class % SHAPES.len() {
            0 => (dx * dx + dy * dy).sqrt() - self.r,
            1 => polygon_distance(&square(self.r * 0.85), dx, dy),
            2 => polygon_distance(&triangle(self.r), dx, dy),
            _ => polygon_distance(&diamond(self.r), dx, dy),
        }
    }

    pub fn draw(&self, size: usize) -> RgbImage {
        let fill = Rgb(class_color(self.class));
        RgbImage::from_fn(size as u32, size as u32, |x, y| {
            if self.distance(x as f32 + 0.5, y as f32 + 0.5) < 0.0 {
                fill
            } else {
                Rgb([255, 255, 255])
            }
        })
    }

    /// Black stroke where the boundary passes, white elsewhere.
    pub fn outline(&self, size: usize) -> GrayImage {
        GrayImage::from_fn(size as u32, size as u32, |x, y| {
            if self.distance(x as f32 + 0.5, y as f32 + 0.5).abs() <= OUTLINE_HALF_WIDTH {
                Luma([0])
            } else {
                Luma([255])
            }
        })
    }
}

fn square(h: f32) -> [(f32, f32); 4] {
    [(-h, -h), (h, -h), (h, h), (-h, h)]
}

fn diamond(r: f32) -> [(f32, f32); 4] {
    [(0.0, -r), (r, 0.0), (0.0, r), (-r, 0.0)]
}

fn triangle(r: f32) -> [(f32, f32); 3] {
    let h = r * 0.866;
    [(0.0, -r), (h, r * 0.5), (-h, r * 0.5)]
}

/// Max over edges of the distance to each edge's line; vertices are listed
/// clockwise in image coordinates (y down).
fn polygon_distance(v: &[(f32, f32)], x: f32, y: f32) -> f32 {
    let mut d = f32::NEG_INFINITY;
    for i in 0..v.len() {
        let (ax, ay) = v[i];
        let (bx, by) = v[(i + 1) % v.len()];
        let (ex, ey) = (bx - ax, by - ay);
        let len = (ex * ex + ey * ey).sqrt();
        // Outward normal for clockwise winding in y-down coordinates.
        let (nx, ny) = (ey / len, -ex / len);
        d = d.max((x - ax) * nx + (y - ay) * ny);
    }
    d
}

fn item_rng(seed: u64, class: usize, index: usize) -> ChaCha8Rng {
    let mut h = crate::tensor::Fnv::new();
    h.write(&seed.to_le_bytes());
    h.write(&(class as u64).to_le_bytes());
    h.write(&(index as u64).to_le_bytes());
    ChaCha8Rng::seed_from_u64(h.finish())
}

/// Writes `images/<class>/<i>.png`, `sketches/<class>/<i>.png` and
/// `corpus.tsv` (with its class table) under `out_dir`.
pub fn make_synthetic_corpus(out_dir: &Path, cfg: &SyntheticConfig) -> Result<Manifest> {
    if cfg.num_classes == 0 {
        return Err(Error::Config("num_classes must be at least 1".into()));
    }
    if cfg.size < 8 {
        return Err(Error::Config(format!("image size {} is too small (min 8)", cfg.size)));
    }
    let out = std::path::absolute(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let classes: Vec<String> = (0..cfg.num_classes).map(class_name).collect();
    let n = cfg.per_class * cfg.num_classes;
    let splits = assign_splits(n, SplitFractions::default(), cfg.seed);
    let mut records = Vec::with_capacity(n);
    for (class, name) in classes.iter().enumerate() {
        for i in 0..cfg.per_class {
            let shape = Shape::random(class, cfg.size, &mut item_rng(cfg.seed, class, i));
            let image_path = out.join("images").join(name).join(format!("{i:04}.png"));
            let sketch_path = out.join("sketches").join(name).join(format!("{i:04}.png"));
            save_png(&image::DynamicImage::ImageRgb8(shape.draw(cfg.size)), &image_path)?;
            save_gray_u8(&shape.outline(cfg.size), &sketch_path)?;
            records.push(PairRecord {
                image_path,
                sketch_path: Some(sketch_path),
                label_id: class,
                label_name: name.clone(),
                split: splits[records.len()],
            });
        }
    }
    let manifest = Manifest { classes, records };
    write_manifest(&out.join("corpus.tsv"), &manifest)?;
    Ok(manifest)
}
