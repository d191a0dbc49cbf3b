//! Paired-dataset synthesis with a trained encoder, plus pixel statistics
//! for comparing real and generated sketches.

use std::path::{Path, PathBuf};

use image::GrayImage;
use serde::Serialize;

use crate::dataio::checkpoint::load_checkpoint;
use crate::dataio::imageio::{load_gray_u8, load_image, save_gray_u8, tensor_to_gray, ColorMode};
use crate::dataio::manifest::{read_manifest, write_manifest, Manifest, PairRecord};
use crate::encoder::encode;
use crate::error::{Error, Result};

/// Name of the network kept from the encoder checkpoint.
pub const ENCODER_NETWORK: &str = "G";
pub const PAIRS_MANIFEST: &str = "pairs.tsv";

/// `pixel >= threshold` becomes 255, everything else 0.
pub fn binarize(img: &GrayImage, threshold: u8) -> GrayImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        p.0[0] = if p.0[0] >= threshold { 255 } else { 0 };
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PixelHistogram {
    #[serde(with = "counts_serde")]
    pub counts: [u64; 256],
    pub total: u64,
}

mod counts_serde {
    use serde::Serializer;
    pub fn serialize<S: Serializer>(c: &[u64; 256], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(c.iter())
    }
}

impl Default for PixelHistogram {
    fn default() -> Self {
        PixelHistogram {
            counts: [0; 256],
            total: 0,
        }
    }
}

impl PixelHistogram {
    pub fn from_image(img: &GrayImage) -> Self {
        let mut h = Self::default();
        h.add_image(img);
        h
    }

    pub fn add_image(&mut self, img: &GrayImage) {
        for p in img.pixels() {
            self.counts[p.0[0] as usize] += 1;
        }
        self.total += img.pixels().len() as u64;
    }

    pub fn merge(&mut self, other: &PixelHistogram) {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
        self.total += other.total;
    }

    /// Fraction of pixels at or above `threshold`, i.e. white after
    /// binarizing at that threshold.
    pub fn fraction_at_least(&self, threshold: u8) -> Result<f64> {
        self.require_nonempty()?;
        let n: u64 = self.counts[threshold as usize..].iter().sum();
        Ok(n as f64 / self.total as f64)
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.total == 0 {
            return Err(Error::Data("histogram is empty".into()));
        }
        Ok(())
    }
}

/// Exact per-value pixel counts over the gray channel of every image.
pub fn pixel_histogram<P: AsRef<Path>>(paths: &[P]) -> Result<PixelHistogram> {
    if paths.is_empty() {
        return Err(Error::Data("pixel_histogram needs at least one image".into()));
    }
    let mut h = PixelHistogram::default();
    for p in paths {
        h.add_image(&load_gray_u8(p.as_ref())?);
    }
    Ok(h)
}

/// `(counts[0] + counts[255]) / total`.
pub fn binary_mass_fraction(hist: &PixelHistogram) -> Result<f64> {
    hist.require_nonempty()?;
    Ok((hist.counts[0] + hist.counts[255]) as f64 / hist.total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub threshold: u8,
    pub real_white_fraction: f64,
    pub fake_white_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SketchReport {
    pub real: PixelHistogram,
    pub fake: PixelHistogram,
    pub real_binary_fraction: f64,
    pub fake_binary_fraction: f64,
    /// `real_binary_fraction - fake_binary_fraction`.
    pub difference: f64,
    /// White share each corpus would have after binarizing at each
    /// threshold; informational only, the fractions above use raw pixels.
    pub sweep: Vec<ThresholdRow>,
}

pub fn sketch_report<P: AsRef<Path>, Q: AsRef<Path>>(
    real_paths: &[P],
    fake_paths: &[Q],
    thresholds: &[u8],
) -> Result<SketchReport> {
    let real = pixel_histogram(real_paths)?;
    let fake = pixel_histogram(fake_paths)?;
    let real_binary_fraction = binary_mass_fraction(&real)?;
    let fake_binary_fraction = binary_mass_fraction(&fake)?;
    let sweep = thresholds
        .iter()
        .map(|&t| {
            Ok(ThresholdRow {
                threshold: t,
                real_white_fraction: real.fraction_at_least(t)?,
                fake_white_fraction: fake.fraction_at_least(t)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SketchReport {
        real,
        fake,
        real_binary_fraction,
        fake_binary_fraction,
        difference: real_binary_fraction - fake_binary_fraction,
        sweep,
    })
}

#[derive(Clone, Debug)]
pub struct PairsOutcome {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
    /// Corpus rows that could not be processed, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

fn sketch_file_name(index: usize, image: &Path) -> String {
    let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    format!("{index:05}_{stem}.png")
}

/// Encodes every corpus image into a sketch under `out_dir/sketches/<class>/`
/// and writes `out_dir/pairs.tsv` listing (image, sketch, label, split).
pub fn generate_pairs(
    encoder_ckpt: &Path,
    corpus_manifest: &Path,
    out_dir: &Path,
    binarize_threshold: Option<u8>,
) -> Result<PairsOutcome> {
    let mut ckpt = load_checkpoint(encoder_ckpt)?;
    let g = ckpt.take_network(ENCODER_NETWORK)?;
    let size = g.spec().input_size;
    let corpus = read_manifest(corpus_manifest)?;
    let out = std::path::absolute(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(corpus.records.len());
    let mut skipped = Vec::new();
    for (i, rec) in corpus.records.iter().enumerate() {
        let image = match load_image(&rec.image_path, size, ColorMode::Gray) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("skipping {}: {e}", rec.image_path.display());
                skipped.push((rec.image_path.clone(), e.to_string()));
                continue;
            }
        };
        let mut sketch = tensor_to_gray(&encode(&g, &image)?)?;
        if let Some(t) = binarize_threshold {
            sketch = binarize(&sketch, t);
        }
        let sketch_path = out
            .join("sketches")
            .join(&rec.label_name)
            .join(sketch_file_name(i, &rec.image_path));
        save_gray_u8(&sketch, &sketch_path)?;
        records.push(PairRecord {
            sketch_path: Some(sketch_path),
            ..rec.clone()
        });
    }
    if records.is_empty() {
        return Err(Error::Data(format!(
            "no corpus image could be encoded ({} skipped)",
            skipped.len()
        )));
    }
    let manifest = Manifest {
        classes: corpus.classes,
        records,
    };
    let manifest_path = out.join(PAIRS_MANIFEST);
    write_manifest(&manifest_path, &manifest)?;
    Ok(PairsOutcome {
        manifest_path,
        manifest,
        skipped,
    })
}
