//! Pixel statistics that separate clean line drawings from generated
//! sketches: the share of pixels that are pure black or pure white, and
//! white fractions at a few thresholds.
//!
//! Real sketches are the corpus outlines. Blurred copies stand in for
//! generated ones, and binarizing those restores a pure two-level image.
//!
//!     cargo run --example sketch_statistics -- [out_dir]

use std::path::PathBuf;

use sketchgan::dataio::imageio::{load_gray_u8, save_gray_u8};
use sketchgan::dataio::synthetic::{make_synthetic_corpus, SyntheticConfig};
use sketchgan::pairgen::{binarize, sketch_report};
use sketchgan::Result;

fn main() -> Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/example-out/sketch_statistics"));
    let corpus = make_synthetic_corpus(&out.join("corpus"), &SyntheticConfig::default())?;
    let real: Vec<PathBuf> = corpus.records.iter().filter_map(|r| r.sketch_path.clone()).collect();

    let mut blurred = Vec::new();
    let mut binarized = Vec::new();
    for (i, p) in real.iter().enumerate() {
        let soft = image::imageops::blur(&load_gray_u8(p)?, 1.2);
        let a = out.join(format!("blurred/{i}.png"));
        let b = out.join(format!("binarized/{i}.png"));
        save_gray_u8(&soft, &a)?;
        save_gray_u8(&binarize(&soft, 128), &b)?;
        blurred.push(a);
        binarized.push(b);
    }

    for (name, fake) in [("blurred", &blurred), ("binarized", &binarized)] {
        let r = sketch_report(&real, fake, &[64, 128, 192])?;
        println!(
            "outlines vs {name}: binary mass {:.3} vs {:.3} (difference {:.3})",
            r.real_binary_fraction, r.fake_binary_fraction, r.difference
        );
        for row in &r.sweep {
            println!(
                "  white at >= {:>3}: {:.3} vs {:.3}",
                row.threshold, row.real_white_fraction, row.fake_white_fraction
            );
        }
    }
    Ok(())
}
