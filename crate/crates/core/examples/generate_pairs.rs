//! Turns a labeled image corpus into (image, fake sketch, label) pairs with
//! an encoder checkpoint, optionally binarizing the sketches.
//!
//!     cargo run --release --example generate_pairs -- [out_dir]

use std::path::PathBuf;

use sketchgan::dataio::config::RunConfig;
use sketchgan::dataio::synthetic::{make_synthetic_corpus, SyntheticConfig};
use sketchgan::pairgen::{binary_mass_fraction, generate_pairs, pixel_histogram};
use sketchgan::pipeline::train_encoder;
use sketchgan::Result;

fn main() -> Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/example-out/generate_pairs"));
    make_synthetic_corpus(&out.join("corpus"), &SyntheticConfig::default())?;
    let corpus = out.join("corpus/corpus.tsv");

    // A short encoder run is enough to produce sketches to pair with.
    let cfg = RunConfig::resolve(None, &["profile=small".into(), "encoder.max_steps=60".into()])?;
    let encoder = out.join("encoder.ckpt");
    train_encoder(&cfg, &corpus, &corpus, &encoder)?;

    for (name, threshold) in [("raw", None), ("binarized", Some(128))] {
        let result = generate_pairs(&encoder, &corpus, &out.join(name), threshold)?;
        let sketches: Vec<_> = result
            .manifest
            .records
            .iter()
            .filter_map(|r| r.sketch_path.clone())
            .collect();
        let mass = binary_mass_fraction(&pixel_histogram(&sketches)?)?;
        println!(
            "{name:>9}: {} pairs, {} skipped, binary mass fraction {mass:.3}, manifest {}",
            result.manifest.records.len(),
            result.skipped.len(),
            result.manifest_path.display()
        );
    }
    Ok(())
}
