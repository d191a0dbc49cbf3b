//! Draws the bundled labeled shape corpus with its outline sketches.
//!
//!     cargo run --example synthetic_corpus -- [out_dir]

use std::path::PathBuf;

use sketchgan::dataio::synthetic::{make_synthetic_corpus, SyntheticConfig};
use sketchgan::Result;

fn main() -> Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/example-out/synthetic_corpus"));
    let cfg = SyntheticConfig {
        per_class: 8,
        num_classes: 4,
        size: 64,
        seed: 1,
    };
    let manifest = make_synthetic_corpus(&out, &cfg)?;
    println!("classes: {}", manifest.classes.join(", "));
    println!("per class: {:?}", manifest.per_class_counts());
    for r in manifest.records.iter().take(4) {
        println!(
            "{} [{}] image {} sketch {}",
            r.label_name,
            r.label_id,
            r.image_path.display(),
            r.sketch_path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        );
    }
    println!("manifest: {}", out.join("corpus.tsv").display());
    Ok(())
}
