//! Trains the unpaired image-to-sketch encoder on the synthetic corpus with
//! the small profile, then measures how close encoded images land to the
//! true outlines.
//!
//!     cargo run --release --example train_encoder -- [steps] [out_dir]

use std::path::PathBuf;

use sketchgan::dataio::config::RunConfig;
use sketchgan::dataio::imageio::{load_image, ColorMode};
use sketchgan::dataio::synthetic::{make_synthetic_corpus, SyntheticConfig};
use sketchgan::encoder::encode;
use sketchgan::pipeline::train_encoder;
use sketchgan::Result;

fn main() -> Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let out = std::env::args()
        .nth(2)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/example-out/train_encoder"));

    let corpus = make_synthetic_corpus(&out.join("corpus"), &SyntheticConfig::default())?;
    let manifest = out.join("corpus/corpus.tsv");
    let cfg = RunConfig::resolve(None, &["profile=small".into(), format!("encoder.max_steps={steps}")])?;

    let run = train_encoder(&cfg, &manifest, &manifest, &out.join("encoder.ckpt"))?;
    for r in run.history().iter().filter(|r| r.step == 1 || r.step % 50 == 0) {
        println!(
            "step {:>4}  cyc {:.4}  gan_g {:.3}  gan_f {:.3}  d_x {:.3}  d_y {:.3}",
            r.step, r.loss_cyc, r.loss_gan_g, r.loss_gan_f, r.loss_d_x, r.loss_d_y
        );
    }

    let g = &run.trainer.quartet.g;
    let (mut encoded, mut raw) = (0.0, 0.0);
    for r in &corpus.records {
        let x = load_image(&r.image_path, 32, ColorMode::Gray)?;
        let outline = load_image(
            r.sketch_path.as_ref().expect("corpus has sketches"),
            32,
            ColorMode::Gray,
        )?;
        encoded += encode(g, &x)?.mean_abs_diff(&outline)?;
        raw += x.mean_abs_diff(&outline)?;
    }
    let n = corpus.records.len() as f64;
    println!(
        "mean |G(x) - outline| = {:.4}, mean |x - outline| = {:.4}",
        encoded / n,
        raw / n
    );
    println!("checkpoint {} log {}", run.checkpoint.display(), run.log.display());
    Ok(())
}
