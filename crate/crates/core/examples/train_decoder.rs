//! Trains the label-conditioned sketch-to-image decoder on paired data and
//! renders one sketch under every label.
//!
//! The pairs here use the corpus' own outline sketches so the example runs
//! without an encoder; `full_pipeline` shows the encoder-generated variant.
//!
//!     cargo run --release --example train_decoder -- [steps] [out_dir]

use std::path::PathBuf;

use sketchgan::dataio::imageio::{load_image, save_image, ColorMode};
use sketchgan::dataio::synthetic::{make_synthetic_corpus, SyntheticConfig};
use sketchgan::decoder::{translate, DecoderTrainConfig, DecoderTrainer, PairedItem};
use sketchgan::Result;

fn main() -> Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let out = std::env::args()
        .nth(2)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/example-out/train_decoder"));

    let corpus = make_synthetic_corpus(&out.join("corpus"), &SyntheticConfig::default())?;
    let cfg = DecoderTrainConfig {
        max_steps: steps,
        num_classes: corpus.num_classes(),
        ..DecoderTrainConfig::small()
    };
    let items = corpus
        .records
        .iter()
        .map(|r| {
            Ok(PairedItem {
                sketch: load_image(
                    r.sketch_path.as_ref().expect("corpus has sketches"),
                    cfg.image_size,
                    ColorMode::Gray,
                )?,
                image: load_image(&r.image_path, cfg.image_size, ColorMode::Rgb)?,
                label: r.label_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sketch = items[0].sketch.clone();

    let mut trainer = DecoderTrainer::new(cfg, items)?;
    while trainer.steps_done() < trainer.config.max_steps {
        let r = trainer.step()?;
        if r.step == 1 || r.step % 25 == 0 {
            println!(
                "step {:>4}  l1 {:.4}  adv {:.4}  d {:.4}",
                r.step, r.loss_l1, r.loss_adv, r.loss_d
            );
        }
    }

    for label in 0..trainer.config.num_classes {
        let image = translate(&trainer.pair.g, &sketch, label as i64, trainer.config.num_classes)?;
        let path = out.join(format!("label_{label}.png"));
        save_image(&image, &path, ColorMode::Rgb)?;
        let plane = image.numel() / 3;
        let means: Vec<String> = image
            .data()
            .chunks(plane)
            .map(|c| format!("{:+.3}", c.iter().sum::<f32>() / plane as f32))
            .collect();
        println!(
            "label {label}: channel means [{}] -> {}",
            means.join(", "),
            path.display()
        );
    }
    Ok(())
}
