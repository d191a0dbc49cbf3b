//! The whole command-line workflow driven in-process: corpus, encoder,
//! pairs, decoder and translation, at the small profile.
//!
//!     cargo run --release --example full_pipeline -- [out_dir]

use std::path::PathBuf;

use sketchgan::cli;
use sketchgan::dataio::manifest::read_manifest;

fn sketchgan(args: &[&str]) {
    let mut argv = vec!["sketchgan", "--set", "profile=small"];
    argv.extend_from_slice(args);
    println!("$ {}", argv.join(" "));
    let code = cli::run(&argv);
    if code != 0 {
        eprintln!("stopped with exit code {code}");
        std::process::exit(code);
    }
}

fn main() {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/example-out/full_pipeline"));
    let p = |rel: &str| out.join(rel).to_string_lossy().into_owned();
    let corpus = p("corpus/corpus.tsv");

    sketchgan(&["make-synthetic-corpus", "--out", &p("corpus"), "--per-class", "32"]);
    sketchgan(&[
        "train-encoder",
        "--images",
        &corpus,
        "--sketches",
        &corpus,
        "--out",
        &p("encoder.ckpt"),
    ]);
    sketchgan(&[
        "generate-pairs",
        "--encoder",
        &p("encoder.ckpt"),
        "--corpus",
        &corpus,
        "--out",
        &p("pairs"),
    ]);
    sketchgan(&[
        "train-decoder",
        "--pairs",
        &p("pairs/pairs.tsv"),
        "--out",
        &p("decoder.ckpt"),
    ]);

    let pairs = read_manifest(&out.join("pairs/pairs.tsv")).expect("pairs manifest");
    let sketch = pairs.records[0].sketch_path.clone().expect("paired row has a sketch");
    let sketch = sketch.to_string_lossy();
    for label in ["0", "1"] {
        let target = p(&format!("label_{label}.png"));
        sketchgan(&[
            "translate",
            "--decoder",
            &p("decoder.ckpt"),
            "--sketch",
            &sketch,
            "--label",
            label,
            "--out",
            &target,
        ]);
    }
    sketchgan(&["analyze-sketches", "--real", &corpus, "--fake", &p("pairs/pairs.tsv")]);
}
