use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sketchgan::cli;
use sketchgan::dataio::checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Metadata};
use sketchgan::dataio::imageio::{load_gray_u8, load_image, save_gray_u8, save_png, ColorMode};
use sketchgan::dataio::manifest::{read_manifest, write_manifest, Manifest, PairRecord, Split};
use sketchgan::dataio::synthetic::{make_synthetic_corpus, SyntheticConfig};
use sketchgan::decoder::{DecoderPair, DecoderTrainConfig};
use sketchgan::encoder::{EncoderQuartet, EncoderTrainConfig};
use sketchgan::pairgen::{binary_mass_fraction, generate_pairs, pixel_histogram, sketch_report};
use sketchgan::Error;

/// Every file under `dir`, keyed by its relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn corpus(dir: &Path, per_class: usize, seed: u64) -> Manifest {
    let cfg = SyntheticConfig {
        per_class,
        num_classes: 2,
        size: 32,
        seed,
    };
    make_synthetic_corpus(dir, &cfg).unwrap()
}

fn untrained_encoder(path: &Path) {
    let q = EncoderQuartet::build(&EncoderTrainConfig::small()).unwrap();
    save_checkpoint(path, &q.networks(), &Metadata::new()).unwrap();
}

#[test]
fn load_image_mapping_examples() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("px.png");
    save_gray_u8(&GrayImage::from_raw(3, 1, vec![0, 255, 128]).unwrap(), &p).unwrap();
    let t = load_image(&p, 3, ColorMode::Gray).unwrap();
    assert_eq!(t.shape(), &[3, 3, 3]);
    // gray replicates into all three channels
    for c in 0..3 {
        let row = &t.data()[c * 9..c * 9 + 3];
        assert_eq!(row[0], -1.0);
        assert_eq!(row[1], 1.0);
        assert!((row[2] - 0.00392).abs() < 1e-5);
    }
    let white = dir.path().join("white.png");
    save_gray_u8(&GrayImage::from_pixel(1, 1, Luma([255])), &white).unwrap();
    let up = load_image(&white, 4, ColorMode::Gray).unwrap();
    assert_eq!(up.shape(), &[3, 4, 4]);
    assert!(up.data().iter().all(|&v| v == 1.0));
    let missing = load_image(&dir.path().join("nope.png"), 4, ColorMode::Gray).unwrap_err();
    assert!(missing.to_string().contains("nope.png"));
}

#[test]
fn save_then_load_is_lossless_at_native_size() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(9);
    for i in 0..8 {
        let gray = GrayImage::from_fn(16, 16, |_, _| Luma([r.random()]));
        let p = dir.path().join(format!("g{i}.png"));
        save_gray_u8(&gray, &p).unwrap();
        let t = load_image(&p, 16, ColorMode::Gray).unwrap();
        let back = sketchgan::dataio::imageio::tensor_to_gray(&t).unwrap();
        assert_eq!(back, gray);

        let rgb = RgbImage::from_fn(16, 16, |_, _| image::Rgb([r.random(), r.random(), r.random()]));
        let p = dir.path().join(format!("c{i}.png"));
        save_png(&image::DynamicImage::ImageRgb8(rgb.clone()), &p).unwrap();
        let t = load_image(&p, 16, ColorMode::Rgb).unwrap();
        assert_eq!(sketchgan::dataio::imageio::tensor_to_rgb(&t).unwrap(), rgb);
    }
}

#[test]
fn quartet_checkpoint_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enc.ckpt");
    let cfg = EncoderTrainConfig::small();
    let q = EncoderQuartet::build(&cfg).unwrap();
    let mut meta = Metadata::new();
    meta.insert("step".into(), "17".into());
    meta.insert("lr".into(), "0.0005".into());
    save_checkpoint(&path, &q.networks(), &meta).unwrap();

    let ck = load_checkpoint(&path).unwrap();
    for net in q.networks() {
        let loaded = ck.network(net.name()).unwrap();
        assert_eq!(loaded.params().content_hash(), net.params().content_hash());
        assert_eq!(loaded.count_params(), net.count_params());
        assert_eq!(loaded.spec().arch_string(), net.spec().arch_string());
    }
    assert_eq!(ck.meta("step"), Some("17"));
    assert_eq!(ck.meta_parse::<f32>("lr").unwrap(), 0.0005);

    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(load_checkpoint(&cut), Err(Error::CheckpointTruncated(_))));

    let err = load_checkpoint_expecting(&path, &[("G", "D8-U3")]).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::ArchitectureMismatch { .. }));
    assert!(msg.contains("D8-U3") && msg.contains(&cfg.generator_arch), "{msg}");
    assert!(load_checkpoint_expecting(&path, &[("G", &cfg.generator_arch)]).is_ok());
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub/m.tsv");
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let classes = vec![
        "red circle".to_string(),
        "blue-square".to_string(),
        "ünïcode".to_string(),
    ];
    let records: Vec<PairRecord> = (0..30)
        .map(|i| {
            let label_id = r.random_range(0..3usize);
            PairRecord {
                image_path: dir.path().join(format!("img/{i}.png")),
                sketch_path: if i % 4 == 0 {
                    None
                } else {
                    Some(dir.path().join(format!("sk/{i}.png")))
                },
                label_id,
                label_name: classes[label_id].clone(),
                split: [Split::Train, Split::Val, Split::Test][i % 3],
            }
        })
        .collect();
    let m = Manifest { classes, records };
    write_manifest(&path, &m).unwrap();
    assert_eq!(read_manifest(&path).unwrap(), m);
}

#[test]
fn synthetic_corpus_counts_outlines_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = corpus(a.path(), 10, 5);
    corpus(b.path(), 10, 5);
    assert_eq!(m.records.len(), 20);
    assert_eq!(m.per_class_counts(), vec![10, 10]);
    assert_eq!(read_manifest(&a.path().join("corpus.tsv")).unwrap().records.len(), 20);
    assert_eq!(tree(a.path()), tree(b.path()));

    let sketches: Vec<PathBuf> = m.records.iter().map(|r| r.sketch_path.clone().unwrap()).collect();
    let hist = pixel_histogram(&sketches).unwrap();
    assert_eq!(binary_mass_fraction(&hist).unwrap(), 1.0);
    assert!(hist.counts[0] > 0 && hist.counts[255] > 0);

    let c = tempfile::tempdir().unwrap();
    corpus(c.path(), 10, 6);
    assert_ne!(tree(a.path()), tree(c.path()));
}

#[test]
fn generate_pairs_conserves_rows_and_classes() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(&dir.path().join("corpus"), 6, 1);
    let ckpt = dir.path().join("enc.ckpt");
    untrained_encoder(&ckpt);

    let out = generate_pairs(
        &ckpt,
        &dir.path().join("corpus/corpus.tsv"),
        &dir.path().join("a"),
        None,
    )
    .unwrap();
    assert_eq!(out.manifest.records.len(), 12);
    assert!(out.skipped.is_empty());
    assert_eq!(out.manifest.per_class_counts(), m.per_class_counts());
    let reread = read_manifest(&out.manifest_path).unwrap();
    assert_eq!(reread, out.manifest);
    for (pair, src) in reread.records.iter().zip(&m.records) {
        assert_eq!(pair.image_path, src.image_path);
        assert_eq!(
            (pair.label_id, &pair.label_name, pair.split),
            (src.label_id, &src.label_name, src.split)
        );
        let sketch = load_gray_u8(pair.sketch_path.as_ref().unwrap()).unwrap();
        assert_eq!(sketch.dimensions(), (32, 32));
        let stem = src.image_path.file_stem().unwrap().to_str().unwrap();
        assert!(pair
            .sketch_path
            .as_ref()
            .unwrap()
            .to_str()
            .unwrap()
            .ends_with(&format!("_{stem}.png")));
    }

    // rerun: byte-identical sketches and manifest
    generate_pairs(
        &ckpt,
        &dir.path().join("corpus/corpus.tsv"),
        &dir.path().join("b"),
        None,
    )
    .unwrap();
    assert_eq!(tree(&dir.path().join("a")), tree(&dir.path().join("b")));

    // binarized sketches have only two values
    let bin = generate_pairs(
        &ckpt,
        &dir.path().join("corpus/corpus.tsv"),
        &dir.path().join("c"),
        Some(128),
    )
    .unwrap();
    let paths: Vec<PathBuf> = bin
        .manifest
        .records
        .iter()
        .map(|r| r.sketch_path.clone().unwrap())
        .collect();
    assert_eq!(binary_mass_fraction(&pixel_histogram(&paths).unwrap()).unwrap(), 1.0);
}

#[test]
fn generate_pairs_skips_undecodable_images() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(&dir.path().join("corpus"), 6, 2);
    let ckpt = dir.path().join("enc.ckpt");
    untrained_encoder(&ckpt);
    std::fs::write(&m.records[3].image_path, b"not a png").unwrap();
    let out = generate_pairs(
        &ckpt,
        &dir.path().join("corpus/corpus.tsv"),
        &dir.path().join("pairs"),
        None,
    )
    .unwrap();
    assert_eq!(out.manifest.records.len(), 11);
    assert_eq!(out.skipped.len(), 1);
    assert_eq!(out.skipped[0].0, m.records[3].image_path);

    for r in &m.records {
        std::fs::write(&r.image_path, b"garbage").unwrap();
    }
    let err = generate_pairs(
        &ckpt,
        &dir.path().join("corpus/corpus.tsv"),
        &dir.path().join("none"),
        None,
    );
    assert!(matches!(err, Err(Error::Data(_))));
}

/// Writes `n` 10×10 images whose binary mass is exactly `fraction` of pixels.
fn constructed(dir: &Path, n: usize, binary_pixels: usize) -> Vec<PathBuf> {
    (0..n)
        .map(|i| {
            let img = GrayImage::from_fn(10, 10, |x, y| {
                let k = (y * 10 + x) as usize;
                Luma([if k < binary_pixels {
                    if k.is_multiple_of(2) {
                        0
                    } else {
                        255
                    }
                } else {
                    77
                }])
            });
            let p = dir.join(format!("{i}.png"));
            save_gray_u8(&img, &p).unwrap();
            p
        })
        .collect()
}

#[test]
fn sketch_report_examples() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("real")).unwrap();
    std::fs::create_dir_all(dir.path().join("fake")).unwrap();
    let real = constructed(&dir.path().join("real"), 3, 90);
    let fake = constructed(&dir.path().join("fake"), 2, 30);
    let r = sketch_report(&real, &fake, &[128]).unwrap();
    assert_eq!(r.real_binary_fraction, 0.9);
    assert_eq!(r.fake_binary_fraction, 0.3);
    assert!((r.difference - 0.6).abs() < 1e-15);
    assert_eq!(r.real.total, 300);
    assert_eq!(r.fake.total, 200);
    assert_eq!(sketch_report(&real, &real, &[]).unwrap().difference, 0.0);
}

#[test]
fn cli_inspect_and_label_validation() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.txt");
    let code = cli::run([
        "sketchgan",
        "inspect-spec",
        "D64-D128-D256-D512",
        "--input",
        "4x256x256",
        "--out",
        table.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&table).unwrap();
    for tok in ["D64", "D128", "D256", "D512"] {
        assert!(text.contains(tok), "{text}");
    }
    assert!(text.to_lowercase().contains("score"), "{text}");

    let cfg = DecoderTrainConfig {
        num_classes: 256,
        ..DecoderTrainConfig::small()
    };
    let pair = DecoderPair::build(&cfg).unwrap();
    let mut meta = Metadata::new();
    meta.insert("num_classes".into(), "256".into());
    let ckpt = dir.path().join("dec.ckpt");
    save_checkpoint(&ckpt, &[&pair.g, &pair.d], &meta).unwrap();
    let sketch = dir.path().join("s.png");
    save_gray_u8(&GrayImage::from_pixel(32, 32, Luma([255])), &sketch).unwrap();
    let out = dir.path().join("o.png");
    let args = |label: &str| {
        vec![
            "sketchgan".to_string(),
            "translate".into(),
            "--decoder".into(),
            ckpt.display().to_string(),
            "--sketch".into(),
            sketch.display().to_string(),
            "--label".into(),
            label.into(),
            "--out".into(),
            out.display().to_string(),
        ]
    };
    assert_eq!(cli::run(args("300")), 1);
    assert!(!out.exists());
    assert_eq!(cli::run(args("-1")), 1);
    assert_eq!(cli::run(args("255")), 0);
    assert!(out.exists());
    assert_eq!(
        cli::run([
            "sketchgan",
            "analyze-sketches",
            "--real",
            "/nonexistent",
            "--fake",
            "/nonexistent"
        ]),
        2
    );
}
