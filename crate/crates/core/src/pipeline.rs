//! File-level drivers for each pipeline stage, shared by the command-line
//! front end and the examples.

use std::path::{Path, PathBuf};

use crate::dataio::atomic_write;
use crate::dataio::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Metadata};
use crate::dataio::config::RunConfig;
use crate::dataio::imageio::{list_images, load_image, save_image, ColorMode};
use crate::dataio::manifest::{read_manifest, Split};
use crate::decoder::{check_label, translate, DecoderStepReport, DecoderTrainer, PairedItem};
use crate::encoder::{EncoderStepReport, EncoderTrainer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::write_log_line;

pub const DECODER_NETWORK: &str = "G_dec";

/// Which column of a manifest to read when a manifest is given as a source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Column {
    Image,
    Sketch,
}

/// Image files from a directory (recursive, sorted) or from one column of a
/// manifest (`.tsv`).
pub fn collect_paths(source: &Path, column: Column) -> Result<Vec<PathBuf>> {
    let paths = if source.is_dir() {
        list_images(source)?
    } else {
        let m = read_manifest(source)?;
        match column {
            Column::Image => m.records.into_iter().map(|r| r.image_path).collect(),
            Column::Sketch => m.records.into_iter().filter_map(|r| r.sketch_path).collect(),
        }
    };
    if paths.is_empty() {
        return Err(Error::Data(format!("no images found in {}", source.display())));
    }
    Ok(paths)
}

pub fn load_all(paths: &[PathBuf], size: usize, mode: ColorMode) -> Result<Vec<Tensor>> {
    paths.iter().map(|p| load_image(p, size, mode)).collect()
}

/// Path of the step log written beside a checkpoint.
pub fn log_path_for(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log.jsonl")
}

fn metadata(cfg: &RunConfig, step: usize, lr: f32, stage: &str) -> Metadata {
    let mut m = Metadata::new();
    m.insert("stage".into(), stage.into());
    m.insert("step".into(), step.to_string());
    m.insert("lr".into(), lr.to_string());
    m.insert("seed".into(), cfg.get("seed").to_string());
    for (k, v) in cfg.snapshot() {
        m.insert(format!("config.{k}"), v);
    }
    m
}

fn render_log<T: serde::Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for r in records {
        write_log_line(&mut buf, r)?;
    }
    Ok(buf)
}

#[derive(Debug)]
pub struct EncoderRun {
    pub trainer: EncoderTrainer,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

impl EncoderRun {
    pub fn history(&self) -> &[EncoderStepReport] {
        self.trainer.history()
    }
}

/// Trains the encoder quartet on unpaired images and sketches, then writes
/// the checkpoint (all four networks) and a JSON-lines step log.
pub fn train_encoder(cfg: &RunConfig, images: &Path, sketches: &Path, checkpoint: &Path) -> Result<EncoderRun> {
    let ecfg = cfg.encoder();
    let xs = load_all(&collect_paths(images, Column::Image)?, ecfg.image_size, ColorMode::Gray)?;
    let ys = load_all(
        &collect_paths(sketches, Column::Sketch)?,
        ecfg.image_size,
        ColorMode::Gray,
    )?;
    log::info!(
        "encoder: {} images, {} sketches, {} steps",
        xs.len(),
        ys.len(),
        ecfg.max_steps
    );
    let mut trainer = EncoderTrainer::new(ecfg, xs, ys)?;
    let log = log_path_for(checkpoint);
    let result = trainer.run(None);
    atomic_write(&log, &render_log(trainer.history())?)?;
    result?;
    let q = &trainer.quartet;
    save_checkpoint(
        checkpoint,
        &q.networks(),
        &metadata(cfg, trainer.steps_done(), trainer.current_lr(), "encoder"),
    )?;
    Ok(EncoderRun {
        trainer,
        checkpoint: checkpoint.to_path_buf(),
        log,
    })
}

#[derive(Debug)]
pub struct DecoderRun {
    pub trainer: DecoderTrainer,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

impl DecoderRun {
    pub fn history(&self) -> &[DecoderStepReport] {
        self.trainer.history()
    }
}

/// Loads the train split of a paired manifest (every row if the split is
/// empty) as decoder training items.
pub fn load_paired(pairs: &Path, size: usize) -> Result<(Vec<PairedItem>, usize)> {
    let m = read_manifest(pairs)?;
    let mut rows: Vec<_> = m.in_split(Split::Train).collect();
    if rows.is_empty() {
        rows = m.records.iter().collect();
    }
    let items = rows
        .into_iter()
        .map(|r| {
            let sketch = r.sketch_path.as_ref().ok_or_else(|| {
                Error::Data(format!(
                    "{} has no sketch in {}",
                    r.image_path.display(),
                    pairs.display()
                ))
            })?;
            Ok(PairedItem {
                sketch: load_image(sketch, size, ColorMode::Gray)?,
                image: load_image(&r.image_path, size, ColorMode::Rgb)?,
                label: r.label_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((items, m.num_classes()))
}

pub fn train_decoder(cfg: &RunConfig, pairs: &Path, checkpoint: &Path) -> Result<DecoderRun> {
    let dcfg = cfg.decoder();
    let (items, classes) = load_paired(pairs, dcfg.image_size)?;
    if classes > dcfg.num_classes {
        return Err(Error::Config(format!(
            "manifest has {classes} classes but num_classes = {}",
            dcfg.num_classes
        )));
    }
    log::info!("decoder: {} pairs, {} steps", items.len(), dcfg.max_steps);
    let mut trainer = DecoderTrainer::new(dcfg, items)?;
    let log = log_path_for(checkpoint);
    let result = trainer.run(None);
    atomic_write(&log, &render_log(trainer.history())?)?;
    result?;
    let mut meta = metadata(cfg, trainer.steps_done(), trainer.current_lr(), "decoder");
    meta.insert("num_classes".into(), trainer.config.num_classes.to_string());
    let p = &trainer.pair;
    save_checkpoint(checkpoint, &[&p.g, &p.d], &meta)?;
    Ok(DecoderRun {
        trainer,
        checkpoint: checkpoint.to_path_buf(),
        log,
    })
}

/// Decoder generator and its class count from a decoder checkpoint.
pub fn load_decoder(path: &Path) -> Result<(crate::network::NetworkInstance, usize)> {
    let mut ckpt: Checkpoint = load_checkpoint(path)?;
    let classes: usize = ckpt.meta_parse("num_classes")?;
    Ok((ckpt.take_network(DECODER_NETWORK)?, classes))
}

/// Translates one sketch file with a label and writes an RGB PNG.
pub fn translate_file(decoder: &Path, sketch: &Path, label: i64, out: &Path) -> Result<Tensor> {
    let (g, classes) = load_decoder(decoder)?;
    check_label(label, classes)?;
    let s = load_image(sketch, g.spec().input_size, ColorMode::Gray)?;
    let image = translate(&g, &s, label, classes)?;
    save_image(&image, out, ColorMode::Rgb)?;
    Ok(image)
}
