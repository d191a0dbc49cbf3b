//! Label-conditioned sketch→image translation trained with a least-squares
//! adversarial term plus an L1 reconstruction term.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::encoder::{Mapping, CHANNELS};
use crate::error::{Error, Result};
use crate::netspec::{presets, NetworkSpec, Role};
use crate::network::{build_network, BuildOptions, NetworkInstance};
use crate::param::AdamConfig;
use crate::tape::{concat_channels, Mode, Tape, Var};
use crate::tensor::Tensor;
use crate::train::{check_finite, write_log_line, BatchSampler, PlateauConfig, PlateauSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelEncoding {
    /// One plane holding `label / max(1, n - 1)`.
    Scalar,
    /// `n` planes, the label's plane all ones.
    OneHot,
}

impl LabelEncoding {
    pub fn planes(self, num_classes: usize) -> usize {
        match self {
            LabelEncoding::Scalar => 1,
            LabelEncoding::OneHot => num_classes,
        }
    }
}

/// What the discriminator sees besides the candidate image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscriminatorInput {
    /// Sketch, label planes and candidate image.
    SketchLabelImage,
    /// Label planes and candidate image only.
    LabelImage,
}

/// Targets of the least-squares objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LsganOrientation {
    /// Real scores pushed to 1, fake scores to 0.
    Conventional,
    /// Real scores pushed to 0, fake scores to 1, as printed in the source
    /// formula; the generator then pushes fakes toward 0.
    Literal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderTrainConfig {
    pub batch_size: usize,
    pub lambda_l1: f32,
    pub lr: f32,
    pub num_classes: usize,
    pub seed: u64,
    pub image_size: usize,
    pub max_steps: usize,
    pub plateau: PlateauConfig,
    pub generator_arch: String,
    pub discriminator_arch: String,
    pub label_encoding: LabelEncoding,
    pub discriminator_input: DiscriminatorInput,
    pub orientation: LsganOrientation,
    pub generator_lr_scale: f32,
    pub discriminator_lr_scale: f32,
    pub build: BuildOptions,
    pub adam: AdamConfig,
}

impl Default for DecoderTrainConfig {
    fn default() -> Self {
        DecoderTrainConfig {
            batch_size: 4,
            lambda_l1: 100.0,
            lr: 1e-6,
            num_classes: 256,
            seed: 0,
            image_size: presets::IMAGE_SIZE,
            max_steps: 20_000,
            plateau: PlateauConfig::default(),
            generator_arch: presets::DECODER_GENERATOR.to_string(),
            discriminator_arch: presets::DECODER_DISCRIMINATOR.to_string(),
            label_encoding: LabelEncoding::Scalar,
            discriminator_input: DiscriminatorInput::SketchLabelImage,
            orientation: LsganOrientation::Conventional,
            generator_lr_scale: 1.0,
            discriminator_lr_scale: 1.0,
            build: BuildOptions::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl DecoderTrainConfig {
    pub fn small() -> Self {
        DecoderTrainConfig {
            num_classes: 2,
            image_size: presets::SMALL_IMAGE_SIZE,
            max_steps: 300,
            lr: 2e-4,
            generator_arch: presets::SMALL_DECODER_GENERATOR.to_string(),
            discriminator_arch: presets::SMALL_DISCRIMINATOR.to_string(),
            ..Self::default()
        }
    }

    pub fn conditioning(&self) -> Conditioning {
        Conditioning {
            num_classes: self.num_classes,
            encoding: self.label_encoding,
            discriminator_input: self.discriminator_input,
        }
    }
}

/// Constant plane `label / max(1, num_classes - 1)` of shape `[1, h, w]`.
pub fn broadcast_label(label_id: i64, num_classes: usize, h: usize, w: usize) -> Result<Tensor> {
    let id = check_label(label_id, num_classes)?;
    let v = id as f32 / (num_classes.saturating_sub(1)).max(1) as f32;
    Ok(Tensor::full(vec![1, h, w], v))
}

pub fn check_label(label_id: i64, num_classes: usize) -> Result<usize> {
    if num_classes == 0 || label_id < 0 || label_id as u64 >= num_classes as u64 {
        return Err(Error::LabelOutOfRange {
            label: label_id,
            num_classes,
        });
    }
    Ok(label_id as usize)
}

/// How labels are encoded and what the discriminator is shown.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conditioning {
    pub num_classes: usize,
    pub encoding: LabelEncoding,
    pub discriminator_input: DiscriminatorInput,
}

impl Conditioning {
    pub fn label_planes(&self) -> usize {
        self.encoding.planes(self.num_classes)
    }

    pub fn generator_channels(&self) -> usize {
        CHANNELS + self.label_planes()
    }

    pub fn discriminator_channels(&self) -> usize {
        match self.discriminator_input {
            DiscriminatorInput::SketchLabelImage => 2 * CHANNELS + self.label_planes(),
            DiscriminatorInput::LabelImage => CHANNELS + self.label_planes(),
        }
    }

    /// `[L, h, w]` label planes for one item.
    pub fn label_tensor(&self, label_id: i64, h: usize, w: usize) -> Result<Tensor> {
        match self.encoding {
            LabelEncoding::Scalar => broadcast_label(label_id, self.num_classes, h, w),
            LabelEncoding::OneHot => {
                let id = check_label(label_id, self.num_classes)?;
                let plane = h * w;
                Ok(Tensor::from_fn(vec![self.num_classes, h, w], |i| {
                    if i / plane == id {
                        1.0
                    } else {
                        0.0
                    }
                }))
            }
        }
    }

    /// `[B, L, h, w]` label planes for a batch.
    pub fn label_batch(&self, labels: &[usize], h: usize, w: usize) -> Result<Tensor> {
        let items = labels
            .iter()
            .map(|&l| self.label_tensor(l as i64, h, w))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&items)
    }

    /// Generator input: sketch channels then label planes.
    pub fn generator_input(&self, sketches: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let (b, _, h, w) = sketches.dims4()?;
        if labels.len() != b {
            return Err(Error::Shape(format!("{} labels for a batch of {b}", labels.len())));
        }
        concat_channels(sketches, &self.label_batch(labels, h, w)?)
    }

    /// Conditioning part of the discriminator input, to which the candidate
    /// image is appended.
    pub fn discriminator_condition(&self, g_in: &Tensor) -> Result<Tensor> {
        match self.discriminator_input {
            DiscriminatorInput::SketchLabelImage => Ok(g_in.clone()),
            DiscriminatorInput::LabelImage => {
                let c = g_in.shape().get(1).copied().unwrap_or(0);
                g_in.slice_channels(CHANNELS..c)
            }
        }
    }
}

/// `(g_in, d_real_in)` for one item with the default scalar label plane and
/// full discriminator input: `g_in = [sketch, label]`,
/// `d_real_in = [sketch, label, image]`.
pub fn conditional_inputs(
    sketch: &Tensor,
    image: &Tensor,
    label_id: i64,
    num_classes: usize,
) -> Result<(Tensor, Tensor)> {
    let [_, h, w] = *sketch.shape() else {
        return Err(Error::Shape(format!(
            "sketch must be [C,H,W], got {}",
            sketch.shape_string()
        )));
    };
    match *image.shape() {
        [_, ih, iw] if (ih, iw) == (h, w) => {}
        _ => {
            return Err(Error::Shape(format!(
                "image {} is not aligned with sketch {}",
                image.shape_string(),
                sketch.shape_string()
            )))
        }
    }
    let label = broadcast_label(label_id, num_classes, h, w)?;
    let batch = |t: &Tensor| {
        let mut s = vec![1];
        s.extend_from_slice(t.shape());
        t.reshape(s)
    };
    let g_in = concat_channels(&batch(sketch)?, &batch(&label)?)?;
    let d_in = concat_channels(&g_in, &batch(image)?)?;
    Ok((g_in.batch_item(0)?, d_in.batch_item(0)?))
}

fn targets(tape: &mut Tape, scores: Var, value: f32) -> Var {
    let shape = tape.value(scores).shape().to_vec();
    tape.constant(Tensor::full(shape, value))
}

/// Discriminator least-squares loss from raw scores.
pub fn lsgan_d_loss_on(tape: &mut Tape, real: Var, fake: Var, orientation: LsganOrientation) -> Result<Var> {
    let (rt, ft) = match orientation {
        LsganOrientation::Conventional => (1.0, 0.0),
        LsganOrientation::Literal => (0.0, 1.0),
    };
    let rt = targets(tape, real, rt);
    let ft = targets(tape, fake, ft);
    let a = tape.squared(real, rt)?;
    let b = tape.squared(fake, ft)?;
    tape.add(a, b)
}

/// Generator adversarial least-squares term from raw fake scores.
pub fn lsgan_adv_on(tape: &mut Tape, fake: Var, orientation: LsganOrientation) -> Result<Var> {
    let t = match orientation {
        LsganOrientation::Conventional => 1.0,
        LsganOrientation::Literal => 0.0,
    };
    let t = targets(tape, fake, t);
    tape.squared(fake, t)
}

/// `mean (D(real_in) - 1)² + mean D(fake_in)²`.
pub fn lsgan_d_loss<D: Mapping + ?Sized>(d: &D, real_in: &Tensor, fake_in: &Tensor) -> Result<f64> {
    let mut tape = Tape::new(Mode::Eval);
    let r = tape.constant(real_in.clone());
    let f = tape.constant(fake_in.clone());
    let sr = d.apply(&mut tape, r, false)?;
    let sf = d.apply(&mut tape, f, false)?;
    let l = lsgan_d_loss_on(&mut tape, sr, sf, LsganOrientation::Conventional)?;
    Ok(tape.value(l).data()[0] as f64)
}

/// `(total, adv, l1)` with `adv = mean (D(fake_in) - 1)²`,
/// `l1 = mean |real_image - fake_image|` and `total = adv + lambda_l1 · l1`.
pub fn lsgan_g_loss<D: Mapping + ?Sized>(
    d: &D,
    fake_in: &Tensor,
    fake_image: &Tensor,
    real_image: &Tensor,
    lambda_l1: f32,
) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new(Mode::Eval);
    let f = tape.constant(fake_in.clone());
    let s = d.apply(&mut tape, f, false)?;
    let adv = lsgan_adv_on(&mut tape, s, LsganOrientation::Conventional)?;
    let fi = tape.constant(fake_image.clone());
    let ri = tape.constant(real_image.clone());
    let l1 = tape.l1(ri, fi)?;
    let weighted = tape.scale(l1, lambda_l1);
    let total = tape.add(adv, weighted)?;
    let v = |x: Var| tape.value(x).data()[0] as f64;
    Ok((v(total), v(adv), v(l1)))
}

/// Conditional generator and discriminator.
#[derive(Clone, Debug)]
pub struct DecoderPair {
    pub g: NetworkInstance,
    pub d: NetworkInstance,
}

impl DecoderPair {
    pub fn build(cfg: &DecoderTrainConfig) -> Result<Self> {
        let cond = cfg.conditioning();
        let g = NetworkSpec::parse(
            &cfg.generator_arch,
            Role::Generator,
            cond.generator_channels(),
            cfg.image_size,
        )?;
        let d = NetworkSpec::parse(
            &cfg.discriminator_arch,
            Role::Discriminator,
            cond.discriminator_channels(),
            cfg.image_size,
        )?;
        let seed = cfg.seed.wrapping_mul(2).wrapping_add(0x5eed);
        Ok(DecoderPair {
            g: build_network(&g, "G_dec", cfg.build, seed)?,
            d: build_network(&d, "D_dec", cfg.build, seed + 1)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderStepReport {
    pub step: usize,
    pub loss_adv: f32,
    /// Unweighted `mean|real - fake|`.
    pub loss_l1: f32,
    /// `loss_adv + lambda_l1 · loss_l1`.
    pub loss_total_g: f32,
    pub loss_d: f32,
    pub current_lr: f32,
}

/// One alternating update: D on detached fakes, then G against the updated
/// D with `adv + lambda_l1 · l1`.
pub fn decoder_train_step(
    pair: &mut DecoderPair,
    sketches: &Tensor,
    images: &Tensor,
    labels: &[usize],
    cfg: &DecoderTrainConfig,
    step: usize,
    lr: f32,
) -> Result<DecoderStepReport> {
    sketches.expect_same_shape(images)?;
    let cond = cfg.conditioning();
    let g_in = cond.generator_input(sketches, labels)?;
    let d_cond = cond.discriminator_condition(&g_in)?;
    let d_real = concat_channels(&d_cond, images)?;

    let mut tape = Tape::with_seed(Mode::Train, cfg.seed, step as u64);
    let gv = tape.constant(g_in);
    let fake = pair.g.forward(&mut tape, gv, true)?;

    let loss_d = {
        let mut dt = Tape::with_seed(Mode::Train, cfg.seed, step as u64);
        let r = dt.constant(d_real);
        let f = dt.constant(concat_channels(&d_cond, tape.value(fake))?);
        let sr = pair.d.forward(&mut dt, r, true)?;
        let sf = pair.d.forward(&mut dt, f, true)?;
        let l = lsgan_d_loss_on(&mut dt, sr, sf, cfg.orientation)?;
        let v = check_finite("loss_d", dt.value(l).data()[0], step)?;
        let grads = dt.backward(l)?;
        pair.d.params_mut().accumulate(&grads)?;
        pair.d.params_mut().adam_step(lr * cfg.discriminator_lr_scale, cfg.adam);
        v
    };

    let c = tape.constant(d_cond);
    let d_fake = tape.concat_channels(c, fake)?;
    let s = pair.d.forward(&mut tape, d_fake, false)?;
    let adv = lsgan_adv_on(&mut tape, s, cfg.orientation)?;
    let real = tape.constant(images.clone());
    let l1 = tape.l1(real, fake)?;
    let weighted = tape.scale(l1, cfg.lambda_l1);
    let total = tape.add(adv, weighted)?;
    let report = DecoderStepReport {
        step,
        loss_adv: check_finite("loss_adv", tape.value(adv).data()[0], step)?,
        loss_l1: check_finite("loss_l1", tape.value(l1).data()[0], step)?,
        loss_total_g: check_finite("loss_total_g", tape.value(total).data()[0], step)?,
        loss_d,
        current_lr: lr,
    };
    let grads = tape.backward(total)?;
    pair.g.params_mut().accumulate(&grads)?;
    pair.g.params_mut().adam_step(lr * cfg.generator_lr_scale, cfg.adam);
    Ok(report)
}

/// One training item: sketch and image as `[3,S,S]` in `[-1,1]`, plus label.
#[derive(Clone, Debug)]
pub struct PairedItem {
    pub sketch: Tensor,
    pub image: Tensor,
    pub label: usize,
}

#[derive(Debug)]
pub struct DecoderTrainer {
    pub pair: DecoderPair,
    pub config: DecoderTrainConfig,
    items: Vec<PairedItem>,
    sampler: BatchSampler,
    schedule: PlateauSchedule,
    step: usize,
    history: Vec<DecoderStepReport>,
}

impl DecoderTrainer {
    pub fn new(config: DecoderTrainConfig, items: Vec<PairedItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Data("no paired items to train on".into()));
        }
        let s = config.image_size;
        for it in &items {
            check_label(it.label as i64, config.num_classes)?;
            for t in [&it.sketch, &it.image] {
                if t.shape() != [CHANNELS, s, s] {
                    return Err(Error::Shape(format!(
                        "paired tensor {} does not match [{CHANNELS},{s},{s}]",
                        t.shape_string()
                    )));
                }
            }
        }
        let pair = DecoderPair::build(&config)?;
        let sampler = BatchSampler::new(items.len(), config.batch_size, config.seed ^ 0x3333)?;
        let schedule = PlateauSchedule::new(config.lr, config.plateau);
        Ok(DecoderTrainer {
            pair,
            config,
            items,
            sampler,
            schedule,
            step: 0,
            history: Vec::new(),
        })
    }

    pub fn history(&self) -> &[DecoderStepReport] {
        &self.history
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f32 {
        self.schedule.lr()
    }

    pub fn step(&mut self) -> Result<DecoderStepReport> {
        let idx = self.sampler.next_batch();
        let sketches = Tensor::stack(&idx.iter().map(|&i| self.items[i].sketch.clone()).collect::<Vec<_>>())?;
        let images = Tensor::stack(&idx.iter().map(|&i| self.items[i].image.clone()).collect::<Vec<_>>())?;
        let labels: Vec<usize> = idx.iter().map(|&i| self.items[i].label).collect();
        self.step += 1;
        let r = decoder_train_step(
            &mut self.pair,
            &sketches,
            &images,
            &labels,
            &self.config,
            self.step,
            self.schedule.lr(),
        )?;
        self.schedule.observe(r.loss_total_g as f64);
        self.history.push(r.clone());
        Ok(r)
    }

    pub fn run(&mut self, mut log: Option<&mut dyn Write>) -> Result<()> {
        while self.step < self.config.max_steps {
            let r = self.step()?;
            if let Some(out) = log.as_deref_mut() {
                write_log_line(out, &r)?;
            }
            if r.step % 50 == 0 {
                log::info!(
                    "decoder step {}: l1 {:.4} adv {:.4} d {:.4} lr {:e}",
                    r.step,
                    r.loss_l1,
                    r.loss_adv,
                    r.loss_d,
                    r.current_lr
                );
            }
        }
        Ok(())
    }
}

/// Label encoding implied by a generator's input channel count.
pub fn encoding_for(g: &NetworkInstance, num_classes: usize) -> Result<LabelEncoding> {
    let c = g.spec().input_channels;
    if c == CHANNELS + 1 {
        Ok(LabelEncoding::Scalar)
    } else if c == CHANNELS + num_classes {
        Ok(LabelEncoding::OneHot)
    } else {
        Err(Error::Shape(format!(
            "generator takes {c} channels, which fits no label encoding for {num_classes} classes"
        )))
    }
}

/// Sketch `[3,H,W]` plus label to image `[3,H,W]`, dropout off.
pub fn translate(g: &NetworkInstance, sketch: &Tensor, label_id: i64, num_classes: usize) -> Result<Tensor> {
    check_label(label_id, num_classes)?;
    let cond = Conditioning {
        num_classes,
        encoding: encoding_for(g, num_classes)?,
        discriminator_input: DiscriminatorInput::SketchLabelImage,
    };
    let [c, h, w] = *sketch.shape() else {
        return Err(Error::Shape(format!(
            "sketch must be [C,H,W], got {}",
            sketch.shape_string()
        )));
    };
    let g_in = cond.generator_input(&sketch.reshape(vec![1, c, h, w])?, &[label_id as usize])?;
    g.infer(&g_in)?.batch_item(0)
}
