//! Unpaired image↔sketch training with a cycle-consistent adversarial
//! objective. After training only the image→sketch generator `G` is kept.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netspec::{presets, NetworkSpec, Role};
use crate::network::{build_network, BuildOptions, NetworkInstance};
use crate::param::AdamConfig;
use crate::tape::{LogTarget, Mode, Tape, Var};
use crate::tensor::Tensor;
use crate::train::{check_finite, write_log_line, BatchSampler, PlateauConfig, PlateauSchedule};

/// Anything that maps a batch to a batch (or to scores) on a tape.
pub trait Mapping {
    fn apply(&self, tape: &mut Tape, x: Var, trainable: bool) -> Result<Var>;
}

impl Mapping for NetworkInstance {
    fn apply(&self, tape: &mut Tape, x: Var, trainable: bool) -> Result<Var> {
        self.forward(tape, x, trainable)
    }
}

/// Generator-side adversarial loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorLoss {
    /// Minimize `-log σ(D(fake))`.
    NonSaturating,
    /// Minimize `log(1 - σ(D(fake)))`, exactly as the min-max objective reads.
    Literal,
}

/// Image and sketch tensors carry this many channels (gray replicated).
pub const CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderTrainConfig {
    pub batch_size: usize,
    pub lambda_cyc: f32,
    pub lr: f32,
    pub plateau: PlateauConfig,
    pub max_steps: usize,
    pub seed: u64,
    pub image_size: usize,
    pub generator_arch: String,
    pub discriminator_arch: String,
    pub generator_loss: GeneratorLoss,
    /// Multiplies `lr` for the G/F update; 0 freezes the generators.
    pub generator_lr_scale: f32,
    /// Multiplies `lr` for the D_X/D_Y update; 0 freezes the discriminators.
    pub discriminator_lr_scale: f32,
    pub build: BuildOptions,
    pub adam: AdamConfig,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        EncoderTrainConfig {
            batch_size: 4,
            lambda_cyc: 10.0,
            lr: 1e-4,
            plateau: PlateauConfig::default(),
            max_steps: 20_000,
            seed: 0,
            image_size: presets::IMAGE_SIZE,
            generator_arch: presets::ENCODER_GENERATOR.to_string(),
            discriminator_arch: presets::ENCODER_DISCRIMINATOR.to_string(),
            generator_loss: GeneratorLoss::NonSaturating,
            generator_lr_scale: 1.0,
            discriminator_lr_scale: 1.0,
            build: BuildOptions::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl EncoderTrainConfig {
    /// Desk-scale profile: 32x32 inputs and the small architectures.
    pub fn small() -> Self {
        EncoderTrainConfig {
            image_size: presets::SMALL_IMAGE_SIZE,
            generator_arch: presets::SMALL_GENERATOR.to_string(),
            discriminator_arch: presets::SMALL_DISCRIMINATOR.to_string(),
            max_steps: 500,
            lr: 5e-4,
            ..Self::default()
        }
    }
}

/// `G` (image→sketch), `F` (sketch→image) and their discriminators.
#[derive(Clone, Debug)]
pub struct EncoderQuartet {
    pub g: NetworkInstance,
    pub f: NetworkInstance,
    pub d_x: NetworkInstance,
    pub d_y: NetworkInstance,
}

impl EncoderQuartet {
    pub fn build(cfg: &EncoderTrainConfig) -> Result<Self> {
        let gen = NetworkSpec::parse(&cfg.generator_arch, Role::Generator, CHANNELS, cfg.image_size)?;
        let disc = NetworkSpec::parse(&cfg.discriminator_arch, Role::Discriminator, CHANNELS, cfg.image_size)?;
        let seed = cfg.seed.wrapping_mul(4);
        Ok(EncoderQuartet {
            g: build_network(&gen, "G", cfg.build, seed)?,
            f: build_network(&gen, "F", cfg.build, seed + 1)?,
            d_x: build_network(&disc, "D_X", cfg.build, seed + 2)?,
            d_y: build_network(&disc, "D_Y", cfg.build, seed + 3)?,
        })
    }

    pub fn networks(&self) -> [&NetworkInstance; 4] {
        [&self.g, &self.f, &self.d_x, &self.d_y]
    }
}

/// Summands of one encoder update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderStepReport {
    pub step: usize,
    pub loss_gan_g: f32,
    pub loss_gan_f: f32,
    /// Unweighted `mean|F(G(x)) - x| + mean|G(F(y)) - y|`.
    pub loss_cyc: f32,
    /// `loss_gan_g + loss_gan_f + lambda_cyc · loss_cyc`.
    pub loss_total_g: f32,
    pub loss_d_x: f32,
    pub loss_d_y: f32,
    pub current_lr: f32,
}

/// Tape nodes of the two translation cycles.
#[derive(Clone, Copy, Debug)]
pub struct Cycles {
    pub fake_y: Var,
    pub rec_x: Var,
    pub fake_x: Var,
    pub rec_y: Var,
    /// `mean|rec_x - x| + mean|rec_y - y|`
    pub loss: Var,
}

pub fn cycles_on<M: Mapping + ?Sized, N: Mapping + ?Sized>(
    tape: &mut Tape,
    g: &M,
    f: &N,
    x: Var,
    y: Var,
    trainable: bool,
) -> Result<Cycles> {
    let fake_y = g.apply(tape, x, trainable)?;
    let rec_x = f.apply(tape, fake_y, trainable)?;
    let fake_x = f.apply(tape, y, trainable)?;
    let rec_y = g.apply(tape, fake_x, trainable)?;
    let lx = tape.l1(rec_x, x)?;
    let ly = tape.l1(rec_y, y)?;
    let loss = tape.add(lx, ly)?;
    Ok(Cycles {
        fake_y,
        rec_x,
        fake_x,
        rec_y,
        loss,
    })
}

/// `mean|F(G(x)) - x| + mean|G(F(y)) - y|`, evaluated with dropout off.
pub fn cycle_loss<M: Mapping + ?Sized, N: Mapping + ?Sized>(g: &M, f: &N, x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.numel() == 0 || y.numel() == 0 {
        return Err(Error::Shape("cycle_loss needs non-empty batches".into()));
    }
    let mut tape = Tape::new(Mode::Eval);
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let c = cycles_on(&mut tape, g, f, xv, yv, false)?;
    Ok(tape.value(c.loss).data()[0] as f64)
}

/// Discriminator loss from raw scores:
/// `-mean log σ(real) - mean log(1 - σ(fake))`.
pub fn d_loss_on(tape: &mut Tape, real_scores: Var, fake_scores: Var) -> Result<Var> {
    let a = tape.log_loss(real_scores, LogTarget::Real);
    let b = tape.log_loss(fake_scores, LogTarget::Fake);
    tape.add(a, b)
}

pub fn g_loss_on(tape: &mut Tape, fake_scores: Var, kind: GeneratorLoss) -> Var {
    match kind {
        GeneratorLoss::NonSaturating => tape.log_loss(fake_scores, LogTarget::Real),
        GeneratorLoss::Literal => {
            // log(1 - σ(s)) = -softplus(s)
            let sp = tape.log_loss(fake_scores, LogTarget::Fake);
            tape.scale(sp, -1.0)
        }
    }
}

/// `(d_loss, g_loss)` for a discriminator on fixed real/fake batches, with
/// the non-saturating generator form.
pub fn adversarial_losses<D: Mapping + ?Sized>(d: &D, real: &Tensor, fake: &Tensor) -> Result<(f64, f64)> {
    let mut tape = Tape::new(Mode::Eval);
    let r = tape.constant(real.clone());
    let f = tape.constant(fake.clone());
    let sr = d.apply(&mut tape, r, false)?;
    let sf = d.apply(&mut tape, f, false)?;
    let dl = d_loss_on(&mut tape, sr, sf)?;
    let gl = g_loss_on(&mut tape, sf, GeneratorLoss::NonSaturating);
    Ok((tape.value(dl).data()[0] as f64, tape.value(gl).data()[0] as f64))
}

/// Generator-phase objective recorded on `tape`.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorTerms {
    pub gan_g: Var,
    pub gan_f: Var,
    pub cyc: Var,
    pub total: Var,
}

/// Records `L_GAN(G, D_Y) + L_GAN(F, D_X) + lambda · L_cyc` with the
/// discriminators frozen.
pub fn generator_terms(
    tape: &mut Tape,
    q: &EncoderQuartet,
    x: Var,
    y: Var,
    lambda_cyc: f32,
    kind: GeneratorLoss,
) -> Result<(GeneratorTerms, Cycles)> {
    let cycles = cycles_on(tape, &q.g, &q.f, x, y, true)?;
    let sy = q.d_y.forward(tape, cycles.fake_y, false)?;
    let sx = q.d_x.forward(tape, cycles.fake_x, false)?;
    let gan_g = g_loss_on(tape, sy, kind);
    let gan_f = g_loss_on(tape, sx, kind);
    let weighted = tape.scale(cycles.loss, lambda_cyc);
    let adv = tape.add(gan_g, gan_f)?;
    let total = tape.add(adv, weighted)?;
    Ok((
        GeneratorTerms {
            gan_g,
            gan_f,
            cyc: cycles.loss,
            total,
        },
        cycles,
    ))
}

/// One alternating update: discriminators first, on fakes from the current
/// generators, then G and F against the updated discriminators.
pub fn encoder_train_step(
    q: &mut EncoderQuartet,
    x_batch: &Tensor,
    y_batch: &Tensor,
    cfg: &EncoderTrainConfig,
    step: usize,
    lr: f32,
) -> Result<EncoderStepReport> {
    let mut tape = Tape::with_seed(Mode::Train, cfg.seed, step as u64);
    let x = tape.constant(x_batch.clone());
    let y = tape.constant(y_batch.clone());
    let cycles = cycles_on(&mut tape, &q.g, &q.f, x, y, true)?;

    // Discriminator phase on detached fakes.
    let mut dt = Tape::with_seed(Mode::Train, cfg.seed, step as u64);
    let (loss_d_x, loss_d_y) = {
        let real_y = dt.constant(y_batch.clone());
        let fake_y = dt.constant(tape.value(cycles.fake_y).clone());
        let real_x = dt.constant(x_batch.clone());
        let fake_x = dt.constant(tape.value(cycles.fake_x).clone());
        let sry = q.d_y.forward(&mut dt, real_y, true)?;
        let sfy = q.d_y.forward(&mut dt, fake_y, true)?;
        let srx = q.d_x.forward(&mut dt, real_x, true)?;
        let sfx = q.d_x.forward(&mut dt, fake_x, true)?;
        let ly = d_loss_on(&mut dt, sry, sfy)?;
        let lx = d_loss_on(&mut dt, srx, sfx)?;
        let total = dt.add(lx, ly)?;
        let vx = check_finite("loss_d_x", dt.value(lx).data()[0], step)?;
        let vy = check_finite("loss_d_y", dt.value(ly).data()[0], step)?;
        let grads = dt.backward(total)?;
        q.d_x.params_mut().accumulate(&grads)?;
        q.d_y.params_mut().accumulate(&grads)?;
        let d_lr = lr * cfg.discriminator_lr_scale;
        q.d_x.params_mut().adam_step(d_lr, cfg.adam);
        q.d_y.params_mut().adam_step(d_lr, cfg.adam);
        (vx, vy)
    };
    drop(dt);

    // Generator phase.
    let sy = q.d_y.forward(&mut tape, cycles.fake_y, false)?;
    let sx = q.d_x.forward(&mut tape, cycles.fake_x, false)?;
    let gan_g = g_loss_on(&mut tape, sy, cfg.generator_loss);
    let gan_f = g_loss_on(&mut tape, sx, cfg.generator_loss);
    let weighted = tape.scale(cycles.loss, cfg.lambda_cyc);
    let adv = tape.add(gan_g, gan_f)?;
    let total = tape.add(adv, weighted)?;
    let report = EncoderStepReport {
        step,
        loss_gan_g: check_finite("loss_gan_g", tape.value(gan_g).data()[0], step)?,
        loss_gan_f: check_finite("loss_gan_f", tape.value(gan_f).data()[0], step)?,
        loss_cyc: check_finite("loss_cyc", tape.value(cycles.loss).data()[0], step)?,
        loss_total_g: check_finite("loss_total_g", tape.value(total).data()[0], step)?,
        loss_d_x,
        loss_d_y,
        current_lr: lr,
    };
    let grads = tape.backward(total)?;
    q.g.params_mut().accumulate(&grads)?;
    q.f.params_mut().accumulate(&grads)?;
    let g_lr = lr * cfg.generator_lr_scale;
    q.g.params_mut().adam_step(g_lr, cfg.adam);
    q.f.params_mut().adam_step(g_lr, cfg.adam);
    Ok(report)
}

/// Learning rate implied by a report history under the plateau schedule,
/// driven by the total generator loss.
pub fn lr_schedule(history: &[EncoderStepReport], cfg: &EncoderTrainConfig) -> f32 {
    crate::train::replay_schedule(cfg.lr, cfg.plateau, history.iter().map(|r| r.loss_total_g as f64))
}

/// Owns the quartet, both unpaired corpora and the schedule.
#[derive(Debug)]
pub struct EncoderTrainer {
    pub quartet: EncoderQuartet,
    pub config: EncoderTrainConfig,
    images: Vec<Tensor>,
    sketches: Vec<Tensor>,
    image_sampler: BatchSampler,
    sketch_sampler: BatchSampler,
    schedule: PlateauSchedule,
    step: usize,
    history: Vec<EncoderStepReport>,
}

fn check_items(items: &[Tensor], size: usize, what: &str) -> Result<()> {
    if items.is_empty() {
        return Err(Error::Data(format!("no {what} to train on")));
    }
    for t in items {
        if t.shape() != [CHANNELS, size, size] {
            return Err(Error::Shape(format!(
                "{what} tensor {} does not match [{CHANNELS},{size},{size}]",
                t.shape_string()
            )));
        }
    }
    Ok(())
}

impl EncoderTrainer {
    /// `images` and `sketches` are `[3,S,S]` tensors in `[-1,1]`; they need
    /// not correspond to each other.
    pub fn new(config: EncoderTrainConfig, images: Vec<Tensor>, sketches: Vec<Tensor>) -> Result<Self> {
        check_items(&images, config.image_size, "image")?;
        check_items(&sketches, config.image_size, "sketch")?;
        let quartet = EncoderQuartet::build(&config)?;
        let image_sampler = BatchSampler::new(images.len(), config.batch_size, config.seed ^ 0x1111)?;
        let sketch_sampler = BatchSampler::new(sketches.len(), config.batch_size, config.seed ^ 0x2222)?;
        let schedule = PlateauSchedule::new(config.lr, config.plateau);
        Ok(EncoderTrainer {
            quartet,
            config,
            images,
            sketches,
            image_sampler,
            sketch_sampler,
            schedule,
            step: 0,
            history: Vec::new(),
        })
    }

    pub fn history(&self) -> &[EncoderStepReport] {
        &self.history
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f32 {
        self.schedule.lr()
    }

    pub fn step(&mut self) -> Result<EncoderStepReport> {
        let xi = self.image_sampler.next_batch();
        let yi = self.sketch_sampler.next_batch();
        let x = Tensor::stack(&xi.iter().map(|&i| self.images[i].clone()).collect::<Vec<_>>())?;
        let y = Tensor::stack(&yi.iter().map(|&i| self.sketches[i].clone()).collect::<Vec<_>>())?;
        self.step += 1;
        let report = encoder_train_step(&mut self.quartet, &x, &y, &self.config, self.step, self.schedule.lr())?;
        self.schedule.observe(report.loss_total_g as f64);
        self.history.push(report.clone());
        Ok(report)
    }

    /// Runs until `max_steps`, writing one JSON line per step to `log`.
    pub fn run(&mut self, mut log: Option<&mut dyn Write>) -> Result<()> {
        while self.step < self.config.max_steps {
            let r = self.step()?;
            if let Some(out) = log.as_deref_mut() {
                write_log_line(out, &r)?;
            }
            if r.step % 50 == 0 {
                log::info!(
                    "encoder step {}: cyc {:.4} gan_g {:.4} gan_f {:.4} d_x {:.4} d_y {:.4} lr {:e}",
                    r.step,
                    r.loss_cyc,
                    r.loss_gan_g,
                    r.loss_gan_f,
                    r.loss_d_x,
                    r.loss_d_y,
                    r.current_lr
                );
            }
        }
        Ok(())
    }
}

/// Translates image(s) to sketch(es) with dropout off. Accepts `[C,H,W]` or
/// `[B,C,H,W]` and returns the same rank.
pub fn encode(g: &NetworkInstance, image: &Tensor) -> Result<Tensor> {
    match image.shape().len() {
        3 => {
            let mut shape = vec![1];
            shape.extend_from_slice(image.shape());
            let out = g.infer(&image.reshape(shape)?)?;
            out.batch_item(0)
        }
        4 => g.infer(image),
        _ => Err(Error::Shape(format!(
            "encode expects [C,H,W] or [B,C,H,W], got {}",
            image.shape_string()
        ))),
    }
}
