//! `key = value` run configuration.
//!
//! Values resolve in three layers: built-in defaults (chosen by `profile`),
//! then a config file, then `--set key=value` flags. Unknown keys and
//! malformed values are rejected with the offending key named.

use std::collections::BTreeMap;
use std::path::Path;

use crate::decoder::{DecoderTrainConfig, DiscriminatorInput, LabelEncoding, LsganOrientation};
use crate::encoder::{EncoderTrainConfig, GeneratorLoss};
use crate::error::{Error, Result};
use crate::netspec::{parse_spec, presets};
use crate::network::BuildOptions;
use crate::train::PlateauConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueKind {
    Count,
    Seed,
    Real,
    Fraction,
    Arch,
    Choice(&'static [&'static str]),
    /// `none` or an 8-bit threshold.
    OptionalThreshold,
}

#[derive(Clone, Copy, Debug)]
pub struct KeyDef {
    pub key: &'static str,
    pub kind: ValueKind,
    /// Value under the default `full` profile.
    pub full: &'static str,
    /// Override used by `profile = small`.
    pub small: Option<&'static str>,
    pub help: &'static str,
}

const PROFILES: &[&str] = &["full", "small"];

macro_rules! key {
    ($k:expr, $kind:expr, $full:expr, $small:expr, $help:expr) => {
        KeyDef {
            key: $k,
            kind: $kind,
            full: $full,
            small: $small,
            help: $help,
        }
    };
}

use ValueKind::*;

pub const KEYS: &[KeyDef] = &[
    key!(
        "profile",
        Choice(PROFILES),
        "full",
        None,
        "default set: full (256x256) or small (32x32)"
    ),
    key!("seed", Seed, "0", None, "seed for initialization, sampling and dropout"),
    key!("image_size", Count, "256", Some("32"), "square input size in pixels"),
    key!(
        "num_classes",
        Count,
        "256",
        Some("2"),
        "class count for label conditioning"
    ),
    key!(
        "dropout_rate",
        Fraction,
        "0.5",
        None,
        "dropout probability on inner U layers"
    ),
    key!(
        "leaky_alpha",
        Fraction,
        "0.2",
        None,
        "leaky rectifier slope in generators"
    ),
    key!("init_std", Real, "0.02", None, "standard deviation of weight init"),
    key!("encoder.batch_size", Count, "4", None, "encoder batch size"),
    key!("encoder.lambda_cyc", Real, "10", None, "cycle-consistency weight"),
    key!(
        "encoder.lr",
        Real,
        "0.0001",
        Some("0.0005"),
        "encoder initial learning rate"
    ),
    key!("encoder.lr_decay_factor", Real, "10", None, "lr divisor on plateau"),
    key!(
        "encoder.plateau_patience",
        Count,
        "5",
        None,
        "stale windows before a decay"
    ),
    key!(
        "encoder.plateau_window",
        Count,
        "50",
        None,
        "steps per averaging window"
    ),
    key!(
        "encoder.plateau_threshold",
        Fraction,
        "0.01",
        None,
        "relative improvement that resets patience"
    ),
    key!(
        "encoder.max_steps",
        Count,
        "20000",
        Some("500"),
        "encoder training steps"
    ),
    key!(
        "encoder.generator_arch",
        Arch,
        presets::ENCODER_GENERATOR,
        Some(presets::SMALL_GENERATOR),
        "G and F layer string"
    ),
    key!(
        "encoder.discriminator_arch",
        Arch,
        presets::ENCODER_DISCRIMINATOR,
        Some(presets::SMALL_DISCRIMINATOR),
        "D_X and D_Y layer string"
    ),
    key!(
        "encoder.generator_loss",
        Choice(&["non-saturating", "literal"]),
        "non-saturating",
        None,
        "generator adversarial form"
    ),
    key!("decoder.batch_size", Count, "4", None, "decoder batch size"),
    key!("decoder.lambda_l1", Real, "100", None, "L1 reconstruction weight"),
    key!(
        "decoder.lr",
        Real,
        "0.000001",
        Some("0.0002"),
        "decoder initial learning rate"
    ),
    key!("decoder.lr_decay_factor", Real, "10", None, "lr divisor on plateau"),
    key!(
        "decoder.plateau_patience",
        Count,
        "5",
        None,
        "stale windows before a decay"
    ),
    key!(
        "decoder.plateau_window",
        Count,
        "50",
        None,
        "steps per averaging window"
    ),
    key!(
        "decoder.plateau_threshold",
        Fraction,
        "0.01",
        None,
        "relative improvement that resets patience"
    ),
    key!(
        "decoder.max_steps",
        Count,
        "20000",
        Some("300"),
        "decoder training steps"
    ),
    key!(
        "decoder.generator_arch",
        Arch,
        presets::DECODER_GENERATOR,
        Some(presets::SMALL_DECODER_GENERATOR),
        "decoder G layer string"
    ),
    key!(
        "decoder.discriminator_arch",
        Arch,
        presets::DECODER_DISCRIMINATOR,
        Some(presets::SMALL_DISCRIMINATOR),
        "decoder D layer string"
    ),
    key!(
        "decoder.label_encoding",
        Choice(&["scalar", "one-hot"]),
        "scalar",
        None,
        "label plane encoding"
    ),
    key!(
        "decoder.discriminator_input",
        Choice(&["sketch-label-image", "label-image"]),
        "sketch-label-image",
        None,
        "what D sees besides the candidate"
    ),
    key!(
        "decoder.lsgan_orientation",
        Choice(&["conventional", "literal"]),
        "conventional",
        None,
        "least-squares target orientation"
    ),
    key!(
        "pairs.binarize_threshold",
        OptionalThreshold,
        "none",
        None,
        "binarize fake sketches before writing"
    ),
    key!(
        "split.train_fraction",
        Fraction,
        "0.9",
        None,
        "share of items in the train split"
    ),
    key!(
        "split.val_fraction",
        Fraction,
        "0.05",
        None,
        "share of items in the val split"
    ),
];

pub fn key_def(key: &str) -> Option<&'static KeyDef> {
    KEYS.iter().find(|k| k.key == key)
}

fn validate(def: &KeyDef, value: &str) -> Result<()> {
    let bad = |what: &str| Error::Config(format!("{} = {value:?}: expected {what}", def.key));
    match def.kind {
        Count => {
            let v: usize = value.parse().map_err(|_| bad("a positive integer"))?;
            if v == 0 {
                return Err(bad("a positive integer"));
            }
        }
        Seed => {
            value.parse::<u64>().map_err(|_| bad("an unsigned integer"))?;
        }
        Real => {
            let v: f64 = value.parse().map_err(|_| bad("a number"))?;
            if !v.is_finite() || v < 0.0 {
                return Err(bad("a finite non-negative number"));
            }
        }
        Fraction => {
            let v: f64 = value.parse().map_err(|_| bad("a number in [0, 1)"))?;
            if !(0.0..1.0).contains(&v) {
                return Err(bad("a number in [0, 1)"));
            }
        }
        Arch => {
            parse_spec(value).map_err(|e| Error::Config(format!("{}: {e}", def.key)))?;
        }
        Choice(options) => {
            if !options.contains(&value) {
                return Err(bad(&options.join(" | ")));
            }
        }
        OptionalThreshold => {
            if value != "none" {
                value.parse::<u8>().map_err(|_| bad("none or 0..=255"))?;
            }
        }
    }
    Ok(())
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_assignments(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{origin}:{}: expected `key = value`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses a `key=value` flag.
pub fn parse_flag(flag: &str) -> Result<(String, String)> {
    let (k, v) = flag
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set {flag:?}: expected key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::layered(&[]).expect("built-in defaults are valid")
    }
}

impl RunConfig {
    /// Applies assignment layers in order over the profile defaults. The
    /// profile itself is taken from the last layer that sets it.
    pub fn layered(layers: &[Vec<(String, String)>]) -> Result<Self> {
        let mut explicit: BTreeMap<&'static str, String> = BTreeMap::new();
        for layer in layers {
            for (k, v) in layer {
                let def = key_def(k).ok_or_else(|| Error::Config(format!("unknown key {k:?}")))?;
                validate(def, v)?;
                explicit.insert(def.key, v.clone());
            }
        }
        let small = explicit.get("profile").map(String::as_str) == Some("small");
        let mut values = BTreeMap::new();
        for def in KEYS {
            let default = if small {
                def.small.unwrap_or(def.full)
            } else {
                def.full
            };
            values.insert(
                def.key,
                explicit.get(def.key).cloned().unwrap_or_else(|| default.to_string()),
            );
        }
        Ok(RunConfig { values })
    }

    /// Defaults < `file` < `flags` (each `key=value`).
    pub fn resolve(file: Option<&Path>, flags: &[String]) -> Result<Self> {
        let mut layers = Vec::new();
        if let Some(p) = file {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            layers.push(parse_assignments(&text, &p.display().to_string())?);
        }
        layers.push(flags.iter().map(|f| parse_flag(f)).collect::<Result<Vec<_>>>()?);
        Self::layered(&layers)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("config key {key:?} is not declared"))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> T {
        self.get(key)
            .parse()
            .unwrap_or_else(|_| panic!("validated config value {key} failed to parse"))
    }

    pub fn usize(&self, key: &str) -> usize {
        self.parsed(key)
    }

    pub fn u64(&self, key: &str) -> u64 {
        self.parsed(key)
    }

    pub fn f32(&self, key: &str) -> f32 {
        self.parsed(key)
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.parsed(key)
    }

    pub fn binarize_threshold(&self) -> Option<u8> {
        match self.get("pairs.binarize_threshold") {
            "none" => None,
            v => Some(v.parse().expect("validated threshold")),
        }
    }

    /// Every key with its resolved value, in key order.
    pub fn snapshot(&self) -> Vec<(String, String)> {
        self.values.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    /// Text accepted back by [`RunConfig::resolve`].
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            leaky_alpha: self.f32("leaky_alpha"),
            dropout_rate: self.f32("dropout_rate"),
            init_std: self.f32("init_std"),
            ..BuildOptions::default()
        }
    }

    fn plateau(&self, prefix: &str) -> PlateauConfig {
        PlateauConfig {
            window: self.usize(&format!("{prefix}.plateau_window")),
            patience: self.usize(&format!("{prefix}.plateau_patience")),
            threshold: self.f64(&format!("{prefix}.plateau_threshold")),
            decay_factor: self.f32(&format!("{prefix}.lr_decay_factor")),
        }
    }

    pub fn encoder(&self) -> EncoderTrainConfig {
        EncoderTrainConfig {
            batch_size: self.usize("encoder.batch_size"),
            lambda_cyc: self.f32("encoder.lambda_cyc"),
            lr: self.f32("encoder.lr"),
            plateau: self.plateau("encoder"),
            max_steps: self.usize("encoder.max_steps"),
            seed: self.u64("seed"),
            image_size: self.usize("image_size"),
            generator_arch: self.get("encoder.generator_arch").to_string(),
            discriminator_arch: self.get("encoder.discriminator_arch").to_string(),
            generator_loss: match self.get("encoder.generator_loss") {
                "literal" => GeneratorLoss::Literal,
                _ => GeneratorLoss::NonSaturating,
            },
            build: self.build_options(),
            ..EncoderTrainConfig::default()
        }
    }

    pub fn decoder(&self) -> DecoderTrainConfig {
        DecoderTrainConfig {
            batch_size: self.usize("decoder.batch_size"),
            lambda_l1: self.f32("decoder.lambda_l1"),
            lr: self.f32("decoder.lr"),
            num_classes: self.usize("num_classes"),
            seed: self.u64("seed"),
            image_size: self.usize("image_size"),
            max_steps: self.usize("decoder.max_steps"),
            plateau: self.plateau("decoder"),
            generator_arch: self.get("decoder.generator_arch").to_string(),
            discriminator_arch: self.get("decoder.discriminator_arch").to_string(),
            label_encoding: match self.get("decoder.label_encoding") {
                "one-hot" => LabelEncoding::OneHot,
                _ => LabelEncoding::Scalar,
            },
            discriminator_input: match self.get("decoder.discriminator_input") {
                "label-image" => DiscriminatorInput::LabelImage,
                _ => DiscriminatorInput::SketchLabelImage,
            },
            orientation: match self.get("decoder.lsgan_orientation") {
                "literal" => LsganOrientation::Literal,
                _ => LsganOrientation::Conventional,
            },
            build: self.build_options(),
            ..DecoderTrainConfig::default()
        }
    }
}
