//! Command-line front end. [`run`] returns the process exit code:
//! 0 success, 1 usage error, 2 data error, 3 numeric abort.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::dataio::atomic_write;
use crate::dataio::config::RunConfig;
use crate::dataio::synthetic::{make_synthetic_corpus, SyntheticConfig};
use crate::error::{Error, Result};
use crate::netspec::{parse_spec, LayerKind, NetworkSpec, Role};
use crate::pairgen::{generate_pairs, sketch_report};
use crate::pipeline::{collect_paths, train_decoder, train_encoder, translate_file, Column};

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut flags = self.set.clone();
        if let Some(s) = self.seed {
            flags.push(format!("seed={s}"));
        }
        RunConfig::resolve(self.config.as_deref(), &flags)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draws a labeled corpus of filled shapes with outline sketches.
    MakeSyntheticCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        per_class: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        /// Defaults to the `image_size` key.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Trains G, F, D_X, D_Y on unpaired images and sketches.
    TrainEncoder {
        /// Image directory or manifest.
        #[arg(long)]
        images: PathBuf,
        /// Sketch directory or manifest (its sketch column).
        #[arg(long)]
        sketches: PathBuf,
        /// Checkpoint path; the step log goes beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Encodes a labeled corpus into (image, sketch, label) pairs.
    GeneratePairs {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Binarize sketches at this threshold; overrides
        /// `pairs.binarize_threshold`.
        #[arg(long)]
        binarize: Option<u8>,
    },
    /// Trains the label-conditioned decoder on a paired manifest.
    TrainDecoder {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Renders one sketch with a class label.
    Translate {
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long)]
        sketch: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        label: i64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compares pixel statistics of real and generated sketches.
    ///
    /// Each side is a directory or a manifest (its sketch column).
    AnalyzeSketches {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [64u8, 128, 192])]
        thresholds: Vec<u8>,
        /// Writes the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prints the per-layer shape table of a layer string.
    InspectSpec {
        spec: String,
        /// Input as CxHxW.
        #[arg(long, default_value = "3x256x256")]
        input: String,
        /// generator | discriminator | stack; inferred when omitted.
        #[arg(long)]
        role: Option<Role>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Parser, Debug)]
#[command(
    name = "sketchgan",
    version,
    about = "Image-to-sketch encoder, paired data synthesis and sketch-to-image decoder"
)]
struct Top {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn parse_input(text: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = text
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("--input {text:?}: expected CxHxW")))?;
    match parts[..] {
        [c, h, w] if c > 0 && h > 0 && h == w => Ok([c, h, w]),
        [_, h, w] if h != w => Err(Error::Config(format!(
            "--input {text:?}: only square inputs are supported"
        ))),
        _ => Err(Error::Config(format!("--input {text:?}: expected CxHxW"))),
    }
}

fn execute(common: &Common, command: Command) -> Result<()> {
    let cfg = common.resolve()?;
    match command {
        Command::MakeSyntheticCorpus {
            out,
            per_class,
            classes,
            size,
        } => {
            let sc = SyntheticConfig {
                per_class,
                num_classes: classes,
                size: size.unwrap_or(cfg.usize("image_size")),
                seed: cfg.u64("seed"),
            };
            let m = make_synthetic_corpus(&out, &sc)?;
            println!(
                "wrote {} images in {} classes to {}",
                m.records.len(),
                m.num_classes(),
                out.join("corpus.tsv").display()
            );
        }
        Command::TrainEncoder { images, sketches, out } => {
            let run = train_encoder(&cfg, &images, &sketches, &out)?;
            let last = run.history().last().cloned();
            println!(
                "encoder trained for {} steps; checkpoint {} log {}",
                run.trainer.steps_done(),
                run.checkpoint.display(),
                run.log.display()
            );
            if let Some(r) = last {
                println!("final loss_cyc {:.4} lr {:e}", r.loss_cyc, r.current_lr);
            }
        }
        Command::GeneratePairs {
            encoder,
            corpus,
            out,
            binarize,
        } => {
            let threshold = binarize.or(cfg.binarize_threshold());
            let outcome = generate_pairs(&encoder, &corpus, &out, threshold)?;
            println!(
                "wrote {} pairs to {} ({} skipped)",
                outcome.manifest.records.len(),
                outcome.manifest_path.display(),
                outcome.skipped.len()
            );
        }
        Command::TrainDecoder { pairs, out } => {
            let run = train_decoder(&cfg, &pairs, &out)?;
            println!(
                "decoder trained for {} steps; checkpoint {} log {}",
                run.trainer.steps_done(),
                run.checkpoint.display(),
                run.log.display()
            );
        }
        Command::Translate {
            decoder,
            sketch,
            label,
            out,
        } => {
            translate_file(&decoder, &sketch, label, &out)?;
            println!("wrote {}", out.display());
        }
        Command::AnalyzeSketches {
            real,
            fake,
            thresholds,
            out,
        } => {
            let r = collect_paths(&real, Column::Sketch)?;
            let f = collect_paths(&fake, Column::Sketch)?;
            let report = sketch_report(&r, &f, &thresholds)?;
            println!(
                "binary mass fraction: real {:.4} ({} px), fake {:.4} ({} px), difference {:.4}",
                report.real_binary_fraction,
                report.real.total,
                report.fake_binary_fraction,
                report.fake.total,
                report.difference
            );
            for row in &report.sweep {
                println!(
                    "threshold {:>3}: white real {:.4} fake {:.4}",
                    row.threshold, row.real_white_fraction, row.fake_white_fraction
                );
            }
            if let Some(p) = out {
                let json = serde_json::to_vec_pretty(&report).map_err(|e| Error::Data(e.to_string()))?;
                atomic_write(&p, &json)?;
            }
        }
        Command::InspectSpec { spec, input, role, out } => {
            let [c, h, _] = parse_input(&input)?;
            let tokens = parse_spec(&spec)?;
            let role = role.unwrap_or(if tokens.iter().any(|t| t.kind == LayerKind::Up) {
                Role::Generator
            } else {
                Role::Discriminator
            });
            let table = NetworkSpec::new(tokens, role, c, h)?.infer_shapes()?;
            let text = table.to_string();
            print!("{text}");
            if let Some(p) = out {
                atomic_write(&p, text.as_bytes())?;
            }
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let top = match Top::try_parse_from(argv) {
        Ok(t) => t,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&top.common, top.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
