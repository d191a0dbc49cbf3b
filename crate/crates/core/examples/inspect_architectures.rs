//! Prints the shape table and parameter count of every preset network.
//!
//!     cargo run --example inspect_architectures

use sketchgan::netspec::{presets, NetworkSpec, Role};
use sketchgan::network::{build_network, BuildOptions};
use sketchgan::Result;

fn main() -> Result<()> {
    let nets = [
        (
            "encoder G / F",
            presets::ENCODER_GENERATOR,
            Role::Generator,
            3,
            presets::IMAGE_SIZE,
        ),
        (
            "encoder D_X / D_Y",
            presets::ENCODER_DISCRIMINATOR,
            Role::Discriminator,
            3,
            presets::IMAGE_SIZE,
        ),
        (
            "decoder G",
            presets::DECODER_GENERATOR,
            Role::Generator,
            4,
            presets::IMAGE_SIZE,
        ),
        (
            "decoder D",
            presets::DECODER_DISCRIMINATOR,
            Role::Discriminator,
            7,
            presets::IMAGE_SIZE,
        ),
        (
            "small G",
            presets::SMALL_GENERATOR,
            Role::Generator,
            3,
            presets::SMALL_IMAGE_SIZE,
        ),
        (
            "small D",
            presets::SMALL_DISCRIMINATOR,
            Role::Discriminator,
            3,
            presets::SMALL_IMAGE_SIZE,
        ),
    ];
    for (title, arch, role, channels, size) in nets {
        let spec = NetworkSpec::parse(arch, role, channels, size)?;
        let table = spec.infer_shapes()?;
        let params = build_network(&spec, "net", BuildOptions::default(), 0)?.count_params();
        println!("== {title}: {arch}");
        print!("{table}");
        println!("parameters: {params}\n");
    }
    Ok(())
}
