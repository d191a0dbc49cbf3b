//! Abbreviated layer notation (`D64-D128-U64-U3`), shape inference and
//! U-net skip pairing.
//!
//! `D<n>` is a stride-2 downsampling convolution with `n` output channels,
//! `U<n>` a stride-2 transposed convolution with `n` output channels (the
//! layer's own width, skip concatenation excluded), and `R<n>` a
//! shape-preserving residual block over `n` channels.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Architectures as printed for the full-size networks, plus a desk-scale
/// profile that trains in minutes on one CPU core.
pub mod presets {
    pub const ENCODER_GENERATOR: &str = "D32-D64-D128-D256-D256-D256-D256-D256-U512-U512-U512-U512-U256-U128-U64-U3";
    pub const ENCODER_DISCRIMINATOR: &str = "D64-D128-D256-D512";
    pub const DECODER_GENERATOR: &str =
        "D64-D128-D256-D512-D512-D512-D512-D512-U1024-R1024-R1024-U1024-R1024-R1024-U1024-U1024-U512-U256-U128-U3";
    pub const DECODER_DISCRIMINATOR: &str = "D64-D128-D256-D512";
    pub const IMAGE_SIZE: usize = 256;

    /// 5 D / 5 U at 32x32, channels capped at 128.
    pub const SMALL_GENERATOR: &str = "D32-D64-D128-D128-D128-U128-U128-U64-U32-U3";
    /// Small decoder generator; keeps one residual block in the up path.
    pub const SMALL_DECODER_GENERATOR: &str = "D32-D64-D128-D128-D128-U128-R128-U128-U64-U32-U3";
    pub const SMALL_DISCRIMINATOR: &str = "D32-D64-D128";
    pub const SMALL_IMAGE_SIZE: usize = 32;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Down,
    Up,
    Residual,
}

impl LayerKind {
    pub fn letter(self) -> char {
        match self {
            LayerKind::Down => 'D',
            LayerKind::Up => 'U',
            LayerKind::Residual => 'R',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerToken {
    pub kind: LayerKind,
    pub channels: usize,
}

impl fmt::Display for LayerToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind.letter(), self.channels)
    }
}

impl FromStr for LayerToken {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_segment(s, 1)
    }
}

fn parse_segment(segment: &str, position: usize) -> Result<LayerToken> {
    let err = |reason: &str| Error::Parse {
        position,
        segment: segment.to_string(),
        reason: reason.to_string(),
    };
    let mut chars = segment.chars();
    let kind = match chars.next() {
        None => return Err(err("empty segment")),
        Some('D') => LayerKind::Down,
        Some('U') => LayerKind::Up,
        Some('R') => LayerKind::Residual,
        Some(_) => return Err(err("unknown layer prefix, expected D, U or R")),
    };
    let digits = chars.as_str();
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(err("channel count must be a decimal integer"));
    }
    let channels: usize = digits.parse().map_err(|_| err("channel count overflows"))?;
    if channels == 0 {
        return Err(err("channel count must be positive"));
    }
    Ok(LayerToken { kind, channels })
}

/// Splits `text` on `-` into layer tokens, preserving order.
pub fn parse_spec(text: &str) -> Result<Vec<LayerToken>> {
    text.split('-')
        .enumerate()
        .map(|(i, seg)| parse_segment(seg, i + 1))
        .collect()
}

/// Canonical string form of a token list.
pub fn render(tokens: &[LayerToken]) -> String {
    tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("-")
}

/// Mirror pairing of downsampling and upsampling layers, as token indices.
///
/// With `n` D layers and `n` U layers, the `j`-th U (`j >= 1`) receives the
/// output of the `(n-1-j)`-th D. The innermost pair is left unskipped since
/// the first U already consumes the innermost D directly.
pub fn pair_skips(tokens: &[LayerToken]) -> Vec<(usize, usize)> {
    let downs: Vec<usize> = positions(tokens, LayerKind::Down);
    let ups: Vec<usize> = positions(tokens, LayerKind::Up);
    if downs.len() != ups.len() || ups.is_empty() {
        return Vec::new();
    }
    let n = downs.len();
    (1..n).map(|j| (downs[n - 1 - j], ups[j])).collect()
}

fn positions(tokens: &[LayerToken], kind: LayerKind) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.kind == kind)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    /// Encoder/decoder with skip concatenations and a tanh output.
    Generator,
    /// Downsampling stack followed by a scalar-score head.
    Discriminator,
    /// Bare layer stack: no skips, no head.
    Stack,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Generator => "generator",
            Role::Discriminator => "discriminator",
            Role::Stack => "stack",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generator" => Ok(Role::Generator),
            "discriminator" => Ok(Role::Discriminator),
            "stack" => Ok(Role::Stack),
            other => Err(Error::Config(format!("unknown network role {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    None,
    ScalarScore,
}

/// Kernel geometry shared by all networks.
pub const UPDOWN_KERNEL: usize = 4;
pub const HEAD_KERNEL: usize = 4;
pub const RESIDUAL_KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub tokens: Vec<LayerToken>,
    pub role: Role,
    pub input_channels: usize,
    pub input_size: usize,
    pub skip_pairs: Vec<(usize, usize)>,
    pub head: Head,
}

impl NetworkSpec {
    pub fn parse(text: &str, role: Role, input_channels: usize, input_size: usize) -> Result<Self> {
        Self::new(parse_spec(text)?, role, input_channels, input_size)
    }

    pub fn new(tokens: Vec<LayerToken>, role: Role, input_channels: usize, input_size: usize) -> Result<Self> {
        if input_channels == 0 || input_size == 0 {
            return Err(Error::Build("input channels and size must be positive".into()));
        }
        let downs = tokens.iter().filter(|t| t.kind == LayerKind::Down).count();
        let ups = tokens.iter().filter(|t| t.kind == LayerKind::Up).count();
        match role {
            Role::Generator => {
                if downs != ups || downs == 0 {
                    return Err(Error::Build(format!(
                        "generator needs equal, non-zero D and U counts, got {downs} D and {ups} U in {:?}",
                        render(&tokens)
                    )));
                }
                if let Some(first_up) = tokens.iter().position(|t| t.kind == LayerKind::Up) {
                    if tokens[first_up..].iter().any(|t| t.kind == LayerKind::Down) {
                        return Err(Error::Build("generator D layers must all precede its U layers".into()));
                    }
                }
                if tokens.last().map(|t| t.kind) != Some(LayerKind::Up) {
                    return Err(Error::Build("generator must end with a U layer".into()));
                }
            }
            Role::Discriminator => {
                if ups != 0 {
                    return Err(Error::Build(format!(
                        "discriminator cannot contain U layers: {:?}",
                        render(&tokens)
                    )));
                }
            }
            Role::Stack => {}
        }
        let skip_pairs = if role == Role::Generator {
            pair_skips(&tokens)
        } else {
            Vec::new()
        };
        let head = if role == Role::Discriminator {
            Head::ScalarScore
        } else {
            Head::None
        };
        let spec = NetworkSpec {
            tokens,
            role,
            input_channels,
            input_size,
            skip_pairs,
            head,
        };
        spec.infer_shapes()?;
        Ok(spec)
    }

    pub fn arch_string(&self) -> String {
        render(&self.tokens)
    }

    pub fn skip_source(&self, up_index: usize) -> Option<usize> {
        self.skip_pairs.iter().find(|&&(_, u)| u == up_index).map(|&(d, _)| d)
    }

    pub fn infer_shapes(&self) -> Result<ShapeTable> {
        infer_shapes(self, [self.input_channels, self.input_size, self.input_size])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub index: usize,
    pub token: LayerToken,
    /// `[C,H,W]` entering the layer, skip concatenation included.
    pub input: [usize; 3],
    pub output: [usize; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputShape {
    Map([usize; 3]),
    /// Per-item scalar score computed from a `[1,H,W]` patch map.
    Score {
        patch: [usize; 3],
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeTable {
    pub layers: Vec<LayerShape>,
    pub output: OutputShape,
}

fn down_dim(d: usize) -> Option<usize> {
    // 4x4 kernel, stride 2, pad 1: integral only for even sizes.
    (d >= 2 && d.is_multiple_of(2)).then_some(d / 2)
}

/// Per-layer shapes for a `[C,H,W]` input.
pub fn infer_shapes(spec: &NetworkSpec, input: [usize; 3]) -> Result<ShapeTable> {
    let mut cur = input;
    let mut layers = Vec::with_capacity(spec.tokens.len());
    let mut outputs: Vec<[usize; 3]> = Vec::with_capacity(spec.tokens.len());
    for (i, &token) in spec.tokens.iter().enumerate() {
        let layer_err = |reason: String| Error::Shape(format!("layer {} ({token}): {reason}", i + 1));
        let mut layer_in = cur;
        let out = match token.kind {
            LayerKind::Down => {
                let (Some(h), Some(w)) = (down_dim(cur[1]), down_dim(cur[2])) else {
                    return Err(layer_err(format!("cannot halve spatial size {}x{}", cur[1], cur[2])));
                };
                [token.channels, h, w]
            }
            LayerKind::Up => {
                if let Some(src) = spec.skip_source(i) {
                    let skip = outputs[src];
                    if skip[1..] != cur[1..] {
                        return Err(layer_err(format!(
                            "skip from layer {} is {}x{}, expected {}x{}",
                            src + 1,
                            skip[1],
                            skip[2],
                            cur[1],
                            cur[2]
                        )));
                    }
                    layer_in[0] += skip[0];
                }
                [token.channels, cur[1] * 2, cur[2] * 2]
            }
            LayerKind::Residual => {
                if token.channels != cur[0] {
                    return Err(layer_err(format!(
                        "residual block over {} channels applied to {} channels",
                        token.channels, cur[0]
                    )));
                }
                cur
            }
        };
        layers.push(LayerShape {
            index: i,
            token,
            input: layer_in,
            output: out,
        });
        outputs.push(out);
        cur = out;
    }
    let output = match spec.head {
        Head::None => OutputShape::Map(cur),
        Head::ScalarScore => {
            // 4x4 stride-1 pad-1 patch head.
            if cur[1] < HEAD_KERNEL - 2 || cur[2] < HEAD_KERNEL - 2 {
                return Err(Error::Shape(format!(
                    "score head needs at least a 2x2 feature map, got {}x{}",
                    cur[1], cur[2]
                )));
            }
            OutputShape::Score {
                patch: [1, cur[1] + 2 - HEAD_KERNEL + 1, cur[2] + 2 - HEAD_KERNEL + 1],
            }
        }
    };
    Ok(ShapeTable { layers, output })
}

impl fmt::Display for ShapeTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims = |d: &[usize; 3]| format!("{}x{}x{}", d[0], d[1], d[2]);
        writeln!(f, "{:>3}  {:<7} {:>14}  {:>14}", "#", "layer", "input", "output")?;
        for l in &self.layers {
            writeln!(
                f,
                "{:>3}  {:<7} {:>14}  {:>14}",
                l.index + 1,
                l.token.to_string(),
                dims(&l.input),
                dims(&l.output)
            )?;
        }
        match &self.output {
            OutputShape::Map(d) => writeln!(f, "output {}", dims(d)),
            OutputShape::Score { patch } => {
                writeln!(f, "head   scalar score (mean of {} patch map)", dims(patch))
            }
        }
    }
}
