//! Instantiation and forward evaluation of generators and discriminators
//! described by a [`NetworkSpec`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::netspec::{LayerKind, NetworkSpec, Role, HEAD_KERNEL, RESIDUAL_KERNEL, UPDOWN_KERNEL};
use crate::param::{ParamStore, Parameter};
use crate::tape::{Mode, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuildOptions {
    /// Leaky rectifier slope after generator layers.
    pub leaky_alpha: f32,
    /// Rectifier slope inside discriminators (0 = plain rectifier).
    pub discriminator_alpha: f32,
    pub dropout_rate: f32,
    /// Number of innermost U layers that apply dropout in train mode.
    pub dropout_layers: usize,
    pub init_std: f32,
    pub norm_eps: f32,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            leaky_alpha: 0.2,
            discriminator_alpha: 0.0,
            dropout_rate: 0.5,
            dropout_layers: 3,
            init_std: 0.02,
            norm_eps: 1e-5,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct NormIds {
    gain: usize,
    bias: usize,
}

#[derive(Clone, Copy, Debug)]
enum Activation {
    Leaky(f32),
    Tanh,
}

#[derive(Clone, Debug)]
enum LayerPlan {
    Down {
        kernel: usize,
        norm: Option<NormIds>,
        act: Activation,
    },
    Up {
        kernel: usize,
        skip_from: Option<usize>,
        norm: Option<NormIds>,
        bias: Option<usize>,
        dropout: Option<String>,
        act: Activation,
    },
    Residual {
        conv1: usize,
        norm1: Option<NormIds>,
        conv2: usize,
        norm2: Option<NormIds>,
    },
}

#[derive(Clone, Copy, Debug)]
struct HeadPlan {
    kernel: usize,
    bias: usize,
}

/// A built network: spec, named parameters and the per-layer wiring.
#[derive(Clone, Debug)]
pub struct NetworkInstance {
    name: String,
    spec: NetworkSpec,
    options: BuildOptions,
    params: ParamStore,
    layers: Vec<LayerPlan>,
    head: Option<HeadPlan>,
}

struct Builder<'a> {
    prefix: &'a str,
    params: ParamStore,
    rng: ChaCha8Rng,
    std: f32,
}

impl Builder<'_> {
    fn normal(&mut self, path: &str, shape: Vec<usize>) -> Result<usize> {
        let value = Tensor::randn(shape, self.std, &mut self.rng);
        self.params
            .insert(Parameter::new(format!("{}/{path}", self.prefix), value))
    }

    fn constant(&mut self, path: &str, shape: Vec<usize>, v: f32) -> Result<usize> {
        self.params.insert(Parameter::new(
            format!("{}/{path}", self.prefix),
            Tensor::full(shape, v),
        ))
    }

    fn norm(&mut self, path: &str, channels: usize) -> Result<NormIds> {
        Ok(NormIds {
            gain: self.constant(&format!("{path}/gain"), vec![channels], 1.0)?,
            bias: self.constant(&format!("{path}/bias"), vec![channels], 0.0)?,
        })
    }
}

/// Builds a network with weights drawn from `normal(0, init_std)`.
///
/// Generators: every layer is followed by instance norm except the first,
/// the last and any layer whose output plane is a single pixel; dropout sits
/// on the innermost U layers; leaky rectifiers follow all hidden layers and
/// the last layer ends in tanh. Discriminators use plain rectifiers and a
/// one-channel 4x4 patch head averaged into one score per item.
pub fn build_network(spec: &NetworkSpec, name: &str, options: BuildOptions, seed: u64) -> Result<NetworkInstance> {
    let table = spec.infer_shapes()?;
    let mut b = Builder {
        prefix: name,
        params: ParamStore::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        std: options.init_std,
    };
    let last = spec.tokens.len().saturating_sub(1);
    let (mut n_down, mut n_up, mut n_res) = (0usize, 0usize, 0usize);
    let mut layers = Vec::with_capacity(spec.tokens.len());
    let hidden_act = match spec.role {
        Role::Discriminator => Activation::Leaky(options.discriminator_alpha),
        _ => Activation::Leaky(options.leaky_alpha),
    };
    let normable = |shape: &[usize; 3]| shape[1] * shape[2] >= 2;

    for (i, layer) in table.layers.iter().enumerate() {
        let c_in = layer.input[0];
        let c_out = layer.output[0];
        let is_last = i == last && spec.role == Role::Generator;
        let wants_norm = i != 0 && !is_last && normable(&layer.output);
        match layer.token.kind {
            LayerKind::Down => {
                let path = format!("down{n_down}");
                n_down += 1;
                let kernel = b.normal(
                    &format!("{path}/kernel"),
                    vec![c_out, c_in, UPDOWN_KERNEL, UPDOWN_KERNEL],
                )?;
                let norm = if wants_norm {
                    Some(b.norm(&format!("{path}/norm"), c_out)?)
                } else {
                    None
                };
                layers.push(LayerPlan::Down {
                    kernel,
                    norm,
                    act: if is_last { Activation::Tanh } else { hidden_act },
                });
            }
            LayerKind::Up => {
                let path = format!("up{n_up}");
                let ordinal = n_up;
                n_up += 1;
                let kernel = b.normal(
                    &format!("{path}/kernel"),
                    vec![c_in, c_out, UPDOWN_KERNEL, UPDOWN_KERNEL],
                )?;
                let norm = if wants_norm {
                    Some(b.norm(&format!("{path}/norm"), c_out)?)
                } else {
                    None
                };
                let bias = if is_last {
                    Some(b.constant(&format!("{path}/bias"), vec![c_out], 0.0)?)
                } else {
                    None
                };
                let dropout = (!is_last && ordinal < options.dropout_layers && options.dropout_rate > 0.0)
                    .then(|| format!("{name}/{path}"));
                layers.push(LayerPlan::Up {
                    kernel,
                    skip_from: spec.skip_source(i),
                    norm,
                    bias,
                    dropout,
                    act: if is_last { Activation::Tanh } else { hidden_act },
                });
            }
            LayerKind::Residual => {
                let path = format!("res{n_res}");
                n_res += 1;
                let c = c_in;
                let k = RESIDUAL_KERNEL;
                let conv1 = b.normal(&format!("{path}/conv1/kernel"), vec![c, c, k, k])?;
                let norm1 = if normable(&layer.output) {
                    Some(b.norm(&format!("{path}/norm1"), c)?)
                } else {
                    None
                };
                let conv2 = b.normal(&format!("{path}/conv2/kernel"), vec![c, c, k, k])?;
                let norm2 = if normable(&layer.output) {
                    Some(b.norm(&format!("{path}/norm2"), c)?)
                } else {
                    None
                };
                layers.push(LayerPlan::Residual {
                    conv1,
                    norm1,
                    conv2,
                    norm2,
                });
            }
        }
    }

    let head = if spec.role == Role::Discriminator {
        let c = table.layers.last().map_or(spec.input_channels, |l| l.output[0]);
        Some(HeadPlan {
            kernel: b.normal("head/kernel", vec![1, c, HEAD_KERNEL, HEAD_KERNEL])?,
            bias: b.constant("head/bias", vec![1], 0.0)?,
        })
    } else {
        None
    };

    Ok(NetworkInstance {
        name: name.to_string(),
        spec: spec.clone(),
        options,
        params: b.params,
        layers,
        head,
    })
}

/// `input + IN(conv(relu(IN(conv(input)))))` with 3x3 stride-1 convolutions.
#[allow(clippy::too_many_arguments)]
pub fn residual_block(
    tape: &mut Tape,
    input: Var,
    conv1: Var,
    norm1: Option<(Var, Var)>,
    conv2: Var,
    norm2: Option<(Var, Var)>,
    eps: f32,
) -> Result<Var> {
    let c = tape.value(input).dims4()?.1;
    let k = tape.value(conv1).shape();
    if k[0] != c || tape.value(conv2).shape()[0] != c {
        return Err(Error::Shape(format!(
            "residual block kernels {} do not match {c} input channels",
            tape.value(conv1).shape_string()
        )));
    }
    let pad = RESIDUAL_KERNEL / 2;
    let mut h = tape.conv_down(input, conv1, 1, pad)?;
    if let Some((g, b)) = norm1 {
        h = tape.instance_norm(h, g, b, eps)?;
    }
    h = tape.relu(h)?;
    h = tape.conv_down(h, conv2, 1, pad)?;
    if let Some((g, b)) = norm2 {
        h = tape.instance_norm(h, g, b, eps)?;
    }
    tape.add(input, h)
}

impl NetworkInstance {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn role(&self) -> Role {
        self.spec.role
    }

    pub fn options(&self) -> &BuildOptions {
        &self.options
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Exact number of trainable scalars.
    pub fn count_params(&self) -> usize {
        self.params.count_scalars()
    }

    fn leaf(&self, tape: &mut Tape, id: usize, trainable: bool) -> Var {
        let p = self.params.get(id);
        if trainable {
            tape.param(p)
        } else {
            tape.constant(p.value().clone())
        }
    }

    fn norm_leaves(&self, tape: &mut Tape, ids: Option<NormIds>, trainable: bool) -> Option<(Var, Var)> {
        ids.map(|n| (self.leaf(tape, n.gain, trainable), self.leaf(tape, n.bias, trainable)))
    }

    fn activate(tape: &mut Tape, x: Var, act: Activation) -> Result<Var> {
        match act {
            Activation::Leaky(a) => tape.leaky_relu(x, a),
            Activation::Tanh => Ok(tape.tanh(x)),
        }
    }

    /// Records a forward pass of `input` (`[B,C,H,W]`). With `trainable`
    /// false the weights enter as constants and receive no gradient.
    ///
    /// Generators return `[B,C_out,H,W]`; discriminators return `[B,1]`
    /// raw (pre-sigmoid) scores.
    pub fn forward(&self, tape: &mut Tape, input: Var, trainable: bool) -> Result<Var> {
        let (_, c, h, w) = tape.value(input).dims4()?;
        let want = (self.spec.input_channels, self.spec.input_size, self.spec.input_size);
        if (c, h, w) != want {
            return Err(Error::Shape(format!(
                "{} expects input [B,{},{},{}], got {}",
                self.name,
                want.0,
                want.1,
                want.2,
                tape.value(input).shape_string()
            )));
        }
        let eps = self.options.norm_eps;
        let mut outputs: Vec<Var> = Vec::with_capacity(self.layers.len());
        let mut x = input;
        for layer in &self.layers {
            x = match layer {
                LayerPlan::Down { kernel, norm, act } => {
                    let k = self.leaf(tape, *kernel, trainable);
                    let mut y = tape.conv_down(x, k, 2, 1)?;
                    if let Some((g, b)) = self.norm_leaves(tape, *norm, trainable) {
                        y = tape.instance_norm(y, g, b, eps)?;
                    }
                    Self::activate(tape, y, *act)?
                }
                LayerPlan::Up {
                    kernel,
                    skip_from,
                    norm,
                    bias,
                    dropout,
                    act,
                } => {
                    let mut inp = x;
                    if let Some(src) = skip_from {
                        inp = tape.concat_channels(x, outputs[*src])?;
                    }
                    let k = self.leaf(tape, *kernel, trainable);
                    let mut y = tape.conv_up(inp, k, 2, 1)?;
                    if let Some(bias) = bias {
                        let b = self.leaf(tape, *bias, trainable);
                        y = tape.add_channel_bias(y, b)?;
                    }
                    if let Some((g, b)) = self.norm_leaves(tape, *norm, trainable) {
                        y = tape.instance_norm(y, g, b, eps)?;
                    }
                    if let Some(stream) = dropout {
                        y = tape.dropout(y, self.options.dropout_rate, stream)?;
                    }
                    Self::activate(tape, y, *act)?
                }
                LayerPlan::Residual {
                    conv1,
                    norm1,
                    conv2,
                    norm2,
                } => {
                    let k1 = self.leaf(tape, *conv1, trainable);
                    let n1 = self.norm_leaves(tape, *norm1, trainable);
                    let k2 = self.leaf(tape, *conv2, trainable);
                    let n2 = self.norm_leaves(tape, *norm2, trainable);
                    residual_block(tape, x, k1, n1, k2, n2, eps)?
                }
            };
            outputs.push(x);
        }
        if let Some(head) = self.head {
            let k = self.leaf(tape, head.kernel, trainable);
            let b = self.leaf(tape, head.bias, trainable);
            let patch = tape.conv_down(x, k, 1, 1)?;
            let patch = tape.add_channel_bias(patch, b)?;
            x = tape.spatial_mean(patch)?;
        }
        Ok(x)
    }

    /// Eval-mode forward pass with frozen weights.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(Mode::Eval);
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, x, false)?;
        Ok(tape.value(y).clone())
    }

    /// Overwrites parameter values by name; every parameter must be present
    /// with a matching shape.
    pub fn load_values<'a>(&mut self, values: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
        let mut seen = 0usize;
        for (name, value) in values {
            let p = self
                .params
                .by_name_mut(name)
                .ok_or_else(|| Error::Build(format!("{}: unknown parameter {name:?}", self.name)))?;
            p.set_value(value.clone())
                .map_err(|e| Error::Build(format!("{name}: {e}")))?;
            seen += 1;
        }
        if seen != self.params.len() {
            return Err(Error::Build(format!(
                "{}: expected {} parameters, got {seen}",
                self.name,
                self.params.len()
            )));
        }
        Ok(())
    }
}
