//! Reverse-mode differentiation over a linear record of executed operations.
//!
//! Every differentiable op appends a node holding its output value and the
//! ids of its inputs. [`Tape::backward`] replays the record once, last node
//! first, accumulating adjoints into the inputs.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{self, NormCache};
use crate::param::Parameter;
use crate::tensor::{Fnv, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// `mean |a - b|`
    L1,
    /// `mean (a - b)^2`
    Squared,
}

/// Target class for the logistic loss on raw scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogTarget {
    /// `mean -log σ(s)`
    Real,
    /// `mean -log(1 - σ(s))`
    Fake,
}

#[derive(Debug)]
enum Op {
    Leaf,
    ConvDown {
        input: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
    },
    ConvUp {
        input: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
    },
    InstanceNorm {
        input: Var,
        gain: Var,
        bias: Var,
        cache: NormCache,
    },
    LeakyRelu {
        input: Var,
        alpha: f32,
    },
    Tanh {
        input: Var,
    },
    Dropout {
        input: Var,
        scale: Vec<f32>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddChannelBias {
        input: Var,
        bias: Var,
    },
    Scale {
        input: Var,
        factor: f32,
    },
    Sum {
        input: Var,
    },
    SpatialMean {
        input: Var,
    },
    PairLoss {
        a: Var,
        b: Var,
        kind: LossKind,
    },
    LogLoss {
        scores: Var,
        target: LogTarget,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

/// The computation record.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    mode: Mode,
    seed: u64,
    step: u64,
    stream_uses: HashMap<String, u64>,
}

/// Adjoints produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: BTreeMap<usize, Tensor>,
    params: Vec<(String, Tensor)>,
}

impl Gradients {
    /// Gradient for a non-parameter leaf created with `requires_grad`.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.leaves.get(&var.0)
    }

    /// `(parameter name, gradient)` for every parameter leaf on the tape, in
    /// tape order. A parameter used twice appears twice.
    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Sum of all gradients recorded for the named parameter.
    pub fn param(&self, name: &str) -> Option<Tensor> {
        let mut acc: Option<Tensor> = None;
        for (n, g) in &self.params {
            if n == name {
                match &mut acc {
                    Some(a) => a.add_assign(g).ok()?,
                    None => acc = Some(g.clone()),
                }
            }
        }
        acc
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Tape {
    pub fn new(mode: Mode) -> Self {
        Self::with_seed(mode, 0, 0)
    }

    /// `seed` and `step` key the dropout streams.
    pub fn with_seed(mode: Mode, seed: u64, step: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            mode,
            seed,
            step,
            stream_uses: HashMap::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf; its gradient is reported under the parameter's name.
    pub fn param(&mut self, param: &Parameter) -> Var {
        let v = self.push(param.value().clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(param.name().to_string());
        v
    }

    /// Constant copy of `var`'s current value; no gradient flows through it.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.nodes[var.0].value.clone();
        self.constant(value)
    }

    pub fn conv_down(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = kernels::conv_down(self.value(input), self.value(kernel), stride, pad)?;
        let rg = self.needs(input) || self.needs(kernel);
        Ok(self.push(
            out,
            Op::ConvDown {
                input,
                kernel,
                stride,
                pad,
            },
            rg,
        ))
    }

    pub fn conv_up(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = kernels::conv_up(self.value(input), self.value(kernel), stride, pad)?;
        let rg = self.needs(input) || self.needs(kernel);
        Ok(self.push(
            out,
            Op::ConvUp {
                input,
                kernel,
                stride,
                pad,
            },
            rg,
        ))
    }

    pub fn instance_norm(&mut self, input: Var, gain: Var, bias: Var, eps: f32) -> Result<Var> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Shape(format!("instance_norm: eps must be positive, got {eps}")));
        }
        let (out, cache) = kernels::instance_norm(self.value(input), self.value(gain), self.value(bias), eps)?;
        let rg = self.needs(input) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            out,
            Op::InstanceNorm {
                input,
                gain,
                bias,
                cache,
            },
            rg,
        ))
    }

    /// `x` if `x >= 0` else `alpha·x`; `alpha = 0` is the plain rectifier.
    pub fn leaky_relu(&mut self, input: Var, alpha: f32) -> Result<Var> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Shape(format!("leaky_relu: alpha {alpha} outside [0, 1)")));
        }
        let out = self.value(input).map(|x| if x >= 0.0 { x } else { alpha * x });
        let rg = self.needs(input);
        Ok(self.push(out, Op::LeakyRelu { input, alpha }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.leaky_relu(input, 0.0)
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        let out = self.value(input).map(f32::tanh);
        let rg = self.needs(input);
        self.push(out, Op::Tanh { input }, rg)
    }

    /// Inverted dropout. The mask is drawn from a stream keyed by
    /// `(tape seed, stream name, step, use count)`; eval mode is the identity.
    pub fn dropout(&mut self, input: Var, rate: f32, stream: &str) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Shape(format!("dropout: rate {rate} outside [0, 1)")));
        }
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(input);
        }
        let uses = self.stream_uses.entry(stream.to_string()).or_insert(0);
        let use_index = *uses;
        *uses += 1;
        let mut h = Fnv::new();
        h.write(stream.as_bytes());
        let key = splitmix64(self.seed ^ splitmix64(h.finish() ^ splitmix64(self.step ^ splitmix64(use_index))));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(input).numel();
        let scale: Vec<f32> = (0..n)
            .map(|_| if rng.random::<f32>() < rate { 0.0 } else { keep })
            .collect();
        let x = self.value(input);
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(&scale).map(|(a, s)| a * s).collect(),
        )?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::Dropout { input, scale }, rg))
    }

    /// Channel-axis concatenation of two `[B,C,H,W]` tensors, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = concat_channels(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Concat { a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    /// Adds a `[C]` bias to every plane of a `[B,C,H,W]` tensor.
    pub fn add_channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let (b, c, h, w) = x.dims4()?;
        let bias_t = self.value(bias);
        if bias_t.shape() != [c] {
            return Err(Error::Shape(format!(
                "bias {} does not match {c} channels",
                bias_t.shape_string()
            )));
        }
        let plane = h * w;
        let mut out = x.clone();
        let bd = bias_t.data().to_vec();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let bv = bd[i % c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        debug_assert_eq!(out.numel(), b * c * plane);
        let rg = self.needs(input) || self.needs(bias);
        Ok(self.push(out, Op::AddChannelBias { input, bias }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: f32) -> Var {
        let out = self.value(input).map(|x| x * factor);
        let rg = self.needs(input);
        self.push(out, Op::Scale { input, factor }, rg)
    }

    /// Sum of all elements as a `[1]` scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum() as f32;
        let rg = self.needs(input);
        self.push(Tensor::scalar(s), Op::Sum { input }, rg)
    }

    /// `[B,C,H,W]` → `[B,C]` mean over the spatial plane.
    pub fn spatial_mean(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (b, c, h, w) = x.dims4()?;
        let plane = h * w;
        let out: Vec<f32> = x
            .data()
            .chunks(plane)
            .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
            .collect();
        let rg = self.needs(input);
        Ok(self.push(Tensor::new(vec![b, c], out)?, Op::SpatialMean { input }, rg))
    }

    /// Mean elementwise L1 or squared difference, as a `[1]` scalar.
    pub fn pair_loss(&mut self, a: Var, b: Var, kind: LossKind) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.expect_same_shape(tb)?;
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                match kind {
                    LossKind::L1 => d.abs(),
                    LossKind::Squared => d * d,
                }
            })
            .sum();
        let mean = s / ta.numel().max(1) as f64;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(mean as f32), Op::PairLoss { a, b, kind }, rg))
    }

    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.pair_loss(a, b, LossKind::L1)
    }

    pub fn squared(&mut self, a: Var, b: Var) -> Result<Var> {
        self.pair_loss(a, b, LossKind::Squared)
    }

    /// Mean logistic loss of raw scores, computed as a softplus so that
    /// `log(0)` never occurs.
    pub fn log_loss(&mut self, scores: Var, target: LogTarget) -> Var {
        let t = self.value(scores);
        let s: f64 = t
            .data()
            .iter()
            .map(|&x| match target {
                LogTarget::Real => kernels::softplus(-(x as f64)),
                LogTarget::Fake => kernels::softplus(x as f64),
            })
            .sum();
        let mean = s / t.numel().max(1) as f64;
        let rg = self.needs(scores);
        self.push(Tensor::scalar(mean as f32), Op::LogLoss { scores, target }, rg)
    }

    /// Gradients of a scalar `loss` with respect to every leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let v = self.value(loss);
        if v.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {}",
                v.shape_string()
            )));
        }
        self.backward_from(loss, Tensor::full(v.shape().to_vec(), 1.0))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`) back
    /// through the record.
    pub fn backward_from(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        self.value(output).expect_same_shape(&seed)?;
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);

        fn acc(grads: &mut [Option<Tensor>], var: Var, g: Tensor) -> Result<()> {
            match &mut grads[var.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::ConvDown {
                    input,
                    kernel,
                    stride,
                    pad,
                } => {
                    let (gi, gk) = kernels::conv_down_backward(
                        self.value(*input),
                        self.value(*kernel),
                        &g,
                        *stride,
                        *pad,
                        self.needs(*input),
                        self.needs(*kernel),
                    )?;
                    if let Some(gi) = gi {
                        acc(&mut grads, *input, gi)?;
                    }
                    if let Some(gk) = gk {
                        acc(&mut grads, *kernel, gk)?;
                    }
                }
                Op::ConvUp {
                    input,
                    kernel,
                    stride,
                    pad,
                } => {
                    let (gi, gk) = kernels::conv_up_backward(
                        self.value(*input),
                        self.value(*kernel),
                        &g,
                        *stride,
                        *pad,
                        self.needs(*input),
                        self.needs(*kernel),
                    )?;
                    if let Some(gi) = gi {
                        acc(&mut grads, *input, gi)?;
                    }
                    if let Some(gk) = gk {
                        acc(&mut grads, *kernel, gk)?;
                    }
                }
                Op::InstanceNorm {
                    input,
                    gain,
                    bias,
                    cache,
                } => {
                    let (gx, gg, gb) = kernels::instance_norm_backward(cache, self.value(*gain), &g)?;
                    if self.needs(*input) {
                        acc(&mut grads, *input, gx)?;
                    }
                    if self.needs(*gain) {
                        acc(&mut grads, *gain, gg)?;
                    }
                    if self.needs(*bias) {
                        acc(&mut grads, *bias, gb)?;
                    }
                }
                Op::LeakyRelu { input, alpha } => {
                    let x = self.value(*input);
                    let a = *alpha;
                    let gx = g.zip_map(x, |gv, xv| if xv >= 0.0 { gv } else { a * gv })?;
                    acc(&mut grads, *input, gx)?;
                }
                Op::Tanh { input } => {
                    let gx = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))?;
                    acc(&mut grads, *input, gx)?;
                }
                Op::Dropout { input, scale } => {
                    let gx = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(scale).map(|(a, s)| a * s).collect(),
                    )?;
                    acc(&mut grads, *input, gx)?;
                }
                Op::Concat { a, b } => {
                    let ca = self.value(*a).shape()[1];
                    let cb = self.value(*b).shape()[1];
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.slice_channels(0..ca)?)?;
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, g.slice_channels(ca..ca + cb)?)?;
                    }
                }
                Op::Add { a, b } => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.clone())?;
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, g)?;
                    }
                }
                Op::AddChannelBias { input, bias } => {
                    if self.needs(*bias) {
                        let (_, c, h, w) = g.dims4()?;
                        let mut gb = vec![0.0f64; c];
                        for (i, chunk) in g.data().chunks(h * w).enumerate() {
                            gb[i % c] += chunk.iter().map(|&v| v as f64).sum::<f64>();
                        }
                        acc(
                            &mut grads,
                            *bias,
                            Tensor::new(vec![c], gb.into_iter().map(|v| v as f32).collect())?,
                        )?;
                    }
                    if self.needs(*input) {
                        acc(&mut grads, *input, g)?;
                    }
                }
                Op::Scale { input, factor } => {
                    let f = *factor;
                    acc(&mut grads, *input, g.map(|v| v * f))?;
                }
                Op::Sum { input } => {
                    let gv = g.data()[0];
                    let shape = self.value(*input).shape().to_vec();
                    acc(&mut grads, *input, Tensor::full(shape, gv))?;
                }
                Op::SpatialMean { input } => {
                    let x = self.value(*input);
                    let (b, c, h, w) = x.dims4()?;
                    let plane = h * w;
                    let inv = 1.0 / plane as f32;
                    let mut gx = vec![0.0f32; b * c * plane];
                    for (i, chunk) in gx.chunks_mut(plane).enumerate() {
                        let v = g.data()[i] * inv;
                        chunk.iter_mut().for_each(|e| *e = v);
                    }
                    acc(&mut grads, *input, Tensor::new(x.shape().to_vec(), gx)?)?;
                }
                Op::PairLoss { a, b, kind } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let scale = g.data()[0] as f64 / ta.numel().max(1) as f64;
                    let ga = ta.zip_map(tb, |x, y| {
                        let d = x as f64 - y as f64;
                        let local = match kind {
                            LossKind::L1 => {
                                if d > 0.0 {
                                    1.0
                                } else if d < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            LossKind::Squared => 2.0 * d,
                        };
                        (local * scale) as f32
                    })?;
                    if self.needs(*b) {
                        acc(&mut grads, *b, ga.map(|v| -v))?;
                    }
                    if self.needs(*a) {
                        acc(&mut grads, *a, ga)?;
                    }
                }
                Op::LogLoss { scores, target } => {
                    let s = self.value(*scores);
                    let scale = g.data()[0] as f64 / s.numel().max(1) as f64;
                    let gs = s.map(|x| {
                        let x = x as f64;
                        let local = match target {
                            // d/dx softplus(-x) = -σ(-x)
                            LogTarget::Real => -kernels::sigmoid(-x),
                            // d/dx softplus(x) = σ(x)
                            LogTarget::Fake => kernels::sigmoid(x),
                        };
                        (local * scale) as f32
                    });
                    acc(&mut grads, *scores, gs)?;
                }
            }
        }

        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate().take(output.0 + 1) {
            if !node.requires_grad || !matches!(node.op, Op::Leaf) {
                continue;
            }
            let g = grads[i]
                .take()
                .unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec()));
            match &node.param {
                Some(name) => out.params.push((name.clone(), g)),
                None => {
                    out.leaves.insert(i, g);
                }
            }
        }
        Ok(out)
    }
}

/// Channel-axis concatenation outside of a tape.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ba, ca, ha, wa) = a.dims4()?;
    let (bb, cb, hb, wb) = b.dims4()?;
    if (ba, ha, wa) != (bb, hb, wb) {
        return Err(Error::Shape(format!(
            "concat_channels: {} and {} differ outside the channel axis",
            a.shape_string(),
            b.shape_string()
        )));
    }
    let plane = ha * wa;
    let mut out = Vec::with_capacity(a.numel() + b.numel());
    for bi in 0..ba {
        out.extend_from_slice(&a.data()[bi * ca * plane..(bi + 1) * ca * plane]);
        out.extend_from_slice(&b.data()[bi * cb * plane..(bi + 1) * cb * plane]);
    }
    Tensor::new(vec![ba, ca + cb, ha, wa], out)
}
