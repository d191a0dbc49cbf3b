//! Shared oracles: a finite-difference gradient checker over the op
//! vocabulary and scalar-loop reference implementations of every loss.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sketchgan::decoder::{lsgan_adv_on, lsgan_d_loss_on, LsganOrientation};
use sketchgan::encoder::{adversarial_losses, cycle_loss, d_loss_on, g_loss_on, GeneratorLoss, Mapping};
use sketchgan::netspec::{NetworkSpec, Role};
use sketchgan::network::{build_network, residual_block, BuildOptions, NetworkInstance};
use sketchgan::tape::{LogTarget, Mode, Tape, Var};
use sketchgan::{Result, Tensor};

pub const FD_STEP: f32 = 1e-3;
pub const GRAD_TOLERANCE: f64 = 1e-3;
pub const LOSS_TOLERANCE: f64 = 1e-6;
const MAX_COORDS: usize = 40;
const TAPE_SEED: u64 = 0x5eed;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f32, hi: f32, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(lo..hi))
}

/// Uniform in `±[lo, hi)`: keeps inputs of piecewise-linear ops off their kink.
pub fn off_zero(shape: &[usize], lo: f32, hi: f32, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = r.random_range(lo..hi);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `||a - b|| / max(||a||, ||b||)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn coords(n: usize, r: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= MAX_COORDS {
        return (0..n).collect();
    }
    rand::seq::index::sample(r, n, MAX_COORDS).into_vec()
}

fn weighted(y: &Tensor, w: &Tensor) -> f64 {
    y.data().iter().zip(w.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Compares the tape gradient of `Σ w·f(inputs)` against central
/// differences on every input (subsampled when large). Every evaluation
/// uses a fresh train-mode tape with the same seed, so dropout masks repeat.
pub fn check_op<F>(inputs: &[Tensor], seed: u64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<Tensor> {
        let mut tape = Tape::with_seed(Mode::Train, TAPE_SEED, 1);
        let vars: Vec<Var> = vals.iter().map(|v| tape.input(v.clone())).collect();
        let y = f(&mut tape, &vars)?;
        Ok(tape.value(y).clone())
    };
    let mut tape = Tape::with_seed(Mode::Train, TAPE_SEED, 1);
    let vars: Vec<Var> = inputs.iter().map(|v| tape.input(v.clone())).collect();
    let y = f(&mut tape, &vars)?;
    let mut r = rng(seed ^ 0xfd);
    let shape = tape.value(y).shape().to_vec();
    let w = if tape.value(y).numel() == 1 {
        Tensor::full(shape, 1.0)
    } else {
        uniform(&shape, -1.0, 1.0, &mut r)
    };
    let grads = tape.backward_from(y, w.clone())?;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (k, var) in vars.iter().enumerate() {
        let g = grads
            .wrt(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape().to_vec()));
        for i in coords(inputs[k].numel(), &mut r) {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            minus[k].data_mut()[i] -= FD_STEP;
            let dx = plus[k].data()[i] as f64 - minus[k].data()[i] as f64;
            let lp = weighted(&eval(&plus)?, &w);
            let lm = weighted(&eval(&minus)?, &w);
            numeric.push((lp - lm) / dx);
            analytic.push(g.data()[i] as f64);
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Outcome of a whole-network check.
#[derive(Clone, Copy, Debug)]
pub struct NetworkCheck {
    pub rel_err: f64,
    pub checked: usize,
    /// Coordinates skipped because the difference quotients at `h` and
    /// `h/2` disagree, i.e. a rectifier kink lies inside the interval.
    pub kinks: usize,
}

/// Central difference at `h` and at `h/2` for one coordinate.
struct Probe {
    wide: f64,
    narrow: f64,
}

impl Probe {
    fn new(eval: impl Fn(f32) -> Result<(f64, f64)>) -> Result<Self> {
        let quotient = |h: f32| -> Result<f64> {
            let (lp, xp) = eval(h)?;
            let (lm, xm) = eval(-h)?;
            Ok((lp - lm) / (xp - xm))
        };
        Ok(Probe {
            wide: quotient(FD_STEP)?,
            narrow: quotient(FD_STEP / 2.0)?,
        })
    }

    fn kinked(&self, scale: f64) -> bool {
        (self.wide - self.narrow).abs() > 3e-4 * scale
    }
}

/// Central-difference check (`h = 1e-3`) of a whole network over its input
/// and its parameters. Coordinates where a rectifier kink falls inside the
/// difference interval are skipped and counted.
pub fn check_network(net: &NetworkInstance, input: &Tensor, seed: u64) -> Result<NetworkCheck> {
    let eval = |n: &NetworkInstance, x: &Tensor| -> Result<Tensor> {
        let mut tape = Tape::with_seed(Mode::Train, TAPE_SEED, 1);
        let xv = tape.input(x.clone());
        let y = n.forward(&mut tape, xv, true)?;
        Ok(tape.value(y).clone())
    };
    let mut tape = Tape::with_seed(Mode::Train, TAPE_SEED, 1);
    let xv = tape.input(input.clone());
    let y = net.forward(&mut tape, xv, true)?;
    let mut r = rng(seed ^ 0xfe);
    let w = uniform(tape.value(y).shape(), -1.0, 1.0, &mut r);
    let grads = tape.backward_from(y, w.clone())?;
    let mut probes = Vec::new();
    let gx = grads.wrt(xv).expect("input gradient").clone();
    for i in coords(input.numel(), &mut r) {
        let probe = Probe::new(|h| {
            let mut p = input.clone();
            p.data_mut()[i] += h;
            let at = p.data()[i] as f64;
            Ok((weighted(&eval(net, &p)?, &w), at))
        })?;
        probes.push((probe, gx.data()[i] as f64));
    }
    let flat: Vec<(String, usize)> = net
        .params()
        .iter()
        .flat_map(|p| (0..p.numel()).map(move |i| (p.name().to_string(), i)))
        .collect();
    for j in coords(flat.len(), &mut r) {
        let (name, i) = &flat[j];
        let base = net.params().by_name(name).unwrap().value().clone();
        let probe = Probe::new(|h| {
            let mut n = net.clone();
            let mut v = base.clone();
            v.data_mut()[*i] += h;
            let at = v.data()[*i] as f64;
            n.params_mut().by_name_mut(name).unwrap().set_value(v)?;
            Ok((weighted(&eval(&n, input)?, &w), at))
        })?;
        let g = grads.param(name).map(|g| g.data()[*i] as f64).unwrap_or(0.0);
        probes.push((probe, g));
    }
    let scale = probes.iter().map(|(_, g)| g * g).sum::<f64>().sqrt();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let mut kinks = 0;
    for (p, g) in probes {
        if p.kinked(scale) {
            kinks += 1;
        } else {
            numeric.push(p.wide);
            analytic.push(g);
        }
    }
    Ok(NetworkCheck {
        rel_err: relative_error(&analytic, &numeric),
        checked: numeric.len(),
        kinks,
    })
}

#[derive(Clone, Debug)]
pub struct OpReport {
    pub op: &'static str,
    pub checks: usize,
    pub worst: f64,
}

type Maker = fn(&[usize], &mut ChaCha8Rng) -> Vec<Tensor>;
type Body = fn(&mut Tape, &[Var]) -> Result<Var>;

struct OpCase {
    op: &'static str,
    shapes: [&'static [usize]; 3],
    make: Maker,
    body: Body,
}

fn one(s: &[usize], r: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![uniform(s, -1.0, 1.0, r)]
}

fn one_off_zero(s: &[usize], r: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![off_zero(s, 0.05, 1.0, r)]
}

fn two(s: &[usize], r: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![uniform(s, -1.0, 1.0, r), uniform(s, -1.0, 1.0, r)]
}

/// Pairs whose elementwise difference stays off zero.
fn two_apart(s: &[usize], r: &mut ChaCha8Rng) -> Vec<Tensor> {
    let a = uniform(s, -0.5, 0.5, r);
    let d = off_zero(s, 0.05, 0.5, r);
    let b = a.zip_map(&d, |x, y| x + y).unwrap();
    vec![a, b]
}

// conv shapes: [B, C_in, H, C_out]
fn conv_down_inputs(s: &[usize], r: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![
        uniform(&[s[0], s[1], s[2], s[2]], -1.0, 1.0, r),
        uniform(&[s[3], s[1], 4, 4], -0.5, 0.5, r),
    ]
}

fn conv3_inputs(s: &[usize], r: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![
        uniform(&[s[0], s[1], s[2], s[2]], -1.0, 1.0, r),
        uniform(&[s[3], s[1], 3, 3], -0.5, 0.5, r),
    ]
}

fn conv_up_inputs(s: &[usize], r: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![
        uniform(&[s[0], s[1], s[2], s[2]], -1.0, 1.0, r),
        uniform(&[s[1], s[3], 4, 4], -0.5, 0.5, r),
    ]
}

fn norm_inputs(s: &[usize], r: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![
        uniform(s, -1.0, 1.0, r),
        uniform(&[s[1]], 0.5, 1.5, r),
        uniform(&[s[1]], -0.5, 0.5, r),
    ]
}

// concat shapes: [B, C1, C2, H]
fn concat_inputs(s: &[usize], r: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![
        uniform(&[s[0], s[1], s[3], s[3]], -1.0, 1.0, r),
        uniform(&[s[0], s[2], s[3], s[3]], -1.0, 1.0, r),
    ]
}

fn bias_inputs(s: &[usize], r: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![uniform(s, -1.0, 1.0, r), uniform(&[s[1]], -1.0, 1.0, r)]
}

// residual shapes: [B, C, H]
fn residual_inputs(s: &[usize], r: &mut ChaCha8Rng) -> Vec<Tensor> {
    let c = s[1];
    loop {
        let inputs = vec![
            uniform(&[s[0], c, s[2], s[2]], -1.0, 1.0, r),
            uniform(&[c, c, 3, 3], -0.5, 0.5, r),
            uniform(&[c], 0.5, 1.5, r),
            uniform(&[c], -0.5, 0.5, r),
            uniform(&[c, c, 3, 3], -0.5, 0.5, r),
            uniform(&[c], 0.5, 1.5, r),
            uniform(&[c], -0.5, 0.5, r),
        ];
        // resample until the inner rectifier's inputs sit off its kink
        let mut tape = Tape::new(Mode::Eval);
        let v: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let h = tape.conv_down(v[0], v[1], 1, 1).unwrap();
        let h = tape.instance_norm(h, v[2], v[3], 1e-5).unwrap();
        if tape.value(h).data().iter().all(|z| z.abs() > 0.02) {
            return inputs;
        }
    }
}

fn cases() -> Vec<OpCase> {
    vec![
        OpCase {
            op: "conv_down",
            shapes: [&[1, 1, 4, 2], &[2, 3, 8, 4], &[1, 2, 6, 3]],
            make: conv_down_inputs,
            body: |t, v| t.conv_down(v[0], v[1], 2, 1),
        },
        OpCase {
            op: "conv_down_3x3",
            shapes: [&[1, 1, 3, 1], &[2, 2, 4, 3], &[1, 3, 5, 2]],
            make: conv3_inputs,
            body: |t, v| t.conv_down(v[0], v[1], 1, 1),
        },
        OpCase {
            op: "conv_up",
            shapes: [&[1, 1, 2, 2], &[2, 3, 4, 2], &[1, 4, 3, 3]],
            make: conv_up_inputs,
            body: |t, v| t.conv_up(v[0], v[1], 2, 1),
        },
        OpCase {
            op: "instance_norm",
            shapes: [&[1, 1, 2, 2], &[2, 3, 4, 4], &[1, 2, 3, 3]],
            make: norm_inputs,
            body: |t, v| t.instance_norm(v[0], v[1], v[2], 1e-5),
        },
        OpCase {
            op: "leaky_relu",
            shapes: [&[1, 1, 3, 3], &[2, 3, 4, 4], &[3, 2, 2, 2]],
            make: one_off_zero,
            body: |t, v| t.leaky_relu(v[0], 0.2),
        },
        OpCase {
            op: "relu",
            shapes: [&[1, 1, 3, 3], &[2, 3, 4, 4], &[3, 2, 2, 2]],
            make: one_off_zero,
            body: |t, v| t.relu(v[0]),
        },
        OpCase {
            op: "tanh",
            shapes: [&[1, 1, 3, 3], &[2, 3, 4, 4], &[3, 2, 2, 2]],
            make: |s, r| vec![uniform(s, -2.0, 2.0, r)],
            body: |t, v| Ok(t.tanh(v[0])),
        },
        OpCase {
            op: "dropout",
            shapes: [&[1, 1, 3, 3], &[2, 3, 4, 4], &[3, 2, 2, 2]],
            make: one,
            body: |t, v| t.dropout(v[0], 0.5, "check"),
        },
        OpCase {
            op: "concat_channels",
            shapes: [&[1, 1, 1, 2], &[2, 2, 3, 3], &[1, 3, 1, 4]],
            make: concat_inputs,
            body: |t, v| t.concat_channels(v[0], v[1]),
        },
        OpCase {
            op: "add",
            shapes: [&[1, 1, 2, 2], &[2, 3, 3, 3], &[4, 2]],
            make: two,
            body: |t, v| t.add(v[0], v[1]),
        },
        OpCase {
            op: "add_channel_bias",
            shapes: [&[1, 1, 2, 2], &[2, 3, 3, 3], &[1, 4, 1, 1]],
            make: bias_inputs,
            body: |t, v| t.add_channel_bias(v[0], v[1]),
        },
        OpCase {
            op: "scale",
            shapes: [&[1], &[2, 3, 3, 3], &[4, 2]],
            make: one,
            body: |t, v| Ok(t.scale(v[0], -0.7)),
        },
        OpCase {
            op: "sum",
            shapes: [&[1], &[2, 2, 2, 2], &[3, 4]],
            make: one,
            body: |t, v| Ok(t.sum(v[0])),
        },
        OpCase {
            op: "spatial_mean",
            shapes: [&[1, 1, 1, 1], &[2, 3, 4, 4], &[1, 2, 3, 3]],
            make: one,
            body: |t, v| t.spatial_mean(v[0]),
        },
        OpCase {
            op: "l1",
            shapes: [&[1], &[2, 1, 2, 2], &[3, 4]],
            make: two_apart,
            body: |t, v| t.l1(v[0], v[1]),
        },
        OpCase {
            op: "squared",
            shapes: [&[1], &[2, 1, 2, 2], &[3, 4]],
            make: two,
            body: |t, v| t.squared(v[0], v[1]),
        },
        OpCase {
            op: "log_loss_real",
            shapes: [&[1, 1], &[4, 1], &[3, 2]],
            make: |s, r| vec![uniform(s, -3.0, 3.0, r)],
            body: |t, v| Ok(t.log_loss(v[0], LogTarget::Real)),
        },
        OpCase {
            op: "log_loss_fake",
            shapes: [&[1, 1], &[4, 1], &[3, 2]],
            make: |s, r| vec![uniform(s, -3.0, 3.0, r)],
            body: |t, v| Ok(t.log_loss(v[0], LogTarget::Fake)),
        },
        OpCase {
            op: "residual_block",
            shapes: [&[1, 1, 3], &[2, 2, 4], &[1, 3, 3]],
            make: residual_inputs,
            body: |t, v| residual_block(t, v[0], v[1], Some((v[2], v[3])), v[4], Some((v[5], v[6])), 1e-5),
        },
    ]
}

pub fn network_cases() -> [(&'static str, &'static str, Role, usize, usize); 3] {
    [
        ("generator", "D4-D8-U4-U3", Role::Generator, 3, 8),
        ("generator_residual", "D4-D4-R4-U4-U2", Role::Generator, 2, 8),
        ("discriminator", "D4-D8", Role::Discriminator, 3, 16),
    ]
}

/// Runs every op over three shapes and `seeds` seeds each.
pub fn gradient_suite(seeds: u64) -> Result<Vec<OpReport>> {
    let mut out = Vec::new();
    for case in cases() {
        let mut worst = 0f64;
        let mut checks = 0;
        for shape in case.shapes {
            for s in 0..seeds {
                let mut r = rng(s * 7919 + shape.iter().product::<usize>() as u64);
                let inputs = (case.make)(shape, &mut r);
                let err = check_op(&inputs, s, case.body)?;
                worst = worst.max(err);
                checks += 1;
            }
        }
        out.push(OpReport {
            op: case.op,
            checks,
            worst,
        });
    }
    Ok(out)
}

/// Whole small networks: `(name, worst error, checked coords, kinks)`.
pub fn network_suite(seeds: u64) -> Result<Vec<(&'static str, f64, usize, usize)>> {
    let mut out = Vec::new();
    for (op, arch, role, c, size) in network_cases() {
        let spec = NetworkSpec::parse(arch, role, c, size)?;
        let options = BuildOptions {
            init_std: 0.3,
            ..BuildOptions::default()
        };
        let (mut worst, mut checked, mut kinks) = (0f64, 0, 0);
        for s in 0..seeds {
            let net = build_network(&spec, op, options, s)?;
            let mut r = rng(s + 101);
            let x = uniform(&[2, c, size, size], -1.0, 1.0, &mut r);
            let res = check_network(&net, &x, s)?;
            worst = worst.max(res.rel_err);
            checked += res.checked;
            kinks += res.kinks;
        }
        out.push((op, worst, checked, kinks));
    }
    Ok(out)
}

// ---- loss oracles -------------------------------------------------------

/// Returns its input, so raw score tensors can stand in for a discriminator.
pub struct Scores;

impl Mapping for Scores {
    fn apply(&self, _tape: &mut Tape, x: Var, _trainable: bool) -> Result<Var> {
        Ok(x)
    }
}

pub fn oracle_l1(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] as f64 - b[i] as f64).abs();
    }
    s / a.len() as f64
}

pub fn oracle_sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// `(-mean ln D(real) - mean ln(1 - D(fake)), -mean ln D(fake))` with `D = σ(score)`.
pub fn oracle_adversarial(real: &[f32], fake: &[f32]) -> (f64, f64) {
    let mut dr = 0.0;
    for &s in real {
        dr -= oracle_sigmoid(s as f64).ln();
    }
    let mut df = 0.0;
    let mut g = 0.0;
    for &s in fake {
        df -= (1.0 - oracle_sigmoid(s as f64)).ln();
        g -= oracle_sigmoid(s as f64).ln();
    }
    (dr / real.len() as f64 + df / fake.len() as f64, g / fake.len() as f64)
}

/// `(d_loss, g_adv)` of the least-squares objective with real target `t` and
/// fake target `1 - t`.
pub fn oracle_lsgan(real: &[f32], fake: &[f32], real_target: f64) -> (f64, f64) {
    let fake_target = 1.0 - real_target;
    let mut a = 0.0;
    for &s in real {
        a += (s as f64 - real_target).powi(2);
    }
    let mut b = 0.0;
    let mut g = 0.0;
    for &s in fake {
        b += (s as f64 - fake_target).powi(2);
        g += (s as f64 - real_target).powi(2);
    }
    (a / real.len() as f64 + b / fake.len() as f64, g / fake.len() as f64)
}

/// Cycle reconstruction error composed from the networks' own forward
/// passes, summed element by element.
pub fn oracle_cycle(g: &NetworkInstance, f: &NetworkInstance, x: &Tensor, y: &Tensor) -> Result<f64> {
    let rec_x = f.infer(&g.infer(x)?)?;
    let rec_y = g.infer(&f.infer(y)?)?;
    Ok(oracle_l1(rec_x.data(), x.data()) + oracle_l1(rec_y.data(), y.data()))
}

#[derive(Clone, Debug)]
pub struct LossReport {
    pub loss: &'static str,
    pub cases: usize,
    pub worst: f64,
}

/// `|got - want| / max(1, |want|)`: absolute for small losses, relative
/// once the f32 result itself carries more than 1e-6 of rounding.
pub fn loss_error(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

fn scalar(tape: &Tape, v: Var) -> f64 {
    tape.value(v).data()[0] as f64
}

/// Library losses against the loop oracles over `cases` random draws each.
pub fn loss_suite(cases: u64) -> Result<Vec<LossReport>> {
    let mut l1_worst = 0f64;
    let mut adv_worst = 0f64;
    let mut lsgan_worst = 0f64;
    let mut lsgan_lit_worst = 0f64;
    let mut cyc_worst = 0f64;
    for c in 0..cases {
        let mut r = rng(1000 + c);
        let n = r.random_range(1..40usize);
        let a = uniform(&[n], -2.0, 2.0, &mut r);
        let b = uniform(&[n], -2.0, 2.0, &mut r);
        let mut tape = Tape::new(Mode::Eval);
        let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let l = tape.l1(av, bv)?;
        l1_worst = l1_worst.max(loss_error(scalar(&tape, l), oracle_l1(a.data(), b.data())));

        let batch = r.random_range(1..9usize);
        let real = uniform(&[batch, 1], -6.0, 6.0, &mut r);
        let fake = uniform(&[batch, 1], -6.0, 6.0, &mut r);
        let (d, g) = adversarial_losses(&Scores, &real, &fake)?;
        let (od, og) = oracle_adversarial(real.data(), fake.data());
        adv_worst = adv_worst.max(loss_error(d, od)).max(loss_error(g, og));
        let mut tape = Tape::new(Mode::Eval);
        let f = tape.constant(fake.clone());
        let lit = g_loss_on(&mut tape, f, GeneratorLoss::Literal);
        let mut lit_oracle = 0.0;
        for &s in fake.data() {
            lit_oracle += (1.0 - oracle_sigmoid(s as f64)).ln();
        }
        adv_worst = adv_worst.max(loss_error(scalar(&tape, lit), lit_oracle / batch as f64));

        for (orientation, target) in [(LsganOrientation::Conventional, 1.0), (LsganOrientation::Literal, 0.0)] {
            let mut tape = Tape::new(Mode::Eval);
            let rv = tape.constant(real.clone());
            let fv = tape.constant(fake.clone());
            let dl = lsgan_d_loss_on(&mut tape, rv, fv, orientation)?;
            let gl = lsgan_adv_on(&mut tape, fv, orientation)?;
            let (od, og) = oracle_lsgan(real.data(), fake.data(), target);
            let err = loss_error(scalar(&tape, dl), od).max(loss_error(scalar(&tape, gl), og));
            match orientation {
                LsganOrientation::Conventional => lsgan_worst = lsgan_worst.max(err),
                LsganOrientation::Literal => lsgan_lit_worst = lsgan_lit_worst.max(err),
            }
        }
        let mut tape = Tape::new(Mode::Eval);
        let rv = tape.constant(real.clone());
        let fv = tape.constant(fake.clone());
        let dl = d_loss_on(&mut tape, rv, fv)?;
        let (od, _) = oracle_adversarial(real.data(), fake.data());
        adv_worst = adv_worst.max(loss_error(scalar(&tape, dl), od));
    }
    let spec = NetworkSpec::parse("D4-D8-U4-U1", Role::Generator, 1, 8)?;
    let options = BuildOptions {
        init_std: 0.3,
        ..BuildOptions::default()
    };
    for c in 0..cases {
        let g = build_network(&spec, "G", options, 2 * c)?;
        let f = build_network(&spec, "F", options, 2 * c + 1)?;
        let mut r = rng(5000 + c);
        let batch = r.random_range(1..4usize);
        let x = uniform(&[batch, 1, 8, 8], -1.0, 1.0, &mut r);
        let y = uniform(&[batch, 1, 8, 8], -1.0, 1.0, &mut r);
        let got = cycle_loss(&g, &f, &x, &y)?;
        cyc_worst = cyc_worst.max(loss_error(got, oracle_cycle(&g, &f, &x, &y)?));
    }
    Ok(vec![
        LossReport {
            loss: "l1",
            cases: cases as usize,
            worst: l1_worst,
        },
        LossReport {
            loss: "adversarial_log",
            cases: cases as usize,
            worst: adv_worst,
        },
        LossReport {
            loss: "lsgan_conventional",
            cases: cases as usize,
            worst: lsgan_worst,
        },
        LossReport {
            loss: "lsgan_literal",
            cases: cases as usize,
            worst: lsgan_lit_worst,
        },
        LossReport {
            loss: "cycle",
            cases: cases as usize,
            worst: cyc_worst,
        },
    ])
}
