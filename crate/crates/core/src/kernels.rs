//! Raw forward/backward kernels for the layer vocabulary.
//!
//! Convolutions lower to `im2col` + single-threaded `sgemm`, with the batch
//! folded into the GEMM's column dimension. Reductions (means, variances)
//! accumulate in `f64`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `C = A·B (+ C if accumulate)`, with `A` logically `m×k` and `B` logically `k×n`.
///
/// `a_t`/`b_t` mark operands stored transposed (`k×m` / `n×k` row-major).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_t: bool, b: &[f32], b_t: bool, c: &mut [f32], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths checked above; strides describe in-bounds
    // row-major layouts of exactly those lengths.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }
}

/// Unfolds `[B,C,H,W]` into `[C·k·k, B·Ho·Wo]`.
fn im2col(x: &[f32], g: &Geometry) -> Vec<f32> {
    let ncols = g.cols();
    let plane_out = g.out_h * g.out_w;
    let mut cols = vec![0.0f32; g.rows() * ncols];
    for ci in 0..g.channels {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                for bi in 0..g.batch {
                    let src = &x[(bi * g.channels + ci) * g.height * g.width..];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                        let dst = &mut dst_row[bi * plane_out + oy * g.out_w..][..g.out_w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.width as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters `[C·k·k, B·Ho·Wo]` back into `[B,C,H,W]`.
fn col2im(cols: &[f32], g: &Geometry) -> Vec<f32> {
    let ncols = g.cols();
    let plane_out = g.out_h * g.out_w;
    let mut x = vec![0.0f32; g.batch * g.channels * g.height * g.width];
    for ci in 0..g.channels {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for bi in 0..g.batch {
                    let base = (bi * g.channels + ci) * g.height * g.width;
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let dst = &mut x[base + iy as usize * g.width..][..g.width];
                        let src = &src_row[bi * plane_out + oy * g.out_w..][..g.out_w];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.width as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[B, C, P]` → `[C, B·P]`.
fn to_channel_major(x: &[f32], b: usize, c: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for bi in 0..b {
        for ci in 0..c {
            out[ci * b * p + bi * p..][..p].copy_from_slice(&x[(bi * c + ci) * p..][..p]);
        }
    }
    out
}

/// `[C, B·P]` → `[B, C, P]`.
fn from_channel_major(x: &[f32], b: usize, c: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for bi in 0..b {
        for ci in 0..c {
            out[(bi * c + ci) * p..][..p].copy_from_slice(&x[ci * b * p + bi * p..][..p]);
        }
    }
    out
}

fn square_kernel(kernel: &Tensor) -> Result<(usize, usize, usize)> {
    let (k0, k1, kh, kw) = kernel.dims4()?;
    if kh != kw || kh == 0 {
        return Err(Error::Shape(format!(
            "kernel must be square and non-empty, got {}",
            kernel.shape_string()
        )));
    }
    Ok((k0, k1, kh))
}

fn down_geometry(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<(Geometry, usize)> {
    let (b, c, h, w) = input.dims4()?;
    let (c_out, c_in, k) = square_kernel(kernel)?;
    if c_in != c {
        return Err(Error::Shape(format!(
            "conv_down: input {} has {c} channels but kernel {} expects {c_in}",
            input.shape_string(),
            kernel.shape_string()
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("conv_down: stride must be positive".into()));
    }
    let out_dim = |d: usize| -> Result<usize> {
        let padded = d + 2 * pad;
        if padded < k {
            return Err(Error::Shape(format!(
                "conv_down: spatial size {d} with pad {pad} is smaller than kernel {k}"
            )));
        }
        Ok((padded - k) / stride + 1)
    };
    let g = Geometry {
        batch: b,
        channels: c,
        height: h,
        width: w,
        k,
        stride,
        pad,
        out_h: out_dim(h)?,
        out_w: out_dim(w)?,
    };
    Ok((g, c_out))
}

fn up_geometry(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<(Geometry, usize)> {
    let (b, c, h, w) = input.dims4()?;
    let (c_in, c_out, k) = square_kernel(kernel)?;
    if c_in != c {
        return Err(Error::Shape(format!(
            "conv_up: input {} has {c} channels but kernel {} expects {c_in}",
            input.shape_string(),
            kernel.shape_string()
        )));
    }
    if stride == 0 || h == 0 || w == 0 {
        return Err(Error::Shape("conv_up: stride and input size must be positive".into()));
    }
    let out_dim = |d: usize| -> Result<usize> {
        ((d - 1) * stride + k)
            .checked_sub(2 * pad)
            .filter(|&o| o > 0)
            .ok_or_else(|| {
                Error::Shape(format!(
                    "conv_up: spatial size {d} with kernel {k}, stride {stride}, pad {pad} gives an empty output"
                ))
            })
    };
    // Geometry of the matching strided convolution that maps the output back
    // onto the input grid.
    let g = Geometry {
        batch: b,
        channels: c_out,
        height: out_dim(h)?,
        width: out_dim(w)?,
        k,
        stride,
        pad,
        out_h: h,
        out_w: w,
    };
    Ok((g, c_in))
}

/// Strided convolution, kernel `[C_out, C_in, k, k]`, no bias. Output size is
/// `floor((H + 2·pad - k) / stride) + 1`.
pub fn conv_down(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (g, c_out) = down_geometry(input, kernel, stride, pad)?;
    let cols = im2col(input.data(), &g);
    let mut out = vec![0.0f32; c_out * g.cols()];
    gemm(
        c_out,
        g.rows(),
        g.cols(),
        kernel.data(),
        false,
        &cols,
        false,
        &mut out,
        false,
    );
    Tensor::new(
        vec![g.batch, c_out, g.out_h, g.out_w],
        from_channel_major(&out, g.batch, c_out, g.out_h * g.out_w),
    )
}

/// Gradients of [`conv_down`] with respect to input and kernel.
pub fn conv_down_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    want_input: bool,
    want_kernel: bool,
) -> Result<(Option<Tensor>, Option<Tensor>)> {
    let (g, c_out) = down_geometry(input, kernel, stride, pad)?;
    let expected = [g.batch, c_out, g.out_h, g.out_w];
    if grad_out.shape() != expected {
        return Err(Error::Shape(format!(
            "conv_down backward: upstream gradient {} does not match output {:?}",
            grad_out.shape_string(),
            expected
        )));
    }
    let dy = to_channel_major(grad_out.data(), g.batch, c_out, g.out_h * g.out_w);
    let grad_kernel = if want_kernel {
        let cols = im2col(input.data(), &g);
        let mut dk = vec![0.0f32; c_out * g.rows()];
        gemm(c_out, g.cols(), g.rows(), &dy, false, &cols, true, &mut dk, false);
        Some(Tensor::new(kernel.shape().to_vec(), dk)?)
    } else {
        None
    };
    let grad_input = if want_input {
        let mut dcols = vec![0.0f32; g.rows() * g.cols()];
        gemm(
            g.rows(),
            c_out,
            g.cols(),
            kernel.data(),
            true,
            &dy,
            false,
            &mut dcols,
            false,
        );
        Some(Tensor::new(input.shape().to_vec(), col2im(&dcols, &g))?)
    } else {
        None
    };
    Ok((grad_input, grad_kernel))
}

/// Transposed convolution, kernel `[C_in, C_out, k, k]`; the linear adjoint
/// of [`conv_down`] with the same kernel, stride and padding.
pub fn conv_up(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (g, c_in) = up_geometry(input, kernel, stride, pad)?;
    let y = to_channel_major(input.data(), g.batch, c_in, g.out_h * g.out_w);
    let mut cols = vec![0.0f32; g.rows() * g.cols()];
    gemm(
        g.rows(),
        c_in,
        g.cols(),
        kernel.data(),
        true,
        &y,
        false,
        &mut cols,
        false,
    );
    Tensor::new(vec![g.batch, g.channels, g.height, g.width], col2im(&cols, &g))
}

/// Gradients of [`conv_up`] with respect to input and kernel.
pub fn conv_up_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    want_input: bool,
    want_kernel: bool,
) -> Result<(Option<Tensor>, Option<Tensor>)> {
    let (g, c_in) = up_geometry(input, kernel, stride, pad)?;
    let expected = [g.batch, g.channels, g.height, g.width];
    if grad_out.shape() != expected {
        return Err(Error::Shape(format!(
            "conv_up backward: upstream gradient {} does not match output {:?}",
            grad_out.shape_string(),
            expected
        )));
    }
    let dcols = im2col(grad_out.data(), &g);
    let grad_input = if want_input {
        let mut dy = vec![0.0f32; c_in * g.cols()];
        gemm(
            c_in,
            g.rows(),
            g.cols(),
            kernel.data(),
            false,
            &dcols,
            false,
            &mut dy,
            false,
        );
        Some(Tensor::new(
            input.shape().to_vec(),
            from_channel_major(&dy, g.batch, c_in, g.out_h * g.out_w),
        )?)
    } else {
        None
    };
    let grad_kernel = if want_kernel {
        let y = to_channel_major(input.data(), g.batch, c_in, g.out_h * g.out_w);
        let mut dk = vec![0.0f32; c_in * g.rows()];
        gemm(c_in, g.cols(), g.rows(), &y, false, &dcols, true, &mut dk, false);
        Some(Tensor::new(kernel.shape().to_vec(), dk)?)
    } else {
        None
    };
    Ok((grad_input, grad_kernel))
}

/// Saved statistics of an instance-norm forward pass.
#[derive(Clone, Debug)]
pub struct NormCache {
    /// Normalized input `(x - mean) / sqrt(var + eps)`.
    pub normalized: Tensor,
    /// `1 / sqrt(var + eps)` per (batch, channel) plane.
    pub inv_std: Vec<f64>,
}

fn check_norm_args(input: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    let (b, c, h, w) = input.dims4()?;
    if gain.shape() != [c] || bias.shape() != [c] {
        return Err(Error::Shape(format!(
            "instance_norm: gain {} / bias {} must both be [{c}] for input {}",
            gain.shape_string(),
            bias.shape_string(),
            input.shape_string()
        )));
    }
    if h * w < 2 {
        return Err(Error::Shape(format!(
            "instance_norm: plane of {h}x{w} has fewer than 2 values"
        )));
    }
    Ok((b, c, h * w))
}

pub fn instance_norm(input: &Tensor, gain: &Tensor, bias: &Tensor, eps: f32) -> Result<(Tensor, NormCache)> {
    let (b, c, plane) = check_norm_args(input, gain, bias)?;
    let x = input.data();
    let mut normalized = vec![0.0f32; x.len()];
    let mut out = vec![0.0f32; x.len()];
    let mut inv_std = Vec::with_capacity(b * c);
    for bi in 0..b {
        for ci in 0..c {
            let off = (bi * c + ci) * plane;
            let slice = &x[off..off + plane];
            let mean = slice.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
            let var = slice
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / plane as f64;
            let is = 1.0 / (var + eps as f64).sqrt();
            inv_std.push(is);
            let (gn, bs) = (gain.data()[ci], bias.data()[ci]);
            for i in 0..plane {
                let n = ((slice[i] as f64 - mean) * is) as f32;
                normalized[off + i] = n;
                out[off + i] = gn * n + bs;
            }
        }
    }
    let shape = input.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        NormCache {
            normalized: Tensor::new(shape, normalized)?,
            inv_std,
        },
    ))
}

/// Returns `(d_input, d_gain, d_bias)`.
pub fn instance_norm_backward(cache: &NormCache, gain: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, c, h, w) = grad_out.dims4()?;
    let plane = h * w;
    let xhat = cache.normalized.data();
    let dy = grad_out.data();
    let mut dx = vec![0.0f32; dy.len()];
    let mut dgain = vec![0.0f64; c];
    let mut dbias = vec![0.0f64; c];
    for bi in 0..b {
        for ci in 0..c {
            let off = (bi * c + ci) * plane;
            let g = gain.data()[ci] as f64;
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for i in off..off + plane {
                sum_dy += dy[i] as f64;
                sum_dy_xhat += dy[i] as f64 * xhat[i] as f64;
            }
            dgain[ci] += sum_dy_xhat;
            dbias[ci] += sum_dy;
            let is = cache.inv_std[bi * c + ci];
            let n = plane as f64;
            for i in off..off + plane {
                let v = g * is / n * (n * dy[i] as f64 - sum_dy - xhat[i] as f64 * sum_dy_xhat);
                dx[i] = v as f32;
            }
        }
    }
    Ok((
        Tensor::new(grad_out.shape().to_vec(), dx)?,
        Tensor::new(vec![c], dgain.into_iter().map(|v| v as f32).collect())?,
        Tensor::new(vec![c], dbias.into_iter().map(|v| v as f32).collect())?,
    ))
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution.
    fn conv_naive(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (b, c, h, w) = x.dims4().unwrap();
        let (o, _, kk, _) = k.dims4().unwrap();
        let ho = (h + 2 * pad - kk) / stride + 1;
        let wo = (w + 2 * pad - kk) / stride + 1;
        let mut out = vec![0.0f32; b * o * ho * wo];
        for bi in 0..b {
            for oi in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0f64;
                        for ci in 0..c {
                            for ki in 0..kk {
                                for kj in 0..kk {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x.data()[((bi * c + ci) * h + iy as usize) * w + ix as usize] as f64
                                        * k.data()[((oi * c + ci) * kk + ki) * kk + kj] as f64;
                                }
                            }
                        }
                        out[((bi * o + oi) * ho + oy) * wo + ox] = acc as f32;
                    }
                }
            }
        }
        Tensor::new(vec![b, o, ho, wo], out).unwrap()
    }

    #[test]
    fn conv_down_overlap_counts() {
        let x = Tensor::full(vec![1, 1, 4, 4], 1.0);
        let k = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let y = conv_down(&x, &k, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.0, 6.0, 6.0, 9.0]);
    }

    #[test]
    fn conv_down_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(b, c, o, h, k, s, p) in &[(2, 3, 4, 6, 4, 2, 1), (1, 2, 3, 5, 3, 1, 1), (3, 1, 2, 8, 4, 2, 1)] {
            let x = Tensor::randn(vec![b, c, h, h], 1.0, &mut rng);
            let kern = Tensor::randn(vec![o, c, k, k], 1.0, &mut rng);
            let fast = conv_down(&x, &kern, s, p).unwrap();
            let slow = conv_naive(&x, &kern, s, p);
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-5);
        }
    }

    #[test]
    fn conv_down_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(vec![2, 1, 5, 5], 1.0, &mut rng);
        let y = conv_down(&x, &Tensor::full(vec![1, 1, 1, 1], 1.0), 1, 0).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn conv_down_full_size_shape() {
        let x = Tensor::zeros(vec![1, 3, 256, 256]);
        let k = Tensor::zeros(vec![64, 3, 4, 4]);
        assert_eq!(conv_down(&x, &k, 2, 1).unwrap().shape(), &[1, 64, 128, 128]);
    }

    #[test]
    fn conv_down_rejects_bad_shapes() {
        let x = Tensor::zeros(vec![1, 3, 8, 8]);
        let err = conv_down(&x, &Tensor::zeros(vec![4, 2, 4, 4]), 2, 1).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
        let tiny = Tensor::zeros(vec![1, 3, 1, 1]);
        assert!(conv_down(&tiny, &Tensor::zeros(vec![4, 3, 4, 4]), 2, 1).is_err());
    }

    #[test]
    fn conv_up_scatter_counts() {
        let x = Tensor::full(vec![1, 1, 2, 2], 1.0);
        let k = Tensor::full(vec![1, 1, 4, 4], 1.0);
        let y = conv_up(&x, &k, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        // Scatter oracle: each input pixel (i, j) adds 1 to output rows
        // 2i-1..2i+3 and cols 2j-1..2j+3, clipped to the 4x4 grid.
        let mut expect = [0.0f32; 16];
        for i in 0..2isize {
            for j in 0..2isize {
                for r in 2 * i - 1..2 * i + 3 {
                    for c in 2 * j - 1..2 * j + 3 {
                        if (0..4).contains(&r) && (0..4).contains(&c) {
                            expect[(r * 4 + c) as usize] += 1.0;
                        }
                    }
                }
            }
        }
        assert_eq!(y.data(), &expect);
    }

    #[test]
    fn conv_up_doubles_spatial_dims() {
        let x = Tensor::zeros(vec![1, 512, 2, 2]);
        let k = Tensor::zeros(vec![512, 512, 4, 4]);
        assert_eq!(conv_up(&x, &k, 2, 1).unwrap().shape(), &[1, 512, 4, 4]);
        assert!(conv_up(&x, &Tensor::zeros(vec![3, 2, 4, 4]), 2, 1).is_err());
    }

    #[test]
    fn instance_norm_examples() {
        let x = Tensor::full(vec![1, 1, 3, 3], 7.0);
        let (y, _) = instance_norm(&x, &Tensor::full(vec![1], 1.0), &Tensor::zeros(vec![1]), 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let x = Tensor::from_fn(vec![1, 1, 4, 4], |i| if i % 2 == 0 { -1.0 } else { 1.0 });
        let (y, _) = instance_norm(&x, &Tensor::full(vec![1], 1.0), &Tensor::zeros(vec![1]), 1e-5).unwrap();
        let mean = y.mean();
        let var = y.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-3);

        let (y, _) = instance_norm(&x, &Tensor::zeros(vec![1]), &Tensor::full(vec![1], 3.0), 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn instance_norm_rejects_single_pixel_plane() {
        let x = Tensor::zeros(vec![1, 2, 1, 1]);
        assert!(instance_norm(&x, &Tensor::zeros(vec![2]), &Tensor::zeros(vec![2]), 1e-5).is_err());
    }

    #[test]
    fn stable_log_sigmoid_pieces() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-15);
        assert!(softplus(-50.0) > 0.0 && softplus(-50.0) < 1e-20);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
