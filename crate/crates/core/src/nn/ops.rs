//! Layer primitives on `[H, W, C]` activations.
//!
//! Backward passes are written as gathers over the input so that each input
//! element is produced by exactly one worker and a fixed summation order.

use super::descriptor::{window_output, PoolMode};
use crate::{Error, Exec, Result, Scalar, Tensor};

fn hwc<T: Scalar>(x: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *x.dims() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::shape(op, &[0, 0, 0], x.dims())),
    }
}

/// 2-D convolution (cross-correlation) with zero padding.
///
/// Each output element is `Σ_{ky, kx, ci} x · k` accumulated in that loop
/// order starting from zero, then plus the bias.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    kernel: Tensor<T>,
    bias: Tensor<T>,
    // [kh, kw, in, out]
    packed: Vec<T>,
    stride: usize,
    padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(kernel: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let [co, ci, kh, kw] = match *kernel.dims() {
            [a, b, c, d] => [a, b, c, d],
            _ => return Err(Error::shape("conv kernel", &[0, 0, 0, 0], kernel.dims())),
        };
        if bias.dims() != [co] {
            return Err(Error::shape("conv bias", &[co], bias.dims()));
        }
        if stride == 0 {
            return Err(Error::Network("conv stride must be >= 1".into()));
        }
        let k = kernel.as_slice();
        let mut packed = vec![T::zero(); k.len()];
        for o in 0..co {
            for i in 0..ci {
                for y in 0..kh {
                    for x in 0..kw {
                        packed[((y * kw + x) * ci + i) * co + o] = k[((o * ci + i) * kh + y) * kw + x];
                    }
                }
            }
        }
        Ok(Conv2d {
            kernel,
            bias,
            packed,
            stride,
            padding,
        })
    }

    pub fn kernel(&self) -> &Tensor<T> {
        &self.kernel
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    fn dims(&self) -> [usize; 4] {
        let d = self.kernel.dims();
        [d[0], d[1], d[2], d[3]]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let [_, _, kh, kw] = self.dims();
        match (
            window_output(h, self.padding, kh, self.stride),
            window_output(w, self.padding, kw, self.stride),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::Inconsistent(format!(
                "conv {kh}x{kw} stride {} pad {} does not tile a {h}x{w} input",
                self.stride, self.padding
            ))),
        }
    }

    pub fn forward(&self, input: &Tensor<T>, exec: Exec) -> Result<Tensor<T>> {
        let (h, w, c) = hwc(input, "conv2d_forward")?;
        let [co, ci, kh, kw] = self.dims();
        if c != ci {
            return Err(Error::shape("conv2d_forward", &[h, w, ci], input.dims()));
        }
        let (oh, ow) = self.output_hw(h, w)?;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let x = input.as_slice();
        let bias = self.bias.as_slice();
        let packed = &self.packed;
        let mut out = vec![T::zero(); oh * ow * co];
        exec.for_each_chunk(&mut out, ow * co, |oy, row| {
            for ox in 0..ow {
                let acc = &mut row[ox * co..(ox + 1) * co];
                for ky in 0..kh {
                    let iy = oy as isize * s + ky as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = ox as isize * s + kx as isize - p;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let px = &x[(iy as usize * w + ix as usize) * ci..][..ci];
                        let kbase = (ky * kw + kx) * ci;
                        for (i, &xv) in px.iter().enumerate() {
                            let krow = &packed[(kbase + i) * co..][..co];
                            for (a, &kv) in acc.iter_mut().zip(krow) {
                                *a = *a + xv * kv;
                            }
                        }
                    }
                }
                for (a, &b) in acc.iter_mut().zip(bias) {
                    *a = *a + b;
                }
            }
        });
        Tensor::from_vec(&[oh, ow, co], out)
    }

    /// Adjoint of [`Conv2d::forward`] with respect to its input, for an
    /// input of spatial size `h × w`.
    pub fn backward_input(&self, grad_out: &Tensor<T>, h: usize, w: usize, exec: Exec) -> Result<Tensor<T>> {
        let [co, ci, kh, kw] = self.dims();
        let (oh, ow) = self.output_hw(h, w)?;
        if grad_out.dims() != [oh, ow, co] {
            return Err(Error::shape("conv2d_backward_input", &[oh, ow, co], grad_out.dims()));
        }
        let (s, p) = (self.stride, self.padding);
        let g = grad_out.as_slice();
        let packed = &self.packed;
        let mut out = vec![T::zero(); h * w * ci];
        exec.for_each_chunk(&mut out, w * ci, |iy, row| {
            for ix in 0..w {
                let acc = &mut row[ix * ci..(ix + 1) * ci];
                for ky in 0..kh {
                    // oy * s + ky - p == iy
                    let Some(ny) = (iy + p).checked_sub(ky) else { continue };
                    if ny % s != 0 || ny / s >= oh {
                        continue;
                    }
                    let oy = ny / s;
                    for kx in 0..kw {
                        let Some(nx) = (ix + p).checked_sub(kx) else { continue };
                        if nx % s != 0 || nx / s >= ow {
                            continue;
                        }
                        let ox = nx / s;
                        let grow = &g[(oy * ow + ox) * co..][..co];
                        let kbase = (ky * kw + kx) * ci;
                        for (i, a) in acc.iter_mut().enumerate() {
                            let krow = &packed[(kbase + i) * co..][..co];
                            *a = *a + crate::tensor::dot(grow, krow);
                        }
                    }
                }
            }
        });
        Tensor::from_vec(&[h, w, ci], out)
    }
}

/// Stand-alone convolution on `[H, W, C_in]` with kernel `[C_out, C_in, kh, kw]`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    Conv2d::new(kernel.clone(), bias.clone(), stride, padding)?.forward(input, Exec::default())
}

/// Input gradient of [`conv2d_forward`]; `input_hw` is the forward input's spatial size.
pub fn conv2d_backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
    input_hw: (usize, usize),
) -> Result<Tensor<T>> {
    let co = kernel.dims().first().copied().unwrap_or(0);
    let bias = Tensor::zeros(&[co.max(1)])?;
    Conv2d::new(kernel.clone(), bias, stride, padding)?.backward_input(
        grad_out,
        input_hw.0,
        input_hw.1,
        Exec::default(),
    )
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where the forward input was strictly positive; the
/// subgradient at exactly zero is zero.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.dims() != x.dims() {
        return Err(Error::shape("relu_backward", x.dims(), grad_out.dims()));
    }
    let data = grad_out
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.dims(), data)
}

/// What [`pool_backward`] needs from the forward pass.
#[derive(Debug, Clone)]
pub struct PoolCache {
    mode: PoolMode,
    window: usize,
    stride: usize,
    input_dims: [usize; 3],
    // flat input index of each output's maximum (max mode only)
    argmax: Vec<usize>,
}

pub fn pool_forward<T: Scalar>(
    x: &Tensor<T>,
    mode: PoolMode,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, PoolCache)> {
    let (h, w, c) = hwc(x, "pool_forward")?;
    if window == 0 || stride == 0 {
        return Err(Error::Network("pool window and stride must be >= 1".into()));
    }
    let (oh, ow) = match (window_output(h, 0, window, stride), window_output(w, 0, window, stride)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Inconsistent(format!(
                "pool {window}x{window} stride {stride} does not tile a {h}x{w} input"
            )))
        }
    };
    let xs = x.as_slice();
    let n = oh * ow * c;
    let mut out = Vec::with_capacity(n);
    let mut argmax = Vec::with_capacity(if mode == PoolMode::Max { n } else { 0 });
    let inv = T::from_f64(1.0 / (window * window) as f64);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let at = |dy: usize, dx: usize| ((oy * stride + dy) * w + ox * stride + dx) * c + ch;
                match mode {
                    PoolMode::Max => {
                        let mut best = at(0, 0);
                        for dy in 0..window {
                            for dx in 0..window {
                                // strict > keeps the first maximum in row-major order
                                if xs[at(dy, dx)] > xs[best] {
                                    best = at(dy, dx);
                                }
                            }
                        }
                        out.push(xs[best]);
                        argmax.push(best);
                    }
                    PoolMode::Avg => {
                        let mut sum = T::zero();
                        for dy in 0..window {
                            for dx in 0..window {
                                sum = sum + xs[at(dy, dx)];
                            }
                        }
                        out.push(sum * inv);
                    }
                }
            }
        }
    }
    let cache = PoolCache {
        mode,
        window,
        stride,
        input_dims: [h, w, c],
        argmax,
    };
    Ok((Tensor::from_vec(&[oh, ow, c], out)?, cache))
}

pub fn pool_backward<T: Scalar>(grad_out: &Tensor<T>, cache: &PoolCache) -> Result<Tensor<T>> {
    let [h, w, c] = cache.input_dims;
    let (win, s) = (cache.window, cache.stride);
    let (oh, ow) = ((h - win) / s + 1, (w - win) / s + 1);
    if grad_out.dims() != [oh, ow, c] {
        return Err(Error::shape("pool_backward", &[oh, ow, c], grad_out.dims()));
    }
    let g = grad_out.as_slice();
    let mut out = vec![T::zero(); h * w * c];
    match cache.mode {
        PoolMode::Max => {
            for (&idx, &gv) in cache.argmax.iter().zip(g) {
                out[idx] = out[idx] + gv;
            }
        }
        PoolMode::Avg => {
            let inv = T::from_f64(1.0 / (win * win) as f64);
            // outputs whose window covers input row iy: oy*s <= iy < oy*s + win
            let covering = |i: usize, n: usize| {
                let lo = (i + 1).saturating_sub(win).div_ceil(s);
                let hi = (i / s).min(n - 1);
                lo..=hi
            };
            for iy in 0..h {
                for ix in 0..w {
                    for ch in 0..c {
                        let mut acc = T::zero();
                        for oy in covering(iy, oh) {
                            for ox in covering(ix, ow) {
                                acc = acc + g[(oy * ow + ox) * c + ch];
                            }
                        }
                        out[(iy * w + ix) * c + ch] = acc * inv;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[h, w, c], out)
}
