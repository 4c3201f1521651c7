//! Minimal CPU layers with hand-written backward passes.
//!
//! Every model keeps all of its parameters in one flat `Vec<f64>`; layers
//! only know the ranges they own. Gradients use a flat vector of the same
//! length, which keeps the optimizer, freezing, checksums and serialization
//! trivial.

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;

/// Negative-side slope of the leaky ReLU used between layers.
pub(crate) const LEAK: f64 = 0.1;

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;

#[inline]
pub(crate) fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAK * v
    }
}

#[inline]
pub(crate) fn leaky_grad(pre: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        LEAK
    }
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^v)` without overflow.
#[inline]
pub(crate) fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn view(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("buffer sized for view")
}

fn view_mut(data: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("buffer sized for view")
}

/// Output size of a 3x3, stride-2, pad-1 convolution.
pub(crate) fn conv_out(n: usize) -> usize {
    (n + 2 * PAD - KERNEL) / STRIDE + 1
}

/// Geometry of a 3x3 / stride 2 / pad 1 window over a `c x h x w` tensor.
#[derive(Debug, Clone, Copy)]
struct Patches {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl Patches {
    fn new(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            oh: conv_out(h),
            ow: conv_out(w),
        }
    }

    fn rows(&self) -> usize {
        self.c * KERNEL * KERNEL
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds `x` into a `(c*9) x (oh*ow)` column matrix.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let p = self.cols();
        let mut col = vec![0.0; self.rows() * p];
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = &mut col[((c * KERNEL + ky) * KERNEL + kx) * p..][..p];
                    for oy in 0..self.oh {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let dst = &mut row[oy * self.ow..(oy + 1) * self.ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            if ix >= 0 && ix < self.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    /// Adjoint of [`Patches::im2col`]: scatters columns back, summing overlaps.
    fn col2im(&self, col: &[f64]) -> Vec<f64> {
        let p = self.cols();
        let mut x = vec![0.0; self.c * self.h * self.w];
        for c in 0..self.c {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = &col[((c * KERNEL + ky) * KERNEL + kx) * p..][..p];
                    for oy in 0..self.oh {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let src = &row[oy * self.ow..(oy + 1) * self.ow];
                        for (ox, s) in src.iter().enumerate() {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

/// Lays out consecutive parameter ranges.
#[derive(Debug, Default)]
pub(crate) struct Allocator {
    next: usize,
}

impl Allocator {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.next..self.next + n;
        self.next += n;
        r
    }

    pub(crate) fn end(&self) -> usize {
        self.next
    }
}

fn init_uniform<R: Rng>(params: &mut [f64], bound: f64, rng: &mut R) {
    for p in params {
        *p = rng.random_range(-bound..bound);
    }
}

/// Strided 3x3 convolution: `in_c x h x w -> out_c x h/2 x w/2`.
#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    pub out_c: usize,
    patches: Patches,
    weight: Range<usize>,
    bias: Range<usize>,
}

impl Conv2d {
    pub(crate) fn new(in_c: usize, out_c: usize, h: usize, w: usize, alloc: &mut Allocator) -> Self {
        let patches = Patches::new(in_c, h, w);
        Self {
            out_c,
            weight: alloc.take(out_c * patches.rows()),
            bias: alloc.take(out_c),
            patches,
        }
    }

    pub(crate) fn out_shape(&self) -> (usize, usize, usize) {
        (self.out_c, self.patches.oh, self.patches.ow)
    }

    pub(crate) fn init<R: Rng>(&self, params: &mut [f64], rng: &mut R) {
        let bound = (6.0 / self.patches.rows() as f64).sqrt();
        init_uniform(&mut params[self.weight.clone()], bound, rng);
        params[self.bias.clone()].fill(0.0);
    }

    /// Returns `(columns, output)`; the columns are kept for the backward pass.
    pub(crate) fn forward(&self, params: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let col = self.patches.im2col(x);
        let p = self.patches.cols();
        let mut y = vec![0.0; self.out_c * p];
        for (o, chunk) in y.chunks_mut(p).enumerate() {
            chunk.fill(params[self.bias.start + o]);
        }
        general_mat_mul(
            1.0,
            &view(&params[self.weight.clone()], self.out_c, self.patches.rows()),
            &view(&col, self.patches.rows(), p),
            1.0,
            &mut view_mut(&mut y, self.out_c, p),
        );
        (col, y)
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub(crate) fn backward(
        &self,
        params: &[f64],
        col: &[f64],
        dy: &[f64],
        grads: &mut [f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let p = self.patches.cols();
        let r = self.patches.rows();
        let dy_v = view(dy, self.out_c, p);
        general_mat_mul(
            1.0,
            &dy_v,
            &view(col, r, p).t(),
            1.0,
            &mut view_mut(&mut grads[self.weight.clone()], self.out_c, r),
        );
        for (o, chunk) in dy.chunks(p).enumerate() {
            grads[self.bias.start + o] += chunk.iter().sum::<f64>();
        }
        if !want_dx {
            return None;
        }
        let mut dcol = vec![0.0; r * p];
        general_mat_mul(
            1.0,
            &view(&params[self.weight.clone()], self.out_c, r).t(),
            &dy_v,
            0.0,
            &mut view_mut(&mut dcol, r, p),
        );
        Some(self.patches.col2im(&dcol))
    }
}

/// Strided 3x3 transposed convolution: `in_c x h x w -> out_c x 2h x 2w`.
/// Implemented as the adjoint of a [`Conv2d`] from the larger shape.
#[derive(Debug, Clone)]
pub(crate) struct ConvTranspose2d {
    pub in_c: usize,
    /// geometry of the adjoint convolution (over the output tensor)
    patches: Patches,
    weight: Range<usize>,
    bias: Range<usize>,
}

impl ConvTranspose2d {
    pub(crate) fn new(in_c: usize, out_c: usize, h: usize, w: usize, alloc: &mut Allocator) -> Self {
        let patches = Patches::new(out_c, 2 * h, 2 * w);
        debug_assert_eq!((patches.oh, patches.ow), (h, w));
        Self {
            in_c,
            weight: alloc.take(in_c * patches.rows()),
            bias: alloc.take(out_c),
            patches,
        }
    }

    pub(crate) fn init<R: Rng>(&self, params: &mut [f64], rng: &mut R) {
        // each output pixel receives at most in_c * 4 taps with stride 2
        let bound = (6.0 / (self.in_c * 4) as f64).sqrt();
        init_uniform(&mut params[self.weight.clone()], bound, rng);
        params[self.bias.clone()].fill(0.0);
    }

    pub(crate) fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let p = self.patches.cols();
        let r = self.patches.rows();
        let mut col = vec![0.0; r * p];
        general_mat_mul(
            1.0,
            &view(&params[self.weight.clone()], self.in_c, r).t(),
            &view(x, self.in_c, p),
            0.0,
            &mut view_mut(&mut col, r, p),
        );
        let mut y = self.patches.col2im(&col);
        let plane = self.patches.h * self.patches.w;
        for (o, chunk) in y.chunks_mut(plane).enumerate() {
            let b = params[self.bias.start + o];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        y
    }

    pub(crate) fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        dy: &[f64],
        grads: &mut [f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let p = self.patches.cols();
        let r = self.patches.rows();
        let plane = self.patches.h * self.patches.w;
        for (o, chunk) in dy.chunks(plane).enumerate() {
            grads[self.bias.start + o] += chunk.iter().sum::<f64>();
        }
        let dcol = self.patches.im2col(dy);
        let dcol_v = view(&dcol, r, p);
        general_mat_mul(
            1.0,
            &view(x, self.in_c, p),
            &dcol_v.t(),
            1.0,
            &mut view_mut(&mut grads[self.weight.clone()], self.in_c, r),
        );
        if !want_dx {
            return None;
        }
        let mut dx = vec![0.0; self.in_c * p];
        general_mat_mul(
            1.0,
            &view(&params[self.weight.clone()], self.in_c, r),
            &dcol_v,
            0.0,
            &mut view_mut(&mut dx, self.in_c, p),
        );
        Some(dx)
    }
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    weight: Range<usize>,
    bias: Range<usize>,
}

impl Dense {
    pub(crate) fn new(inputs: usize, outputs: usize, alloc: &mut Allocator) -> Self {
        Self {
            inputs,
            outputs,
            weight: alloc.take(inputs * outputs),
            bias: alloc.take(outputs),
        }
    }

    pub(crate) fn init<R: Rng>(&self, params: &mut [f64], rng: &mut R) {
        let bound = (6.0 / (self.inputs + self.outputs) as f64).sqrt();
        init_uniform(&mut params[self.weight.clone()], bound, rng);
        params[self.bias.clone()].fill(0.0);
    }

    pub(crate) fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let w = &params[self.weight.clone()];
        w.chunks(self.inputs)
            .zip(&params[self.bias.clone()])
            .map(|(row, b)| b + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
            .collect()
    }

    pub(crate) fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        dy: &[f64],
        grads: &mut [f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        {
            let gw = &mut grads[self.weight.clone()];
            for (row, &d) in gw.chunks_mut(self.inputs).zip(dy) {
                if d != 0.0 {
                    row.iter_mut().zip(x).for_each(|(g, v)| *g += d * v);
                }
            }
        }
        for (g, d) in grads[self.bias.clone()].iter_mut().zip(dy) {
            *g += d;
        }
        if !want_dx {
            return None;
        }
        let w = &params[self.weight.clone()];
        let mut dx = vec![0.0; self.inputs];
        for (row, &d) in w.chunks(self.inputs).zip(dy) {
            if d != 0.0 {
                dx.iter_mut().zip(row).for_each(|(g, a)| *g += d * a);
            }
        }
        Some(dx)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub(crate) fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Updates only `params[active]`.
    pub(crate) fn step(&mut self, params: &mut [f64], grads: &[f64], active: Range<usize>) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in active {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Samples per accumulation chunk. Fixed so the summation order (and hence
/// the result) does not depend on the thread count.
const ACCUMULATE_CHUNK: usize = 8;

/// Runs `f(i, grads)` for every sample `i < n`, summing losses and
/// gradients. Chunks run in parallel; partial sums are combined in order.
pub(crate) fn accumulate<F>(n: usize, len: usize, f: F) -> (f64, Vec<f64>)
where
    F: Fn(usize, &mut [f64]) -> f64 + Sync,
{
    use rayon::prelude::*;
    let chunks = n.div_ceil(ACCUMULATE_CHUNK);
    let parts: Vec<(f64, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut grads = vec![0.0; len];
            let mut loss = 0.0;
            for i in c * ACCUMULATE_CHUNK..((c + 1) * ACCUMULATE_CHUNK).min(n) {
                loss += f(i, &mut grads);
            }
            (loss, grads)
        })
        .collect();
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().unwrap_or((0.0, vec![0.0; len]));
    for (l, g) in iter {
        loss += l;
        grads.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    (loss, grads)
}

/// FNV-1a over the bit patterns of a parameter slice.
pub(crate) fn checksum(params: &[f64]) -> u64 {
    params.iter().fold(0xcbf2_9ce4_8422_2325_u64, |h, v| {
        v.to_bits()
            .to_le_bytes()
            .iter()
            .fold(h, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
    })
}

/// Mixes a base seed with stream coordinates into an independent seed.
pub(crate) fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
