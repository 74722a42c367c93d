//! Raw numeric kernels over row-major slices.

use crate::Float;

/// `C = alpha * op(A) * op(B) + beta * C` for row-major buffers, where
/// `op(A)` is `m×k` and `op(B)` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Float>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
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

/// Geometry of a square-kernel 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel,
            stride,
            pad,
        }
    }

    /// Output extent of the forward convolution, `None` if the kernel does not fit.
    pub fn out_len(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        if padded < self.kernel || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

/// Unfold `x: [n, c, h, w]` into `cols: [c*k*k, n*ho*wo]`.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Float>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    g: ConvGeom,
    cols: &mut [T],
) {
    let k = g.kernel;
    let p = ho * wo;
    let np = n * p;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * np;
                for b in 0..n {
                    let src = &x[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    let dst = &mut cols[row + b * p..row + (b + 1) * p];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        let drow = &mut dst[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            drow.fill(T::zero());
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            *d = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                srow[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `cols` back into `x` (which is zeroed first).
#[allow(clippy::too_many_arguments)]
fn col2im<T: Float>(
    cols: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    g: ConvGeom,
    x: &mut [T],
) {
    x.fill(T::zero());
    let k = g.kernel;
    let p = ho * wo;
    let np = n * p;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * np;
                for b in 0..n {
                    let src = &cols[row + b * p..row + (b + 1) * p];
                    let dst = &mut x[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        let srow = &src[oy * wo..(oy + 1) * wo];
                        for (ox, &s) in srow.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && (ix as usize) < w {
                                drow[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[n, c, p]` -> `[c, n*p]`
fn batch_to_channel_major<T: Float>(src: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * p];
    for b in 0..n {
        for ch in 0..c {
            out[ch * n * p + b * p..ch * n * p + (b + 1) * p]
                .copy_from_slice(&src[(b * c + ch) * p..(b * c + ch + 1) * p]);
        }
    }
    out
}

/// `[c, n*p]` -> `[n, c, p]`
fn channel_to_batch_major<T: Float>(src: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * p];
    for ch in 0..c {
        for b in 0..n {
            out[(b * c + ch) * p..(b * c + ch + 1) * p]
                .copy_from_slice(&src[ch * n * p + b * p..ch * n * p + (b + 1) * p]);
        }
    }
    out
}

/// Shapes involved in one convolution: input `[n, ci, h, w]`,
/// weight `[co, ci, k, k]`, output `[n, co, ho, wo]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub ho: usize,
    pub wo: usize,
    pub geom: ConvGeom,
}

impl ConvDims {
    fn kdim(&self) -> usize {
        self.ci * self.geom.kernel * self.geom.kernel
    }

    fn np(&self) -> usize {
        self.n * self.ho * self.wo
    }
}

/// Cross-correlation `y = conv(x, w)`.
pub fn conv_forward<T: Float>(x: &[T], w: &[T], d: ConvDims) -> Vec<T> {
    let kd = d.kdim();
    let np = d.np();
    let mut cols = vec![T::zero(); kd * np];
    im2col(x, d.n, d.ci, d.h, d.w, d.ho, d.wo, d.geom, &mut cols);
    let mut out = vec![T::zero(); d.co * np];
    gemm(
        false,
        false,
        d.co,
        np,
        kd,
        T::one(),
        w,
        &cols,
        T::zero(),
        &mut out,
    );
    channel_to_batch_major(&out, d.n, d.co, d.ho * d.wo)
}

/// Input gradient of [`conv_forward`]; also the transposed convolution.
pub fn conv_backward_data<T: Float>(gy: &[T], w: &[T], d: ConvDims) -> Vec<T> {
    let kd = d.kdim();
    let np = d.np();
    let g = batch_to_channel_major(gy, d.n, d.co, d.ho * d.wo);
    let mut cols = vec![T::zero(); kd * np];
    gemm(
        true,
        false,
        kd,
        np,
        d.co,
        T::one(),
        w,
        &g,
        T::zero(),
        &mut cols,
    );
    let mut x = vec![T::zero(); d.n * d.ci * d.h * d.w];
    col2im(&cols, d.n, d.ci, d.h, d.w, d.ho, d.wo, d.geom, &mut x);
    x
}

/// Weight gradient of [`conv_forward`].
pub fn conv_backward_filter<T: Float>(x: &[T], gy: &[T], d: ConvDims) -> Vec<T> {
    let kd = d.kdim();
    let np = d.np();
    let mut cols = vec![T::zero(); kd * np];
    im2col(x, d.n, d.ci, d.h, d.w, d.ho, d.wo, d.geom, &mut cols);
    let g = batch_to_channel_major(gy, d.n, d.co, d.ho * d.wo);
    let mut gw = vec![T::zero(); d.co * kd];
    gemm(
        false,
        true,
        d.co,
        kd,
        np,
        T::one(),
        &g,
        &cols,
        T::zero(),
        &mut gw,
    );
    gw
}

/// Split a shape `[n, c, rest..]` into `(n, c, prod(rest))`.
pub fn channel_layout(shape: &[usize]) -> (usize, usize, usize) {
    assert!(
        shape.len() >= 2,
        "channel op needs rank >= 2, got {shape:?}"
    );
    (shape[0], shape[1], shape[2..].iter().product())
}

pub fn channel_sum<T: Float>(x: &[T], shape: &[usize]) -> Vec<T> {
    let (n, c, p) = channel_layout(shape);
    let mut out = vec![T::zero(); c];
    for b in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let s: T = x[(b * c + ch) * p..(b * c + ch + 1) * p]
                .iter()
                .copied()
                .sum();
            *o += s;
        }
    }
    out
}

pub fn channel_apply<T: Float>(
    x: &[T],
    shape: &[usize],
    per_channel: &[T],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    let (n, c, p) = channel_layout(shape);
    assert_eq!(per_channel.len(), c, "per-channel vector length");
    let mut out = Vec::with_capacity(x.len());
    for b in 0..n {
        for (ch, &s) in per_channel.iter().enumerate() {
            out.extend(
                x[(b * c + ch) * p..(b * c + ch + 1) * p]
                    .iter()
                    .map(|&v| f(v, s)),
            );
        }
    }
    out
}
