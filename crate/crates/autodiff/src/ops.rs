//! Differentiable operations.
//!
//! Every backward rule is expressed with the operations of this module, so the
//! gradient graph can be differentiated again.

use crate::kernels::{self, ConvDims, ConvGeom};
use crate::tensor::numel;
use crate::{Float, Tensor, Var};

fn when<T: Float>(need: bool, f: impl FnOnce() -> Var<T>) -> Option<Var<T>> {
    need.then(f)
}

fn unary<T: Float>(
    name: &'static str,
    a: &Var<T>,
    value: Tensor<T>,
    rule: impl Fn(&[Var<T>], &Var<T>, &Var<T>) -> Var<T> + 'static,
) -> Var<T> {
    Var::from_op(
        name,
        value,
        vec![a.clone()],
        Box::new(move |inp, out, g, _| vec![Some(rule(inp, out, g))]),
    )
}

pub fn add<T: Float>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let value = a.value().zip_map(b.value(), |x, y| x + y);
    Var::from_op(
        "add",
        value,
        vec![a.clone(), b.clone()],
        Box::new(|_, _, g, need| vec![when(need[0], || g.clone()), when(need[1], || g.clone())]),
    )
}

pub fn sub<T: Float>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let value = a.value().zip_map(b.value(), |x, y| x - y);
    Var::from_op(
        "sub",
        value,
        vec![a.clone(), b.clone()],
        Box::new(|_, _, g, need| vec![when(need[0], || g.clone()), when(need[1], || neg(g))]),
    )
}

pub fn mul<T: Float>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let value = a.value().zip_map(b.value(), |x, y| x * y);
    Var::from_op(
        "mul",
        value,
        vec![a.clone(), b.clone()],
        Box::new(|inp, _, g, need| {
            vec![
                when(need[0], || mul(g, &inp[1])),
                when(need[1], || mul(g, &inp[0])),
            ]
        }),
    )
}

pub fn div<T: Float>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let value = a.value().zip_map(b.value(), |x, y| x / y);
    Var::from_op(
        "div",
        value,
        vec![a.clone(), b.clone()],
        Box::new(|inp, out, g, need| {
            let ga = div(g, &inp[1]);
            let gb = when(need[1], || neg(&mul(&ga, out)));
            vec![when(need[0], || ga), gb]
        }),
    )
}

/// Multiply by a tensor that carries no gradient (masks, one-hot targets).
pub fn mul_const<T: Float>(a: &Var<T>, c: &Tensor<T>) -> Var<T> {
    mul(a, &Var::constant(c.clone()))
}

pub fn neg<T: Float>(a: &Var<T>) -> Var<T> {
    unary("neg", a, a.value().map(|x| -x), |_, _, g| neg(g))
}

pub fn scale<T: Float>(a: &Var<T>, s: T) -> Var<T> {
    unary("scale", a, a.value().map(|x| x * s), move |_, _, g| {
        scale(g, s)
    })
}

pub fn add_scalar<T: Float>(a: &Var<T>, s: T) -> Var<T> {
    unary("add_scalar", a, a.value().map(|x| x + s), |_, _, g| {
        g.clone()
    })
}

pub fn square<T: Float>(a: &Var<T>) -> Var<T> {
    mul(a, a)
}

pub fn exp<T: Float>(a: &Var<T>) -> Var<T> {
    unary("exp", a, a.value().map(|x| x.exp()), |_, out, g| {
        mul(g, out)
    })
}

pub fn log<T: Float>(a: &Var<T>) -> Var<T> {
    unary("log", a, a.value().map(|x| x.ln()), |inp, _, g| {
        div(g, &inp[0])
    })
}

pub fn sqrt<T: Float>(a: &Var<T>) -> Var<T> {
    unary("sqrt", a, a.value().map(|x| x.sqrt()), |_, out, g| {
        div(&scale(g, T::of(0.5)), out)
    })
}

pub fn sigmoid<T: Float>(a: &Var<T>) -> Var<T> {
    let value = a.value().map(|x| T::one() / (T::one() + (-x).exp()));
    unary("sigmoid", a, value, |_, out, g| {
        let one_minus = add_scalar(&neg(out), T::one());
        mul(g, &mul(out, &one_minus))
    })
}

/// `max(x, 0) + slope * min(x, 0)`; plain ReLU at `slope = 0`.
pub fn leaky_relu<T: Float>(a: &Var<T>, slope: T) -> Var<T> {
    let mask = a
        .value()
        .map(|x| if x > T::zero() { T::one() } else { slope });
    let value = a.value().zip_map(&mask, |x, m| x * m);
    unary("leaky_relu", a, value, move |_, _, g| mul_const(g, &mask))
}

pub fn relu<T: Float>(a: &Var<T>) -> Var<T> {
    leaky_relu(a, T::zero())
}

pub fn reshape<T: Float>(a: &Var<T>, shape: &[usize]) -> Var<T> {
    let from = a.shape().to_vec();
    unary("reshape", a, a.value().reshape(shape), move |_, _, g| {
        reshape(g, &from)
    })
}

/// Sum of all elements, as a rank-0 tensor.
pub fn sum_all<T: Float>(a: &Var<T>) -> Var<T> {
    let s: T = a.value().data().iter().copied().sum();
    let from = a.shape().to_vec();
    unary("sum_all", a, Tensor::scalar(s), move |_, _, g| {
        expand_scalar(g, &from)
    })
}

pub fn mean_all<T: Float>(a: &Var<T>) -> Var<T> {
    let n = a.value().numel().max(1);
    scale(&sum_all(a), T::of(1.0 / n as f64))
}

/// Broadcast a one-element tensor to `shape`.
pub fn expand_scalar<T: Float>(a: &Var<T>, shape: &[usize]) -> Var<T> {
    let from = a.shape().to_vec();
    let value = Tensor::full(shape, a.value().item());
    unary("expand_scalar", a, value, move |_, _, g| {
        reshape(&sum_all(g), &from)
    })
}

/// Per-sample sum: `[n, ...] -> [n]`.
pub fn sum_rows<T: Float>(a: &Var<T>) -> Var<T> {
    let n = a.value().batch();
    let row = a.value().numel() / n.max(1);
    let sums: Vec<T> = a
        .value()
        .data()
        .chunks(row.max(1))
        .map(|c| c.iter().copied().sum())
        .collect();
    let from = a.shape().to_vec();
    unary("sum_rows", a, Tensor::new(&[n], sums), move |_, _, g| {
        expand_rows(g, &from)
    })
}

/// Broadcast `[n]` to `[n, ...]`.
pub fn expand_rows<T: Float>(a: &Var<T>, shape: &[usize]) -> Var<T> {
    let n = a.value().numel();
    assert_eq!(shape[0], n, "expand_rows leading dim");
    let row = numel(&shape[1..]);
    let mut data = Vec::with_capacity(n * row);
    for &v in a.value().data() {
        data.extend(std::iter::repeat_n(v, row));
    }
    unary("expand_rows", a, Tensor::new(shape, data), |_, _, g| {
        sum_rows(g)
    })
}

/// Columns `start..end` of `a: [n, m]`.
pub fn slice_cols<T: Float>(a: &Var<T>, start: usize, end: usize) -> Var<T> {
    let (n, m) = (a.shape()[0], a.shape()[1]);
    assert!(a.shape().len() == 2 && start <= end && end <= m, "slice_cols bounds");
    let mut out = Vec::with_capacity(n * (end - start));
    for row in a.value().data().chunks(m.max(1)) {
        out.extend_from_slice(&row[start..end]);
    }
    unary("slice_cols", a, Tensor::new(&[n, end - start], out), move |_, _, g| {
        pad_cols(g, start, m)
    })
}

/// Place `a: [n, q]` at column `start` of a zero `[n, total]` matrix.
pub fn pad_cols<T: Float>(a: &Var<T>, start: usize, total: usize) -> Var<T> {
    let (n, q) = (a.shape()[0], a.shape()[1]);
    assert!(a.shape().len() == 2 && start + q <= total, "pad_cols bounds");
    let mut out = vec![T::zero(); n * total];
    for (r, row) in a.value().data().chunks(q.max(1)).enumerate().take(n) {
        out[r * total + start..r * total + start + q].copy_from_slice(row);
    }
    unary("pad_cols", a, Tensor::new(&[n, total], out), move |_, _, g| {
        slice_cols(g, start, start + q)
    })
}

/// `a[i, cols[i]]` for each row of `a: [n, m]`; rows without a column give 0.
pub fn pick_cols<T: Float>(a: &Var<T>, cols: &[Option<usize>]) -> Var<T> {
    let (n, m) = (a.shape()[0], a.shape()[1]);
    assert!(a.shape().len() == 2 && cols.len() == n, "pick_cols rows");
    let out = cols
        .iter()
        .enumerate()
        .map(|(i, c)| c.map_or(T::zero(), |c| a.value().data()[i * m + c]))
        .collect();
    let cols = cols.to_vec();
    unary("pick_cols", a, Tensor::new(&[n], out), move |_, _, g| {
        place_cols(g, &cols, m)
    })
}

/// Inverse of [`pick_cols`]: a zero `[n, m]` matrix holding `a[i]` at
/// `(i, cols[i])`.
pub fn place_cols<T: Float>(a: &Var<T>, cols: &[Option<usize>], m: usize) -> Var<T> {
    let n = a.value().numel();
    assert_eq!(cols.len(), n, "place_cols rows");
    let mut out = vec![T::zero(); n * m];
    for (i, c) in cols.iter().enumerate() {
        if let Some(c) = *c {
            assert!(c < m, "place_cols column");
            out[i * m + c] = a.value().data()[i];
        }
    }
    let cols = cols.to_vec();
    unary("place_cols", a, Tensor::new(&[n, m], out), move |_, _, g| {
        pick_cols(g, &cols)
    })
}

/// `[a | b]` for `a: [n, p]`, `b: [n, q]`.
pub fn concat_cols<T: Float>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let (p, q) = (a.shape()[1], b.shape()[1]);
    add(&pad_cols(a, 0, p + q), &pad_cols(b, p, p + q))
}

/// Matrix product of `op(a)` and `op(b)` where `op` optionally transposes.
pub fn matmul<T: Float>(a: &Var<T>, b: &Var<T>, trans_a: bool, trans_b: bool) -> Var<T> {
    let (sa, sb) = (a.shape(), b.shape());
    assert!(
        sa.len() == 2 && sb.len() == 2,
        "matmul needs rank-2 operands"
    );
    let (m, ka) = if trans_a {
        (sa[1], sa[0])
    } else {
        (sa[0], sa[1])
    };
    let (kb, n) = if trans_b {
        (sb[1], sb[0])
    } else {
        (sb[0], sb[1])
    };
    assert_eq!(ka, kb, "matmul inner dimensions {sa:?} x {sb:?}");
    let mut out = vec![T::zero(); m * n];
    kernels::gemm(
        trans_a,
        trans_b,
        m,
        n,
        ka,
        T::one(),
        a.value().data(),
        b.value().data(),
        T::zero(),
        &mut out,
    );
    Var::from_op(
        "matmul",
        Tensor::new(&[m, n], out),
        vec![a.clone(), b.clone()],
        Box::new(move |inp, _, g, need| {
            let (a, b) = (&inp[0], &inp[1]);
            let ga = when(need[0], || match (trans_a, trans_b) {
                (false, false) => matmul(g, b, false, true),
                (false, true) => matmul(g, b, false, false),
                (true, false) => matmul(b, g, false, true),
                (true, true) => matmul(b, g, true, true),
            });
            let gb = when(need[1], || match (trans_a, trans_b) {
                (false, false) => matmul(a, g, true, false),
                (false, true) => matmul(g, a, true, false),
                (true, false) => matmul(a, g, false, false),
                (true, true) => matmul(g, a, true, true),
            });
            vec![ga, gb]
        }),
    )
}

/// Add `b: [c]` along axis 1 of `x: [n, c, ...]`.
pub fn bias_add<T: Float>(x: &Var<T>, b: &Var<T>) -> Var<T> {
    let value = kernels::channel_apply(x.value().data(), x.shape(), b.value().data(), |v, s| v + s);
    Var::from_op(
        "bias_add",
        Tensor::new(x.shape(), value),
        vec![x.clone(), b.clone()],
        Box::new(|_, _, g, need| {
            vec![
                when(need[0], || g.clone()),
                when(need[1], || channel_sum(g)),
            ]
        }),
    )
}

/// Multiply axis 1 of `x: [n, c, ...]` by `s: [c]`.
pub fn channel_mul<T: Float>(x: &Var<T>, s: &Var<T>) -> Var<T> {
    let value = kernels::channel_apply(x.value().data(), x.shape(), s.value().data(), |v, s| v * s);
    Var::from_op(
        "channel_mul",
        Tensor::new(x.shape(), value),
        vec![x.clone(), s.clone()],
        Box::new(|inp, _, g, need| {
            vec![
                when(need[0], || channel_mul(g, &inp[1])),
                when(need[1], || channel_sum(&mul(g, &inp[0]))),
            ]
        }),
    )
}

/// Sum over every axis except 1: `[n, c, ...] -> [c]`.
pub fn channel_sum<T: Float>(x: &Var<T>) -> Var<T> {
    let value = kernels::channel_sum(x.value().data(), x.shape());
    let c = value.len();
    let from = x.shape().to_vec();
    unary(
        "channel_sum",
        x,
        Tensor::new(&[c], value),
        move |_, _, g| channel_expand(g, &from),
    )
}

/// Broadcast `[c]` to `[n, c, ...]`.
pub fn channel_expand<T: Float>(v: &Var<T>, shape: &[usize]) -> Var<T> {
    let zeros = vec![T::zero(); numel(shape)];
    let value = kernels::channel_apply(&zeros, shape, v.value().data(), |_, s| s);
    unary("channel_expand", v, Tensor::new(shape, value), |_, _, g| {
        channel_sum(g)
    })
}

/// Row-wise log-softmax of `[n, k]` logits.
pub fn log_softmax<T: Float>(a: &Var<T>) -> Var<T> {
    assert_eq!(a.shape().len(), 2, "log_softmax needs [n, k]");
    let k = a.shape()[1];
    let mut out = Vec::with_capacity(a.value().numel());
    for row in a.value().data().chunks(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        out.extend(row.iter().map(|&v| v - lse));
    }
    let shape = a.shape().to_vec();
    unary(
        "log_softmax",
        a,
        Tensor::new(&shape, out),
        move |_, out, g| {
            let total = expand_rows(&sum_rows(g), &shape);
            sub(g, &mul(&exp(out), &total))
        },
    )
}

fn conv_dims(x_shape: &[usize], w_shape: &[usize], geom: ConvGeom) -> ConvDims {
    assert_eq!(x_shape.len(), 4, "conv input must be [n, c, h, w]");
    assert_eq!(w_shape.len(), 4, "conv weight must be [co, ci, k, k]");
    assert_eq!(x_shape[1], w_shape[1], "conv channel mismatch");
    assert_eq!(w_shape[2], geom.kernel);
    let ho = geom
        .out_len(x_shape[2])
        .expect("kernel larger than padded input");
    let wo = geom
        .out_len(x_shape[3])
        .expect("kernel larger than padded input");
    ConvDims {
        n: x_shape[0],
        ci: x_shape[1],
        h: x_shape[2],
        w: x_shape[3],
        co: w_shape[0],
        ho,
        wo,
        geom,
    }
}

/// 2D cross-correlation: `x: [n, ci, h, w]`, `w: [co, ci, k, k]`.
pub fn conv2d<T: Float>(x: &Var<T>, w: &Var<T>, geom: ConvGeom) -> Var<T> {
    let d = conv_dims(x.shape(), w.shape(), geom);
    let y = kernels::conv_forward(x.value().data(), w.value().data(), d);
    Var::from_op(
        "conv2d",
        Tensor::new(&[d.n, d.co, d.ho, d.wo], y),
        vec![x.clone(), w.clone()],
        Box::new(move |inp, _, g, need| {
            vec![
                when(need[0], || {
                    conv2d_backward_data(g, &inp[1], geom, (d.h, d.w))
                }),
                when(need[1], || conv2d_backward_filter(&inp[0], g, geom)),
            ]
        }),
    )
}

/// Adjoint of [`conv2d`] in its input: `g: [n, co, ho, wo]` -> `[n, ci, h, w]`.
///
/// This is also the transposed (fractionally strided) convolution.
pub fn conv2d_backward_data<T: Float>(
    g: &Var<T>,
    w: &Var<T>,
    geom: ConvGeom,
    input_hw: (usize, usize),
) -> Var<T> {
    let (gs, ws) = (g.shape(), w.shape());
    let x_shape = [gs[0], ws[1], input_hw.0, input_hw.1];
    let d = conv_dims(&x_shape, ws, geom);
    assert_eq!(
        (d.co, d.ho, d.wo),
        (gs[1], gs[2], gs[3]),
        "conv adjoint shape"
    );
    let x = kernels::conv_backward_data(g.value().data(), w.value().data(), d);
    Var::from_op(
        "conv2d_backward_data",
        Tensor::new(&x_shape, x),
        vec![g.clone(), w.clone()],
        Box::new(move |inp, _, h, need| {
            vec![
                when(need[0], || conv2d(h, &inp[1], geom)),
                when(need[1], || conv2d_backward_filter(h, &inp[0], geom)),
            ]
        }),
    )
}

/// Weight gradient of [`conv2d`]: `x: [n, ci, h, w]`, `g: [n, co, ho, wo]` -> `[co, ci, k, k]`.
pub fn conv2d_backward_filter<T: Float>(x: &Var<T>, g: &Var<T>, geom: ConvGeom) -> Var<T> {
    let (xs, gs) = (x.shape().to_vec(), g.shape());
    let w_shape = [gs[1], xs[1], geom.kernel, geom.kernel];
    let d = conv_dims(&xs, &w_shape, geom);
    assert_eq!((d.ho, d.wo), (gs[2], gs[3]), "conv filter-grad shape");
    let gw = kernels::conv_backward_filter(x.value().data(), g.value().data(), d);
    Var::from_op(
        "conv2d_backward_filter",
        Tensor::new(&w_shape, gw),
        vec![x.clone(), g.clone()],
        Box::new(move |inp, _, h, need| {
            vec![
                when(need[0], || {
                    conv2d_backward_data(&inp[1], h, geom, (xs[2], xs[3]))
                }),
                when(need[1], || conv2d(&inp[0], h, geom)),
            ]
        }),
    )
}

impl<T: Float> std::ops::Add for &Var<T> {
    type Output = Var<T>;
    fn add(self, rhs: Self) -> Var<T> {
        add(self, rhs)
    }
}

impl<T: Float> std::ops::Sub for &Var<T> {
    type Output = Var<T>;
    fn sub(self, rhs: Self) -> Var<T> {
        sub(self, rhs)
    }
}

impl<T: Float> std::ops::Mul for &Var<T> {
    type Output = Var<T>;
    fn mul(self, rhs: Self) -> Var<T> {
        mul(self, rhs)
    }
}

impl<T: Float> std::ops::Neg for &Var<T> {
    type Output = Var<T>;
    fn neg(self) -> Var<T> {
        neg(self)
    }
}
