use super::{numel_of, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::tensor::gemm;

/// Lower bound applied inside [`log`].
pub const LOG_FLOOR: f64 = 1e-12;

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn unary<T: Scalar>(
    a: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + Send + Sync + 'static,
) -> Tensor<T> {
    // df(x, y) is dy/dx given input x and output y.
    let x = a.data_arc();
    let y: Vec<T> = x.iter().map(|&v| f(v)).collect();
    let y_saved = std::sync::Arc::new(y.clone());
    Tensor::from_op(a.shape().to_vec(), y, op, vec![a.clone()], move |g, _| {
        let gx = g
            .iter()
            .zip(x.iter().zip(y_saved.iter()))
            .map(|(&g, (&x, &y))| g * df(x, y))
            .collect();
        vec![Some(gx)]
    })
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        "add",
        vec![a.clone(), b.clone()],
        |g, _| vec![Some(g.to_vec()), Some(g.to_vec())],
    ))
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("sub", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x - y)
        .collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        "sub",
        vec![a.clone(), b.clone()],
        |g, _| vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())],
    ))
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mul", a, b)?;
    let (ad, bd) = (a.data_arc(), b.data_arc());
    let data = ad.iter().zip(bd.iter()).map(|(&x, &y)| x * y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        "mul",
        vec![a.clone(), b.clone()],
        move |g, need| {
            let ga = need[0].then(|| g.iter().zip(bd.iter()).map(|(&g, &y)| g * y).collect());
            let gb = need[1].then(|| g.iter().zip(ad.iter()).map(|(&g, &x)| g * x).collect());
            vec![ga, gb]
        },
    ))
}

/// Multiply by a constant.
pub fn scale<T: Scalar>(a: &Tensor<T>, s: f64) -> Tensor<T> {
    let s = T::of(s);
    let data = a.data().iter().map(|&x| x * s).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        "scale",
        vec![a.clone()],
        move |g, _| vec![Some(g.iter().map(|&v| v * s).collect())],
    )
}

pub fn add_scalar<T: Scalar>(a: &Tensor<T>, s: f64) -> Tensor<T> {
    let s = T::of(s);
    let data = a.data().iter().map(|&x| x + s).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        "add_scalar",
        vec![a.clone()],
        |g, _| vec![Some(g.to_vec())],
    )
}

pub fn neg<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let data = a.data().iter().map(|&x| -x).collect();
    Tensor::from_op(a.shape().to_vec(), data, "neg", vec![a.clone()], |g, _| {
        vec![Some(g.iter().map(|&v| -v).collect())]
    })
}

/// Multiply every element of `a` by the single element of `s`; both
/// receive gradients.
pub fn mul_scalar<T: Scalar>(a: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    let sv = s.item()?;
    let ad = a.data_arc();
    let data = ad.iter().map(|&x| x * sv).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        "mul_scalar",
        vec![a.clone(), s.clone()],
        move |g, need| {
            let ga = need[0].then(|| g.iter().map(|&v| v * sv).collect());
            let gs = need[1].then(|| vec![g.iter().zip(ad.iter()).map(|(&g, &x)| g * x).sum()]);
            vec![ga, gs]
        },
    ))
}

/// Natural log with the argument clamped below at [`LOG_FLOOR`].
pub fn log<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let floor = T::of(LOG_FLOOR);
    unary(
        a,
        "log",
        move |x| x.max(floor).ln(),
        move |x, _| if x > floor { x.recip() } else { T::zero() },
    )
}

pub fn clamp<T: Scalar>(a: &Tensor<T>, lo: f64, hi: f64) -> Result<Tensor<T>> {
    if lo > hi {
        return Err(Error::InvalidArgument(format!("clamp bounds {lo} > {hi}")));
    }
    let (lo, hi) = (T::of(lo), T::of(hi));
    Ok(unary(
        a,
        "clamp",
        move |x| x.max(lo).min(hi),
        move |x, _| {
            if x >= lo && x <= hi {
                T::one()
            } else {
                T::zero()
            }
        },
    ))
}

pub fn exp<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    unary(a, "exp", |x| x.exp(), |_, y| y)
}

pub fn relu<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    unary(
        a,
        "relu",
        |x| if x > T::zero() { x } else { T::zero() },
        |x, _| if x > T::zero() { T::one() } else { T::zero() },
    )
}

pub fn leaky_relu<T: Scalar>(a: &Tensor<T>, alpha: f64) -> Result<Tensor<T>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "leaky_relu slope must lie in (0,1), got {alpha}"
        )));
    }
    let alpha = T::of(alpha);
    Ok(unary(
        a,
        "leaky_relu",
        move |x| if x > T::zero() { x } else { x * alpha },
        move |x, _| if x > T::zero() { T::one() } else { alpha },
    ))
}

pub fn tanh<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    unary(a, "tanh", |x| x.tanh(), |_, y| T::one() - y * y)
}

fn sigmoid_value<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    unary(a, "sigmoid", sigmoid_value, |_, y| y * (T::one() - y))
}

/// `(outer, len, inner)` decomposition of a shape around one axis.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(
            op,
            format!("axis {axis} out of range for {shape:?}"),
        ));
    }
    Ok(())
}

/// Softmax along `axis`, stabilised by subtracting the running maximum.
pub fn softmax<T: Scalar>(a: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis("softmax", a.shape(), axis)?;
    let (outer, len, inner) = split_axis(a.shape(), axis);
    let x = a.data();
    let mut y = vec![T::zero(); x.len()];
    if inner == 1 {
        for (xr, yr) in x.chunks(len).zip(y.chunks_mut(len)) {
            let max = xr.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for (yv, &xv) in yr.iter_mut().zip(xr) {
                *yv = (xv - max).exp();
                total += *yv;
            }
            let inv = total.recip();
            yr.iter_mut().for_each(|v| *v *= inv);
        }
    }
    for o in (0..outer).filter(|_| inner > 1) {
        for i in 0..inner {
            let base = o * len * inner + i;
            let idx = |j: usize| base + j * inner;
            let max = (0..len).map(|j| x[idx(j)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..len {
                let e = (x[idx(j)] - max).exp();
                y[idx(j)] = e;
                total += e;
            }
            for j in 0..len {
                y[idx(j)] = y[idx(j)] / total;
            }
        }
    }
    let ys = std::sync::Arc::new(y.clone());
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        y,
        "softmax",
        vec![a.clone()],
        move |g, _| {
            let mut gx = vec![T::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let dot: T = (0..len)
                        .map(|j| g[base + j * inner] * ys[base + j * inner])
                        .sum();
                    for j in 0..len {
                        let k = base + j * inner;
                        gx[k] = ys[k] * (g[k] - dot);
                    }
                }
            }
            vec![Some(gx)]
        },
    ))
}

/// For each input element, the flat index of the output element it reduces into.
fn reduce_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(d, _)| !axes.contains(d))
        .map(|(_, &e)| e)
        .collect();
    // out stride per input dim (0 for reduced dims)
    let mut out_strides = vec![0usize; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        if !axes.contains(&d) {
            out_strides[d] = acc;
            acc *= shape[d];
        }
    }
    let n = numel_of(shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    let mut out = 0usize;
    for _ in 0..n {
        map.push(out);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            out += out_strides[d];
            if idx[d] < shape[d] {
                break;
            }
            out -= out_strides[d] * shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, map)
}

fn reduce<T: Scalar>(a: &Tensor<T>, axes: &[usize], mean: bool) -> Result<Tensor<T>> {
    let op = if mean { "mean" } else { "sum" };
    let mut axes = axes.to_vec();
    axes.sort_unstable();
    axes.dedup();
    for &ax in &axes {
        check_axis(op, a.shape(), ax)?;
    }
    let (out_shape, map) = reduce_map(a.shape(), &axes);
    let count: usize = axes.iter().map(|&d| a.shape()[d]).product();
    let factor = if mean {
        T::of(1.0 / count as f64)
    } else {
        T::one()
    };
    let mut out = vec![T::zero(); numel_of(&out_shape)];
    for (&x, &o) in a.data().iter().zip(&map) {
        out[o] += x;
    }
    if mean {
        out.iter_mut().for_each(|v| *v *= factor);
    }
    Ok(Tensor::from_op(
        out_shape,
        out,
        op,
        vec![a.clone()],
        move |g, _| vec![Some(map.iter().map(|&o| g[o] * factor).collect())],
    ))
}

/// Sum over `axes`; reduced axes are dropped from the shape.
pub fn sum<T: Scalar>(a: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    reduce(a, axes, false)
}

pub fn mean<T: Scalar>(a: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    reduce(a, axes, true)
}

pub fn sum_all<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let axes: Vec<usize> = (0..a.rank()).collect();
    reduce(a, &axes, false).expect("all axes are valid")
}

pub fn mean_all<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let axes: Vec<usize> = (0..a.rank()).collect();
    reduce(a, &axes, true).expect("all axes are valid")
}

pub fn reshape<T: Scalar>(a: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if numel_of(shape) != a.numel() || shape.contains(&0) {
        return Err(Error::ShapeMismatch {
            op: "reshape",
            lhs: a.shape().to_vec(),
            rhs: shape.to_vec(),
        });
    }
    Ok(Tensor::from_op(
        shape.to_vec(),
        a.to_vec(),
        "reshape",
        vec![a.clone()],
        |g, _| vec![Some(g.to_vec())],
    ))
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// Reorder axes: output axis `i` is input axis `perm[i]`.
pub fn permute<T: Scalar>(a: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let rank = a.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank
        || perm
            .iter()
            .any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::shape(
            "permute",
            format!("{perm:?} is not a permutation of rank {rank}"),
        ));
    }
    let in_strides = strides(a.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| a.shape()[p]).collect();
    // source flat index for every output position
    let n = a.numel();
    let mut src = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        src.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += in_strides[perm[d]];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= in_strides[perm[d]] * out_shape[d];
            idx[d] = 0;
        }
    }
    let x = a.data();
    let data = src.iter().map(|&s| x[s]).collect();
    Ok(Tensor::from_op(
        out_shape,
        data,
        "permute",
        vec![a.clone()],
        move |g, _| {
            let mut gx = vec![T::zero(); g.len()];
            for (&s, &gv) in src.iter().zip(g) {
                gx[s] = gv;
            }
            vec![Some(gx)]
        },
    ))
}

pub fn transpose<T: Scalar>(a: &Tensor<T>, d0: usize, d1: usize) -> Result<Tensor<T>> {
    check_axis("transpose", a.shape(), d0.max(d1))?;
    let mut perm: Vec<usize> = (0..a.rank()).collect();
    perm.swap(d0, d1);
    permute(a, &perm)
}

pub fn concat<T: Scalar>(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat", "no tensors to concatenate"))?;
    check_axis("concat", first.shape(), axis)?;
    for p in &parts[1..] {
        let compatible = p.rank() == first.rank()
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    let (outer, _, inner) = split_axis(first.shape(), axis);
    let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total: usize = lens.iter().sum();
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, &len) in parts.iter().zip(&lens) {
            data.extend_from_slice(&p.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    Ok(Tensor::from_op(
        shape,
        data,
        "concat",
        parts.to_vec(),
        move |g, need| {
            let mut offset = 0;
            lens.iter()
                .zip(need)
                .map(|(&len, &need)| {
                    let start = offset;
                    offset += len;
                    need.then(|| {
                        let mut gp = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let row = o * total * inner;
                            gp.extend_from_slice(
                                &g[row + start * inner..row + (start + len) * inner],
                            );
                        }
                        gp
                    })
                })
                .collect()
        },
    ))
}

/// Slice `len` entries starting at `start` along `axis`.
pub fn narrow<T: Scalar>(
    a: &Tensor<T>,
    axis: usize,
    start: usize,
    len: usize,
) -> Result<Tensor<T>> {
    check_axis("narrow", a.shape(), axis)?;
    let extent = a.shape()[axis];
    if len == 0 || start + len > extent {
        return Err(Error::shape(
            "narrow",
            format!("range {start}..{} exceeds extent {extent}", start + len),
        ));
    }
    let (outer, _, inner) = split_axis(a.shape(), axis);
    let mut shape = a.shape().to_vec();
    shape[axis] = len;
    let x = a.data();
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let row = o * extent * inner;
        data.extend_from_slice(&x[row + start * inner..row + (start + len) * inner]);
    }
    Ok(Tensor::from_op(
        shape,
        data,
        "narrow",
        vec![a.clone()],
        move |g, _| {
            let mut gx = vec![T::zero(); outer * extent * inner];
            for o in 0..outer {
                let row = o * extent * inner;
                gx[row + start * inner..row + (start + len) * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        },
    ))
}

/// Add `b[c]` to every element in channel `c` (axis 1) of `x`.
pub fn bias_add<T: Scalar>(x: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() < 2 || b.rank() != 1 || b.shape()[0] != x.shape()[1] {
        return Err(Error::ShapeMismatch {
            op: "bias_add",
            lhs: x.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (outer, channels, inner) = split_axis(x.shape(), 1);
    let bd = b.data();
    let mut data = x.to_vec();
    for (i, row) in data.chunks_mut(inner.max(1)).enumerate() {
        let bias = bd[i % channels];
        row.iter_mut().for_each(|v| *v += bias);
    }
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        data,
        "bias_add",
        vec![x.clone(), b.clone()],
        move |g, need| {
            let gb = need[1].then(|| {
                let mut gb = vec![T::zero(); channels];
                for o in 0..outer {
                    for (c, acc) in gb.iter_mut().enumerate() {
                        let base = (o * channels + c) * inner;
                        *acc += g[base..base + inner].iter().copied().sum::<T>();
                    }
                }
                gb
            });
            vec![Some(g.to_vec()), gb]
        },
    ))
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let (ad, bd) = (a.data_arc(), b.data_arc());
    let mut c = vec![T::zero(); m * n];
    gemm(m, k, n, &ad, false, &bd, false, &mut c, false);
    Ok(Tensor::from_op(
        vec![m, n],
        c,
        "matmul",
        vec![a.clone(), b.clone()],
        move |g, need| {
            let ga = need[0].then(|| {
                let mut ga = vec![T::zero(); m * k];
                gemm(m, n, k, g, false, &bd, true, &mut ga, false);
                ga
            });
            let gb = need[1].then(|| {
                let mut gb = vec![T::zero(); k * n];
                gemm(k, m, n, &ad, true, g, false, &mut gb, false);
                gb
            });
            vec![ga, gb]
        },
    ))
}

/// Batched matrix product `(B,m,k) · (B,k,n) → (B,m,n)`.
pub fn bmm<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    bmm_t(a, false, b, false)
}

/// Batched `op(a) · op(b)`, where `op` transposes the last two axes when
/// the corresponding flag is set.
pub fn bmm_t<T: Scalar>(
    a: &Tensor<T>,
    trans_a: bool,
    b: &Tensor<T>,
    trans_b: bool,
) -> Result<Tensor<T>> {
    let mismatch = || Error::ShapeMismatch {
        op: "bmm",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] {
        return Err(mismatch());
    }
    let batch = a.shape()[0];
    let (m, k) = if trans_a {
        (a.shape()[2], a.shape()[1])
    } else {
        (a.shape()[1], a.shape()[2])
    };
    let (kb, n) = if trans_b {
        (b.shape()[2], b.shape()[1])
    } else {
        (b.shape()[1], b.shape()[2])
    };
    if k != kb {
        return Err(mismatch());
    }
    let (ad, bd) = (a.data_arc(), b.data_arc());
    let (sa, sb, sc) = (m * k, k * n, m * n);
    let mut c = vec![T::zero(); batch * sc];
    for i in 0..batch {
        let (ai, bi) = (&ad[i * sa..(i + 1) * sa], &bd[i * sb..(i + 1) * sb]);
        gemm(
            m,
            k,
            n,
            ai,
            trans_a,
            bi,
            trans_b,
            &mut c[i * sc..(i + 1) * sc],
            false,
        );
    }
    Ok(Tensor::from_op(
        vec![batch, m, n],
        c,
        "bmm",
        vec![a.clone(), b.clone()],
        move |g, need| {
            let ga = need[0].then(|| {
                let mut ga = vec![T::zero(); batch * sa];
                for i in 0..batch {
                    let (gi, bi) = (&g[i * sc..(i + 1) * sc], &bd[i * sb..(i + 1) * sb]);
                    let out = &mut ga[i * sa..(i + 1) * sa];
                    if trans_a {
                        gemm(k, n, m, bi, trans_b, gi, true, out, false);
                    } else {
                        gemm(m, n, k, gi, false, bi, !trans_b, out, false);
                    }
                }
                ga
            });
            let gb = need[1].then(|| {
                let mut gb = vec![T::zero(); batch * sb];
                for i in 0..batch {
                    let (gi, ai) = (&g[i * sc..(i + 1) * sc], &ad[i * sa..(i + 1) * sa]);
                    let out = &mut gb[i * sb..(i + 1) * sb];
                    if trans_b {
                        gemm(n, m, k, gi, true, ai, trans_a, out, false);
                    } else {
                        gemm(k, m, n, ai, !trans_a, gi, false, out, false);
                    }
                }
                gb
            });
            vec![ga, gb]
        },
    ))
}
