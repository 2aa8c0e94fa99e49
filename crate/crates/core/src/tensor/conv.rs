use super::{gemm, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.batch * self.ho * self.wo
    }

    /// Input coordinate for output `o` and kernel tap `k`, if inside the image.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let y = (o * stride + k) as isize - pad as isize;
        (y >= 0 && (y as usize) < extent).then_some(y as usize)
    }
}

/// Unfold `(B,C,H,W)` into a `(C·kh·kw) × (B·Ho·Wo)` patch matrix.
fn im2col<T: Scalar>(x: &[T], g: Geometry) -> Vec<T> {
    let ncols = g.cols();
    let hw_out = g.ho * g.wo;
    let mut cols = vec![T::zero(); g.rows() * ncols];
    for c in 0..g.channels {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * ncols;
                for b in 0..g.batch {
                    let plane = &x[(b * g.channels + c) * g.h * g.w..][..g.h * g.w];
                    let dst = &mut cols[row + b * hw_out..][..hw_out];
                    for oy in 0..g.ho {
                        let Some(y) = Geometry::src(oy, i, g.stride, g.pad, g.h) else {
                            continue;
                        };
                        for ox in 0..g.wo {
                            if let Some(xx) = Geometry::src(ox, j, g.stride, g.pad, g.w) {
                                dst[oy * g.wo + ox] = plane[y * g.w + xx];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patches back into `(B,C,H,W)`.
fn col2im<T: Scalar>(cols: &[T], g: Geometry) -> Vec<T> {
    let ncols = g.cols();
    let hw_out = g.ho * g.wo;
    let mut x = vec![T::zero(); g.batch * g.channels * g.h * g.w];
    for c in 0..g.channels {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * ncols;
                for b in 0..g.batch {
                    let plane = &mut x[(b * g.channels + c) * g.h * g.w..][..g.h * g.w];
                    let src = &cols[row + b * hw_out..][..hw_out];
                    for oy in 0..g.ho {
                        let Some(y) = Geometry::src(oy, i, g.stride, g.pad, g.h) else {
                            continue;
                        };
                        for ox in 0..g.wo {
                            if let Some(xx) = Geometry::src(ox, j, g.stride, g.pad, g.w) {
                                plane[y * g.w + xx] += src[oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `(B,C,N)` → `(C, B·N)`.
fn batch_to_cols<T: Scalar>(x: &[T], batch: usize, channels: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            out[c * batch * n + b * n..][..n].copy_from_slice(&x[(b * channels + c) * n..][..n]);
        }
    }
    out
}

/// `(C, B·N)` → `(B,C,N)`.
fn cols_to_batch<T: Scalar>(x: &[T], batch: usize, channels: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            out[(b * channels + c) * n..][..n].copy_from_slice(&x[c * batch * n + b * n..][..n]);
        }
    }
    out
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], batch: usize, n: usize) {
    let channels = bias.len();
    for b in 0..batch {
        for (c, &bv) in bias.iter().enumerate() {
            out[(b * channels + c) * n..][..n]
                .iter_mut()
                .for_each(|v| *v += bv);
        }
    }
}

fn bias_grad<T: Scalar>(g: &[T], batch: usize, channels: usize, n: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); channels];
    for b in 0..batch {
        for (c, acc) in gb.iter_mut().enumerate() {
            *acc += g[(b * channels + c) * n..][..n].iter().copied().sum::<T>();
        }
    }
    gb
}

fn check_bias<T: Scalar>(
    op: &'static str,
    bias: Option<&Tensor<T>>,
    channels: usize,
) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(Error::ShapeMismatch {
                op,
                lhs: vec![channels],
                rhs: b.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Output extent of a convolution along one axis.
pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride must be positive"));
    }
    if input + 2 * pad < kernel {
        return Err(Error::shape(
            "conv2d",
            format!(
                "kernel {kernel} larger than padded input {}",
                input + 2 * pad
            ),
        ));
    }
    Ok((input + 2 * pad - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transpose2d_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::shape("conv_transpose2d", "stride must be positive"));
    }
    let out = (input as isize - 1) * stride as isize - 2 * pad as isize + kernel as isize;
    if input == 0 || out <= 0 {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("non-positive output extent {out} for input {input}, kernel {kernel}, stride {stride}, pad {pad}"),
        ));
    }
    Ok(out as usize)
}

fn dims4<T: Scalar>(op: &'static str, t: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    t.shape()
        .try_into()
        .map_err(|_| Error::shape(op, format!("{what} must be rank 4, got {:?}", t.shape())))
}

/// 2-D cross-correlation, `input (B,Cin,H,W)`, `weight (Cout,Cin,kh,kw)`,
/// zero padding.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let [batch, cin, h, w] = dims4("conv2d", input, "input")?;
    let [cout, wcin, kh, kw] = dims4("conv2d", weight, "weight")?;
    if wcin != cin {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: input.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    check_bias("conv2d", bias, cout)?;
    let ho = conv2d_output_size(h, kh, stride, padding)?;
    let wo = conv2d_output_size(w, kw, stride, padding)?;
    let g = Geometry {
        batch,
        channels: cin,
        h,
        w,
        kh,
        kw,
        stride,
        pad: padding,
        ho,
        wo,
    };

    let x = input.data_arc();
    let wt = weight.data_arc();
    let cols = im2col(&x, g);
    let n = g.cols();
    let mut out_c = vec![T::zero(); cout * n];
    gemm(
        cout,
        g.rows(),
        n,
        &wt,
        false,
        &cols,
        false,
        &mut out_c,
        false,
    );
    let mut out = cols_to_batch(&out_c, batch, cout, ho * wo);
    if let Some(b) = bias {
        add_bias(&mut out, b.data(), batch, ho * wo);
    }

    let mut inputs = vec![input.clone(), weight.clone()];
    inputs.extend(bias.cloned());
    Ok(Tensor::from_op(
        vec![batch, cout, ho, wo],
        out,
        "conv2d",
        inputs,
        move |gout, need| {
            let gp = batch_to_cols(gout, batch, cout, ho * wo);
            let gx = need[0].then(|| {
                let mut dcols = vec![T::zero(); g.rows() * n];
                gemm(g.rows(), cout, n, &wt, true, &gp, false, &mut dcols, false);
                col2im(&dcols, g)
            });
            let gw = need[1].then(|| {
                let cols = im2col(&x, g);
                let mut gw = vec![T::zero(); cout * g.rows()];
                gemm(cout, n, g.rows(), &gp, false, &cols, true, &mut gw, false);
                gw
            });
            let mut grads = vec![gx, gw];
            if need.len() > 2 {
                grads.push(need[2].then(|| bias_grad(gout, batch, cout, ho * wo)));
            }
            grads
        },
    ))
}

/// Transposed convolution, `input (B,Cin,H,W)`, `weight (Cin,Cout,kh,kw)`;
/// the adjoint of [`conv2d`] with respect to its input.
pub fn conv_transpose2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let [batch, cin, h, w] = dims4("conv_transpose2d", input, "input")?;
    let [wcin, cout, kh, kw] = dims4("conv_transpose2d", weight, "weight")?;
    if wcin != cin {
        return Err(Error::ShapeMismatch {
            op: "conv_transpose2d",
            lhs: input.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    check_bias("conv_transpose2d", bias, cout)?;
    let ho = conv_transpose2d_output_size(h, kh, stride, padding)?;
    let wo = conv_transpose2d_output_size(w, kw, stride, padding)?;
    // geometry of the forward conv that maps the output back onto the input
    let g = Geometry {
        batch,
        channels: cout,
        h: ho,
        w: wo,
        kh,
        kw,
        stride,
        pad: padding,
        ho: h,
        wo: w,
    };

    let xp = batch_to_cols(input.data(), batch, cin, h * w);
    let wt = weight.data_arc();
    let n = g.cols();
    let mut cols = vec![T::zero(); g.rows() * n];
    gemm(g.rows(), cin, n, &wt, true, &xp, false, &mut cols, false);
    let mut out = col2im(&cols, g);
    if let Some(b) = bias {
        add_bias(&mut out, b.data(), batch, ho * wo);
    }

    let mut inputs = vec![input.clone(), weight.clone()];
    inputs.extend(bias.cloned());
    Ok(Tensor::from_op(
        vec![batch, cout, ho, wo],
        out,
        "conv_transpose2d",
        inputs,
        move |gout, need| {
            let gcols = im2col(gout, g);
            let gx = need[0].then(|| {
                let mut gxp = vec![T::zero(); cin * n];
                gemm(cin, g.rows(), n, &wt, false, &gcols, false, &mut gxp, false);
                cols_to_batch(&gxp, batch, cin, h * w)
            });
            let gw = need[1].then(|| {
                let mut gw = vec![T::zero(); cin * g.rows()];
                gemm(cin, n, g.rows(), &xp, false, &gcols, true, &mut gw, false);
                gw
            });
            let mut grads = vec![gx, gw];
            if need.len() > 2 {
                grads.push(need[2].then(|| bias_grad(gout, batch, cout, ho * wo)));
            }
            grads
        },
    ))
}

/// Windowed maximum. Ties resolve to the first element in row-major window
/// order, which alone receives the gradient.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, kernel: usize, stride: usize) -> Result<Tensor<T>> {
    let [batch, channels, h, w] = dims4("maxpool2d", input, "input")?;
    if kernel == 0 || stride == 0 {
        return Err(Error::shape(
            "maxpool2d",
            "kernel and stride must be positive",
        ));
    }
    if kernel > h || kernel > w {
        return Err(Error::shape(
            "maxpool2d",
            format!("kernel {kernel} exceeds spatial extent {h}×{w}"),
        ));
    }
    let ho = (h - kernel) / stride + 1;
    let wo = (w - kernel) / stride + 1;
    let x = input.data();
    let planes = batch * channels;
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut argmax = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let plane = &x[p * h * w..][..h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = oy * stride * w + ox * stride;
                for i in 0..kernel {
                    for j in 0..kernel {
                        let idx = (oy * stride + i) * w + ox * stride + j;
                        if plane[idx] > plane[best] {
                            best = idx;
                        }
                    }
                }
                out.push(plane[best]);
                argmax.push(p * h * w + best);
            }
        }
    }
    let n_in = input.numel();
    Ok(Tensor::from_op(
        vec![batch, channels, ho, wo],
        out,
        "maxpool2d",
        vec![input.clone()],
        move |g, _| {
            let mut gx = vec![T::zero(); n_in];
            for (&src, &gv) in argmax.iter().zip(g) {
                gx[src] += gv;
            }
            vec![Some(gx)]
        },
    ))
}
