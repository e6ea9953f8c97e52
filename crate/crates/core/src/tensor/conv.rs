//! 2-D convolution, transpose convolution, and pooling with backward passes.
//!
//! The production path lowers to im2col plus the GEMM kernels; the direct
//! nested-loop form is kept as the auditable reference ([`conv2d_direct`])
//! and the two must agree within 1e-5. Transpose convolution is the exact
//! adjoint of convolution with matching parameters.
//!
//! Weight layouts follow the usual convention: `(out, in, k, k)` for
//! convolution and `(in, out, k, k)` for transpose convolution. Strides may
//! differ per axis (the speech encoder needs that); padding is symmetric.

use alloc::format;
use alloc::vec;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::runtime;
use crate::tensor::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::Tensor;

/// Per-axis stride, constructible from a single int for the square case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stride(pub usize, pub usize);

impl From<usize> for Stride {
    fn from(s: usize) -> Self {
        Stride(s, s)
    }
}

impl From<(usize, usize)> for Stride {
    fn from(s: (usize, usize)) -> Self {
        Stride(s.0, s.1)
    }
}

/// Output extent of a convolution along one axis.
pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::shape("conv2d", "kernel and stride must be positive"));
    }
    if input + 2 * pad < k {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {k} does not fit input {input} with padding {pad}"),
        ));
    }
    Ok((input + 2 * pad - k) / stride + 1)
}

/// Output extent of a transpose convolution along one axis.
pub fn convt_out_dim(
    input: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::shape(
            "conv_transpose2d",
            "kernel and stride must be positive",
        ));
    }
    if out_pad >= stride {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("output_padding {out_pad} must be < stride {stride}"),
        ));
    }
    let full = (input - 1) * stride + k + out_pad;
    if full < 2 * pad + 1 {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("padding {pad} too large for input {input} with kernel {k}"),
        ));
    }
    Ok(full - 2 * pad)
}

/// Gather one item into column-major patches:
/// `cols[(ci*K + kh)*K + kw][oh*wo + ow] = x[ci][oh*sh + kh - p][ow*sw + kw - p]`
/// with zeros outside the input.
#[allow(clippy::too_many_arguments)]
fn im2col<E: Elem>(
    x: &[E],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: Stride,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [E],
) {
    let p = ho * wo;
    debug_assert_eq!(cols.len(), cin * k * k * p);
    for ci in 0..cin {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let row = ((ci * k + kh) * k + kw) * p;
                for oh in 0..ho {
                    let ih = (oh * stride.0 + kh) as isize - pad as isize;
                    let dst = &mut cols[row + oh * wo..row + (oh + 1) * wo];
                    if ih < 0 || ih >= h as isize {
                        dst.fill(E::zero());
                        continue;
                    }
                    let xrow = &xc[ih as usize * w..(ih as usize + 1) * w];
                    for (ow, d) in dst.iter_mut().enumerate() {
                        let iw = (ow * stride.1 + kw) as isize - pad as isize;
                        *d = if iw < 0 || iw >= w as isize {
                            E::zero()
                        } else {
                            xrow[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add patches back: the adjoint of [`im2col`]. `src_h`/`src_w` is
/// the patch grid, `dst_h`/`dst_w` the target plane; contributions landing
/// outside the target are dropped (adjoint of zero padding).
#[allow(clippy::too_many_arguments)]
fn col2im_acc<E: Elem>(
    cols: &[E],
    ch: usize,
    k: usize,
    stride: Stride,
    pad: usize,
    src_h: usize,
    src_w: usize,
    dst_h: usize,
    dst_w: usize,
    dst: &mut [E],
) {
    let p = src_h * src_w;
    debug_assert_eq!(cols.len(), ch * k * k * p);
    debug_assert_eq!(dst.len(), ch * dst_h * dst_w);
    for ci in 0..ch {
        let dc = &mut dst[ci * dst_h * dst_w..(ci + 1) * dst_h * dst_w];
        for kh in 0..k {
            for kw in 0..k {
                let row = ((ci * k + kh) * k + kw) * p;
                for sh in 0..src_h {
                    let dh = (sh * stride.0 + kh) as isize - pad as isize;
                    if dh < 0 || dh >= dst_h as isize {
                        continue;
                    }
                    let drow = &mut dc[dh as usize * dst_w..(dh as usize + 1) * dst_w];
                    let srow = &cols[row + sh * src_w..row + (sh + 1) * src_w];
                    for (sw, &v) in srow.iter().enumerate() {
                        let dw = (sw * stride.1 + kw) as isize - pad as isize;
                        if dw >= 0 && dw < dst_w as isize {
                            drow[dw as usize] = drow[dw as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_weight<E: Elem>(op: &'static str, w: &Tensor<E>) -> Result<(usize, usize, usize)> {
    let (o, i, kh, kw) = w.dims4()?;
    if kh != kw {
        return Err(Error::shape(op, format!("kernel must be square, got {kh}x{kw}")));
    }
    Ok((o, i, kh))
}

fn check_bias<E: Elem>(op: &'static str, b: Option<&Tensor<E>>, cout: usize) -> Result<()> {
    if let Some(b) = b {
        if b.len() != cout {
            return Err(Error::shape(
                op,
                format!("bias has {} entries, expected {cout}", b.len()),
            ));
        }
    }
    Ok(())
}

/// Convolution forward, im2col + GEMM path.
pub fn conv2d<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: Option<&Tensor<E>>,
    stride: impl Into<Stride>,
    pad: usize,
) -> Result<Tensor<E>> {
    let stride = stride.into();
    let (n, cin, h, wd) = x.dims4()?;
    let (cout, wcin, k) = check_conv_weight("conv2d", w)?;
    if cin != wcin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels, weight expects {wcin}"),
        ));
    }
    check_bias("conv2d", b, cout)?;
    let ho = conv_out_dim(h, k, stride.0, pad)?;
    let wo = conv_out_dim(wd, k, stride.1, pad)?;
    let (kd, p) = (cin * k * k, ho * wo);

    let identity_cols = k == 1 && stride == Stride(1, 1) && pad == 0;
    let mut cols_all = vec![E::zero(); if identity_cols { 0 } else { n * kd * p }];
    if !identity_cols {
        runtime::par_chunks_mut(&mut cols_all, kd * p, |item, cols| {
            let xi = &x.data()[item * cin * h * wd..(item + 1) * cin * h * wd];
            im2col(xi, cin, h, wd, k, stride, pad, ho, wo, cols);
        });
    }

    let mut out = vec![E::zero(); n * cout * p];
    runtime::par_chunks_mut(&mut out, cout * p, |item, oi| {
        if let Some(b) = b {
            for (co, orow) in oi.chunks_mut(p).enumerate() {
                orow.fill(b.data()[co]);
            }
        }
        let cols = if identity_cols {
            &x.data()[item * kd * p..(item + 1) * kd * p]
        } else {
            &cols_all[item * kd * p..(item + 1) * kd * p]
        };
        gemm_nn(cout, kd, p, w.data(), cols, oi);
    });
    Tensor::from_op("conv2d", [n, cout, ho, wo], out)
}

/// Direct blocked-loop convolution: the reference algorithm the fast path
/// is checked against.
pub fn conv2d_direct<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: Option<&Tensor<E>>,
    stride: impl Into<Stride>,
    pad: usize,
) -> Result<Tensor<E>> {
    let stride = stride.into();
    let (n, cin, h, wd) = x.dims4()?;
    let (cout, wcin, k) = check_conv_weight("conv2d", w)?;
    if cin != wcin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels, weight expects {wcin}"),
        ));
    }
    check_bias("conv2d", b, cout)?;
    let ho = conv_out_dim(h, k, stride.0, pad)?;
    let wo = conv_out_dim(wd, k, stride.1, pad)?;

    let mut out = vec![E::zero(); n * cout * ho * wo];
    for item in 0..n {
        let xi = &x.data()[item * cin * h * wd..];
        for co in 0..cout {
            let wf = &w.data()[co * cin * k * k..];
            let base = b.map_or(E::zero(), |b| b.data()[co]);
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = base;
                    for ci in 0..cin {
                        for kh in 0..k {
                            let ih = (oh * stride.0 + kh) as isize - pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for kw in 0..k {
                                let iw = (ow * stride.1 + kw) as isize - pad as isize;
                                if iw < 0 || iw >= wd as isize {
                                    continue;
                                }
                                acc = acc
                                    + xi[(ci * h + ih as usize) * wd + iw as usize]
                                        * wf[(ci * k + kh) * k + kw];
                            }
                        }
                    }
                    out[((item * cout + co) * ho + oh) * wo + ow] = acc;
                }
            }
        }
    }
    Tensor::from_op("conv2d", [n, cout, ho, wo], out)
}

/// Gradients of [`conv2d`] w.r.t. input, weight, and bias. Only the slots
/// flagged in `needs` are computed.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd<E: Elem>(
    go: &Tensor<E>,
    x: &Tensor<E>,
    w: &Tensor<E>,
    stride: impl Into<Stride>,
    pad: usize,
    needs: (bool, bool, bool),
) -> Result<(Option<Tensor<E>>, Option<Tensor<E>>, Option<Tensor<E>>)> {
    let stride = stride.into();
    let (n, cin, h, wd) = x.dims4()?;
    let (cout, _, k) = check_conv_weight("conv2d", w)?;
    let (_, _, ho, wo) = go.dims4()?;
    let (kd, p) = (cin * k * k, ho * wo);

    let db = if needs.2 {
        let mut db = vec![E::zero(); cout];
        for item in 0..n {
            for (co, d) in db.iter_mut().enumerate() {
                let g = &go.data()[(item * cout + co) * p..(item * cout + co + 1) * p];
                for &v in g {
                    *d = *d + v;
                }
            }
        }
        Some(Tensor::from_op("conv2d_bwd", [cout], db)?)
    } else {
        None
    };

    let mut cols = vec![E::zero(); kd * p];
    let dw = if needs.1 {
        let mut dw = vec![E::zero(); cout * kd];
        for item in 0..n {
            let xi = &x.data()[item * cin * h * wd..(item + 1) * cin * h * wd];
            im2col(xi, cin, h, wd, k, stride, pad, ho, wo, &mut cols);
            let gi = &go.data()[item * cout * p..(item + 1) * cout * p];
            gemm_nt(cout, p, kd, gi, &cols, &mut dw);
        }
        Some(Tensor::from_op("conv2d_bwd", [cout, cin, k, k], dw)?)
    } else {
        None
    };

    let dx = if needs.0 {
        let mut dx = vec![E::zero(); n * cin * h * wd];
        runtime::par_chunks_mut(&mut dx, cin * h * wd, |item, dxi| {
            let gi = &go.data()[item * cout * p..(item + 1) * cout * p];
            let mut cg = vec![E::zero(); kd * p];
            gemm_tn(kd, cout, p, w.data(), gi, &mut cg);
            col2im_acc(&cg, cin, k, stride, pad, ho, wo, h, wd, dxi);
        });
        Some(Tensor::from_op("conv2d_bwd", [n, cin, h, wd], dx)?)
    } else {
        None
    };

    Ok((dx, dw, db))
}

/// Transpose convolution forward; the adjoint of [`conv2d`] with the same
/// stride/padding. `out_pad` disambiguates the output size under stride > 1.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: Option<&Tensor<E>>,
    stride: impl Into<Stride>,
    pad: usize,
    out_pad: usize,
) -> Result<Tensor<E>> {
    let stride = stride.into();
    let (n, cin, hi, wi) = x.dims4()?;
    let (wcin, cout, k) = check_conv_weight("conv_transpose2d", w)?;
    if cin != wcin {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("input has {cin} channels, weight expects {wcin}"),
        ));
    }
    check_bias("conv_transpose2d", b, cout)?;
    let ho = convt_out_dim(hi, k, stride.0, pad, out_pad)?;
    let wo = convt_out_dim(wi, k, stride.1, pad, out_pad)?;
    let (kd, pin) = (cout * k * k, hi * wi);

    let mut out = vec![E::zero(); n * cout * ho * wo];
    runtime::par_chunks_mut(&mut out, cout * ho * wo, |item, oi| {
        let xi = &x.data()[item * cin * pin..(item + 1) * cin * pin];
        let mut cols = vec![E::zero(); kd * pin];
        gemm_tn(kd, cin, pin, w.data(), xi, &mut cols);
        // Scatter into the padded plane, then the crop below drops `pad`.
        col2im_acc(&cols, cout, k, stride, pad, hi, wi, ho, wo, oi);
        if let Some(b) = b {
            for (co, orow) in oi.chunks_mut(ho * wo).enumerate() {
                let bv = b.data()[co];
                for v in orow {
                    *v = *v + bv;
                }
            }
        }
    });
    Tensor::from_op("conv_transpose2d", [n, cout, ho, wo], out)
}

/// Gradients of [`conv_transpose2d`]. The input gradient is exactly a
/// forward convolution of the output gradient with the same weight.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_bwd<E: Elem>(
    go: &Tensor<E>,
    x: &Tensor<E>,
    w: &Tensor<E>,
    stride: impl Into<Stride>,
    pad: usize,
    needs: (bool, bool, bool),
) -> Result<(Option<Tensor<E>>, Option<Tensor<E>>, Option<Tensor<E>>)> {
    let stride = stride.into();
    let (n, cin, hi, wi) = x.dims4()?;
    let (_, cout, k) = check_conv_weight("conv_transpose2d", w)?;
    let (_, _, ho, wo) = go.dims4()?;
    let (kd, pin) = (cout * k * k, hi * wi);

    let db = if needs.2 {
        let mut db = vec![E::zero(); cout];
        for item in 0..n {
            for (co, d) in db.iter_mut().enumerate() {
                let g = &go.data()[(item * cout + co) * ho * wo..(item * cout + co + 1) * ho * wo];
                for &v in g {
                    *d = *d + v;
                }
            }
        }
        Some(Tensor::from_op("conv_transpose2d_bwd", [cout], db)?)
    } else {
        None
    };

    // dX = conv2d(go, w) with (in,out) roles swapped in the weight view.
    let dx = if needs.0 {
        let mut dx = vec![E::zero(); n * cin * pin];
        runtime::par_chunks_mut(&mut dx, cin * pin, |item, dxi| {
            let gi = &go.data()[item * cout * ho * wo..(item + 1) * cout * ho * wo];
            let mut cols = vec![E::zero(); kd * pin];
            im2col(gi, cout, ho, wo, k, stride, pad, hi, wi, &mut cols);
            gemm_nn(cin, kd, pin, w.data(), &cols, dxi);
        });
        Some(Tensor::from_op("conv_transpose2d_bwd", [n, cin, hi, wi], dx)?)
    } else {
        None
    };

    let dw = if needs.1 {
        let mut dw = vec![E::zero(); cin * kd];
        let mut cols = vec![E::zero(); kd * pin];
        for item in 0..n {
            let gi = &go.data()[item * cout * ho * wo..(item + 1) * cout * ho * wo];
            im2col(gi, cout, ho, wo, k, stride, pad, hi, wi, &mut cols);
            let xi = &x.data()[item * cin * pin..(item + 1) * cin * pin];
            gemm_nt(cin, pin, kd, xi, &cols, &mut dw);
        }
        Some(Tensor::from_op("conv_transpose2d_bwd", [cin, cout, k, k], dw)?)
    } else {
        None
    };

    Ok((dx, dw, db))
}

/// Average pooling with a square window, no padding.
pub fn avg_pool2d<E: Elem>(x: &Tensor<E>, k: usize, stride: usize) -> Result<Tensor<E>> {
    let (n, c, h, w) = x.dims4()?;
    let ho = conv_out_dim(h, k, stride, 0)?;
    let wo = conv_out_dim(w, k, stride, 0)?;
    let inv = E::of(1.0 / (k * k) as f64);
    let mut out = vec![E::zero(); n * c * ho * wo];
    for nc in 0..n * c {
        let xi = &x.data()[nc * h * w..(nc + 1) * h * w];
        let oi = &mut out[nc * ho * wo..(nc + 1) * ho * wo];
        for oh in 0..ho {
            for ow in 0..wo {
                let mut acc = E::zero();
                for kh in 0..k {
                    for kw in 0..k {
                        acc = acc + xi[(oh * stride + kh) * w + ow * stride + kw];
                    }
                }
                oi[oh * wo + ow] = acc * inv;
            }
        }
    }
    Tensor::from_op("avg_pool2d", [n, c, ho, wo], out)
}

pub fn avg_pool2d_bwd<E: Elem>(
    go: &Tensor<E>,
    in_shape: &[usize],
    k: usize,
    stride: usize,
) -> Result<Tensor<E>> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (_, _, ho, wo) = go.dims4()?;
    let inv = E::of(1.0 / (k * k) as f64);
    let mut dx = vec![E::zero(); n * c * h * w];
    for nc in 0..n * c {
        let gi = &go.data()[nc * ho * wo..(nc + 1) * ho * wo];
        let di = &mut dx[nc * h * w..(nc + 1) * h * w];
        for oh in 0..ho {
            for ow in 0..wo {
                let g = gi[oh * wo + ow] * inv;
                for kh in 0..k {
                    for kw in 0..k {
                        let idx = (oh * stride + kh) * w + ow * stride + kw;
                        di[idx] = di[idx] + g;
                    }
                }
            }
        }
    }
    Tensor::from_op("avg_pool2d_bwd", [n, c, h, w], dx)
}

/// Mean over the spatial plane: (N, C, H, W) -> (N, C).
pub fn global_avg_pool<E: Elem>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, c, h, w) = x.dims4()?;
    let inv = E::of(1.0 / (h * w) as f64);
    let mut out = vec![E::zero(); n * c];
    for (nc, o) in out.iter_mut().enumerate() {
        let xi = &x.data()[nc * h * w..(nc + 1) * h * w];
        let mut acc = E::zero();
        for &v in xi {
            acc = acc + v;
        }
        *o = acc * inv;
    }
    Tensor::from_op("global_avg_pool", [n, c], out)
}

pub fn global_avg_pool_bwd<E: Elem>(go: &Tensor<E>, in_shape: &[usize]) -> Result<Tensor<E>> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let inv = E::of(1.0 / (h * w) as f64);
    let mut dx = vec![E::zero(); n * c * h * w];
    for nc in 0..n * c {
        let g = go.data()[nc] * inv;
        dx[nc * h * w..(nc + 1) * h * w].fill(g);
    }
    Tensor::from_op("global_avg_pool_bwd", [n, c, h, w], dx)
}
