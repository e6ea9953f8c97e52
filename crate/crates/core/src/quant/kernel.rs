//! Integer convolution kernels: int8 operands, 32-bit accumulation, bias
//! added in the accumulator domain, float-multiplier requantization.
//!
//! Contract: each output element stays within one int8 grid step of the
//! float fake-quant reference (dequantize -> conv -> quantize).

use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::tensor::Stride;

use super::params::{QTensor, QuantParams};

/// Largest |q_in - zp| * |q_w| per multiply.
const MAX_PRODUCT: i64 = 255 * 127;

/// Verify the i32 accumulator cannot overflow for a reduction of
/// `terms` products (the build step calls this for every layer).
pub fn check_accumulator(terms: usize) -> Result<()> {
    let worst = MAX_PRODUCT * terms as i64;
    if worst >= i32::MAX as i64 {
        return Err(Error::Quant {
            detail: format!(
                "reduction of {terms} int8 products can reach {worst}, beyond the i32 accumulator"
            ),
        });
    }
    Ok(())
}

fn requantize(acc: i32, bias_q: i32, multiplier: f32, qp_out: QuantParams) -> i8 {
    let v = (acc + bias_q) as f32 * multiplier;
    let q = v.round() as i64 + qp_out.zero_point as i64;
    q.clamp(-128, 127) as i8
}

/// Integer convolution. Weights are (Cout, Cin, K, K) int8 with
/// per-output-channel scales; bias is float and enters the accumulator as
/// round(bias / (s_in * s_w[co])).
#[allow(clippy::too_many_arguments)]
pub fn qconv2d(
    q_in: &QTensor,
    qp_in: QuantParams,
    q_w: &QTensor,
    w_scales: &[f32],
    bias: &[f32],
    qp_out: QuantParams,
    stride: impl Into<Stride>,
    pad: usize,
) -> Result<QTensor> {
    let stride = stride.into();
    let (n, cin, h, w) = dims4(&q_in.shape, "qconv2d input")?;
    let (cout, wcin, k, _) = dims4(&q_w.shape, "qconv2d weight")?;
    if cin != wcin {
        return Err(Error::Quant {
            detail: format!("qconv2d: input has {cin} channels, weight expects {wcin}"),
        });
    }
    check_accumulator(cin * k * k)?;
    let ho = crate::tensor::conv_out_dim(h, k, stride.0, pad)
        .map_err(|e| Error::Quant { detail: format!("{e}") })?;
    let wo = crate::tensor::conv_out_dim(w, k, stride.1, pad)
        .map_err(|e| Error::Quant { detail: format!("{e}") })?;

    let zp_in = qp_in.zero_point;
    let mut out = vec![0i8; n * cout * ho * wo];
    let mut acc = vec![0i32; ho * wo];
    for item in 0..n {
        let xo = item * cin * h * w;
        for co in 0..cout {
            acc.fill(0);
            for ci in 0..cin {
                let xc = &q_in.data[xo + ci * h * w..xo + (ci + 1) * h * w];
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = q_w.data[((co * cin + ci) * k + kh) * k + kw] as i32;
                        if wv == 0 {
                            continue;
                        }
                        // Padding holds the float value 0.0, whose int8 code
                        // is the zero point, so padded taps contribute 0.
                        for oh in 0..ho {
                            let ih = (oh * stride.0 + kh) as isize - pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let xrow = &xc[ih as usize * w..(ih as usize + 1) * w];
                            let arow = &mut acc[oh * wo..(oh + 1) * wo];
                            for (ow, a) in arow.iter_mut().enumerate() {
                                let iw = (ow * stride.1 + kw) as isize - pad as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                *a += (xrow[iw as usize] as i32 - zp_in) * wv;
                            }
                        }
                    }
                }
            }
            let s_w = w_scales[co];
            let multiplier = qp_in.scale * s_w / qp_out.scale;
            let bias_q = (bias[co] / (qp_in.scale * s_w)).round() as i32;
            let oo = (item * cout + co) * ho * wo;
            for (i, &a) in acc.iter().enumerate() {
                out[oo + i] = requantize(a, bias_q, multiplier, qp_out);
            }
        }
    }
    Ok(QTensor {
        shape: vec![n, cout, ho, wo],
        data: out,
    })
}

/// Integer transpose convolution (weights (Cin, Cout, K, K) int8,
/// per-output-channel scales), scatter-accumulate in i32.
#[allow(clippy::too_many_arguments)]
pub fn qconv_transpose2d(
    q_in: &QTensor,
    qp_in: QuantParams,
    q_w: &QTensor,
    w_scales: &[f32],
    bias: &[f32],
    qp_out: QuantParams,
    stride: impl Into<Stride>,
    pad: usize,
    out_pad: usize,
) -> Result<QTensor> {
    let stride = stride.into();
    let (n, cin, hi, wi) = dims4(&q_in.shape, "qconv_transpose2d input")?;
    let (wcin, cout, k, _) = dims4(&q_w.shape, "qconv_transpose2d weight")?;
    if cin != wcin {
        return Err(Error::Quant {
            detail: format!("qconv_transpose2d: input has {cin} channels, weight expects {wcin}"),
        });
    }
    check_accumulator(cin * k * k)?;
    let ho = crate::tensor::convt_out_dim(hi, k, stride.0, pad, out_pad)
        .map_err(|e| Error::Quant { detail: format!("{e}") })?;
    let wo = crate::tensor::convt_out_dim(wi, k, stride.1, pad, out_pad)
        .map_err(|e| Error::Quant { detail: format!("{e}") })?;

    let zp_in = qp_in.zero_point;
    let mut out = vec![0i8; n * cout * ho * wo];
    let mut acc = vec![0i32; ho * wo];
    for item in 0..n {
        let xo = item * cin * hi * wi;
        for co in 0..cout {
            acc.fill(0);
            for ci in 0..cin {
                let xc = &q_in.data[xo + ci * hi * wi..xo + (ci + 1) * hi * wi];
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = q_w.data[((ci * cout + co) * k + kh) * k + kw] as i32;
                        if wv == 0 {
                            continue;
                        }
                        for ih in 0..hi {
                            let oh = (ih * stride.0 + kh) as isize - pad as isize;
                            if oh < 0 || oh >= ho as isize {
                                continue;
                            }
                            let xrow = &xc[ih * wi..(ih + 1) * wi];
                            let arow = &mut acc[oh as usize * wo..(oh as usize + 1) * wo];
                            for (iw, &xv) in xrow.iter().enumerate() {
                                let ow = (iw * stride.1 + kw) as isize - pad as isize;
                                if ow >= 0 && (ow as usize) < wo {
                                    arow[ow as usize] += (xv as i32 - zp_in) * wv;
                                }
                            }
                        }
                    }
                }
            }
            let s_w = w_scales[co];
            let multiplier = qp_in.scale * s_w / qp_out.scale;
            let bias_q = (bias[co] / (qp_in.scale * s_w)).round() as i32;
            let oo = (item * cout + co) * ho * wo;
            for (i, &a) in acc.iter().enumerate() {
                out[oo + i] = requantize(a, bias_q, multiplier, qp_out);
            }
        }
    }
    Ok(QTensor {
        shape: vec![n, cout, ho, wo],
        data: out,
    })
}

fn dims4(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match shape {
        &[a, b, c, d] => Ok((a, b, c, d)),
        other => Err(Error::Quant {
            detail: format!("{what}: expected rank-4, got {other:?}"),
        }),
    }
}
