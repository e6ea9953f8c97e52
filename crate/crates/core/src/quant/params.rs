//! Quantization parameters, INT8 tensors, and the FP16 value simulation.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Scale floor applied to degenerate (all-zero) ranges.
pub const SCALE_FLOOR: f32 = 1e-8;

/// Affine per-tensor quantization parameters (int8 domain).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
}

impl QuantParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::Quant {
                detail: format!("scale must be positive and finite, got {}", self.scale),
            });
        }
        if !(-128..=127).contains(&self.zero_point) {
            return Err(Error::Quant {
                detail: format!("zero_point {} outside [-128, 127]", self.zero_point),
            });
        }
        Ok(())
    }

    /// Symmetric params (zero_point 0) for a given absolute maximum.
    pub fn symmetric(abs_max: f32) -> Self {
        QuantParams {
            scale: (abs_max / 127.0).max(SCALE_FLOOR),
            zero_point: 0,
        }
    }

    /// Affine params covering [lo, hi]; the range is widened to include 0
    /// so that zero is exactly representable.
    pub fn from_range(lo: f32, hi: f32) -> Self {
        let lo = lo.min(0.0);
        let hi = hi.max(0.0);
        let scale = ((hi - lo) / 255.0).max(SCALE_FLOOR);
        let zp = (-128.0 - lo as f64 / scale as f64).round() as i32;
        QuantParams {
            scale,
            zero_point: zp.clamp(-128, 127),
        }
    }
}

/// Dense int8 tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i8>,
}

impl QTensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// q = clamp(round(x / scale) + zero_point, -128, 127)
pub fn quantize_tensor(x: &Tensor<f32>, qp: QuantParams) -> Result<QTensor> {
    qp.validate()?;
    let data = x
        .data()
        .iter()
        .map(|&v| {
            let q = (v / qp.scale).round() as i64 + qp.zero_point as i64;
            q.clamp(-128, 127) as i8
        })
        .collect();
    Ok(QTensor {
        shape: x.shape().to_vec(),
        data,
    })
}

/// (q - zero_point) * scale
pub fn dequantize(q: &QTensor, qp: QuantParams) -> Result<Tensor<f32>> {
    qp.validate()?;
    let data: Vec<f32> = q
        .data
        .iter()
        .map(|&v| (v as i32 - qp.zero_point) as f32 * qp.scale)
        .collect();
    Tensor::new(q.shape.clone(), data)
}

/// Per-output-channel symmetric weight quantization:
/// scale_c = max|w_c| / 127 (floored for all-zero channels).
pub fn quantize_weights_per_channel(
    w: &Tensor<f32>,
    out_channel_axis: usize,
) -> Result<(QTensor, Vec<f32>)> {
    let dims = w.shape();
    let out_ch = dims[out_channel_axis];
    let outer: usize = dims[..out_channel_axis].iter().product();
    let inner: usize = dims[out_channel_axis + 1..].iter().product();

    let mut scales = alloc::vec![0.0f32; out_ch];
    for o in 0..outer {
        for c in 0..out_ch {
            let base = (o * out_ch + c) * inner;
            for i in 0..inner {
                scales[c] = scales[c].max(w.data()[base + i].abs());
            }
        }
    }
    for s in scales.iter_mut() {
        *s = (*s / 127.0).max(SCALE_FLOOR);
    }

    let mut data = alloc::vec![0i8; w.len()];
    for o in 0..outer {
        for c in 0..out_ch {
            let base = (o * out_ch + c) * inner;
            let s = scales[c];
            for i in 0..inner {
                let q = (w.data()[base + i] / s).round() as i64;
                data[base + i] = q.clamp(-127, 127) as i8;
            }
        }
    }
    Ok((
        QTensor {
            shape: dims.to_vec(),
            data,
        },
        scales,
    ))
}

/// Per-tensor symmetric weight quantization (for comparison with the
/// per-channel scheme).
pub fn quantize_weights_per_tensor(w: &Tensor<f32>) -> Result<(QTensor, f32)> {
    let abs_max = w.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let scale = (abs_max / 127.0).max(SCALE_FLOOR);
    let data = w
        .data()
        .iter()
        .map(|&v| ((v / scale).round() as i64).clamp(-127, 127) as i8)
        .collect();
    Ok((
        QTensor {
            shape: w.shape().to_vec(),
            data,
        },
        scale,
    ))
}

/// Binary16 overflow threshold (largest finite half value).
pub const F16_MAX: f32 = 65504.0;

/// Round an f32 to the nearest IEEE binary16 value (ties to even),
/// returning the half bits. Values beyond the binary16 range are an error.
pub fn f32_to_f16_bits(x: f32) -> Result<u16> {
    if x.abs() > F16_MAX {
        return Err(Error::Quant {
            detail: format!("{x} overflows binary16"),
        });
    }
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xff) as i32;
    let mant = bits & 0x007f_ffff;

    // Zero and values that underflow entirely.
    let unbiased = exp - 127;
    if exp == 0 || unbiased < -25 {
        return Ok(sign);
    }
    if unbiased >= -14 {
        // Normal half: 10 mantissa bits, round to nearest even on bit 13.
        let half_exp = (unbiased + 15) as u32;
        let mut m = mant >> 13;
        let rest = mant & 0x1fff;
        if rest > 0x1000 || (rest == 0x1000 && (m & 1) == 1) {
            m += 1;
        }
        let out = (half_exp << 10) + m; // mantissa carry bumps the exponent
        if out >= 0x7c00 {
            return Err(Error::Quant {
                detail: format!("{x} overflows binary16"),
            });
        }
        Ok(sign | out as u16)
    } else {
        // Subnormal half: m = round(1.mant * 2^(unbiased + 24)),
        // i.e. full >> (-1 - unbiased) with ties to even.
        let shift = (-1 - unbiased) as u32; // 14..=24
        let full = mant | 0x0080_0000;
        let mut m = full >> shift;
        let rest = full & ((1u32 << shift) - 1);
        let half = 1u32 << (shift - 1);
        if rest > half || (rest == half && (m & 1) == 1) {
            m += 1;
        }
        Ok(sign | m as u16)
    }
}

pub fn f16_bits_to_f32(h: u16) -> f32 {
    let sign = ((h as u32) & 0x8000) << 16;
    let exp = (h >> 10) & 0x1f;
    let mant = (h & 0x3ff) as u32;
    let bits = match exp {
        0 => {
            if mant == 0 {
                sign
            } else {
                // subnormal: normalize
                let mut e = -14i32;
                let mut m = mant;
                while m & 0x400 == 0 {
                    m <<= 1;
                    e -= 1;
                }
                m &= 0x3ff;
                sign | (((e + 127) as u32) << 23) | (m << 13)
            }
        }
        0x1f => sign | 0x7f80_0000 | (mant << 13),
        _ => sign | ((exp as u32 + 127 - 15) << 23) | (mant << 13),
    };
    f32::from_bits(bits)
}

/// Round every element to the nearest binary16 value, keeping f32 storage.
pub fn fp16_round(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut out = alloc::vec![0.0f32; x.len()];
    for (o, &v) in out.iter_mut().zip(x.data()) {
        *o = f16_bits_to_f32(f32_to_f16_bits(v)?);
    }
    Tensor::new(x.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn affine_params_match_worked_example() {
        // Range [-1, 3]: scale 4/255, zero_point round(-128 + 63.75) = -64.
        let qp = QuantParams::from_range(-1.0, 3.0);
        assert!((qp.scale - 4.0 / 255.0).abs() < 1e-9);
        assert_eq!(qp.zero_point, -64);
    }

    #[test]
    fn zero_quantizes_to_zero_point() {
        let qp = QuantParams::symmetric(1.0);
        let q = quantize_tensor(&Tensor::scalar(0.0), qp).unwrap();
        assert_eq!(q.data[0], 0);
        let qp = QuantParams { scale: 0.1, zero_point: 0 };
        let q = quantize_tensor(&Tensor::scalar(0.5), qp).unwrap();
        assert_eq!(q.data[0], 5);
    }

    #[test]
    fn roundtrip_error_is_at_most_half_a_step() {
        let mut r = crate::rng::seeded(3);
        let qp = QuantParams::from_range(-2.0, 2.0);
        let x = Tensor::from_fn([1_000_000], |_| r.gen_range(-2.0..2.0f32));
        let q = quantize_tensor(&x, qp).unwrap();
        let back = dequantize(&q, qp).unwrap();
        let max_err = x.max_abs_diff(&back).unwrap();
        assert!(
            max_err <= qp.scale as f64 / 2.0 + 1e-9,
            "max error {max_err} vs half-step {}",
            qp.scale / 2.0
        );
    }

    #[test]
    fn per_channel_weight_scales() {
        // channel 0 all zeros -> floor; channel 1 max 1.27 -> scale 0.01.
        let w = Tensor::new(
            [2, 1, 1, 2],
            alloc::vec![0.0f32, 0.0, 1.27, -0.635],
        )
        .unwrap();
        let (q, s) = quantize_weights_per_channel(&w, 0).unwrap();
        assert_eq!(s[0], SCALE_FLOOR);
        assert!((s[1] - 0.01).abs() < 1e-7);
        assert_eq!(&q.data[..2], &[0, 0]);
        assert_eq!(q.data[2], 127);
        assert_eq!(q.data[3], -64); // -0.635/0.01 = -63.5 -> -64 (round half away)
    }

    #[test]
    fn fp16_known_values() {
        assert_eq!(
            f16_bits_to_f32(f32_to_f16_bits(1.0).unwrap()),
            1.0
        );
        // Binary16 spacing at 2048 is 2: 2049 rounds to even 2048.
        assert_eq!(
            f16_bits_to_f32(f32_to_f16_bits(2049.0).unwrap()),
            2048.0
        );
        assert_eq!(
            f16_bits_to_f32(f32_to_f16_bits(2051.0).unwrap()),
            2052.0
        );
        assert!(f32_to_f16_bits(70000.0).is_err());
        assert!(f32_to_f16_bits(65520.0).is_err()); // rounds past F16_MAX
    }

    /// Slow arithmetic binary16 oracle: quantize onto the half grid via
    /// scaled rounding in f64, with ties-to-even.
    fn f16_oracle(x: f32) -> f32 {
        if x == 0.0 {
            return x;
        }
        let v = x as f64;
        let mag = v.abs();
        // Find the exponent e with 2^e <= mag < 2^(e+1), clamp to half range.
        let mut e = mag.log2().floor() as i32;
        if mag / 2f64.powi(e) >= 2.0 {
            e += 1;
        }
        let e = e.clamp(-14, 15);
        let quantum = 2f64.powi(e - 10);
        let q = v / quantum;
        // ties to even
        let floor = q.floor();
        let frac = q - floor;
        let rounded = if frac > 0.5 {
            floor + 1.0
        } else if frac < 0.5 {
            floor
        } else if (floor as i64) % 2 == 0 {
            floor
        } else {
            floor + 1.0
        };
        (rounded * quantum) as f32
    }

    #[test]
    fn fp16_matches_arithmetic_oracle_on_random_values() {
        let mut r = crate::rng::seeded(9);
        for _ in 0..100_000 {
            let x = if r.gen_bool(0.5) {
                r.gen_range(-100.0..100.0f32)
            } else {
                r.gen_range(-1.0..1.0f32)
            };
            let got = f16_bits_to_f32(f32_to_f16_bits(x).unwrap());
            let want = f16_oracle(x);
            assert_eq!(got.to_bits(), want.to_bits(), "x={x}");
        }
    }
}
