//! Concatenation, slicing, transposition, and matrix multiplication.

use alloc::format;
use alloc::vec;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::Tensor;

/// Concatenate along `axis`; all non-axis dims must agree.
pub fn concat<E: Elem>(parts: &[&Tensor<E>], axis: usize) -> Result<Tensor<E>> {
    if parts.is_empty() {
        return Err(Error::shape("concat", "no operands"));
    }
    let rank = parts[0].rank();
    if axis >= rank {
        return Err(Error::shape(
            "concat",
            format!("axis {axis} out of range for rank {rank}"),
        ));
    }
    let mut out_shape = parts[0].shape().to_vec();
    out_shape[axis] = 0;
    for p in parts {
        if p.rank() != rank {
            return Err(Error::shape("concat", "rank mismatch between operands"));
        }
        for d in 0..rank {
            if d != axis && p.shape()[d] != parts[0].shape()[d] {
                return Err(Error::shape(
                    "concat",
                    format!(
                        "dim {d} differs: {} vs {}",
                        p.shape()[d],
                        parts[0].shape()[d]
                    ),
                ));
            }
        }
        out_shape[axis] += p.shape()[axis];
    }

    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let total_axis = out_shape[axis];
    let mut out = vec![E::zero(); outer * total_axis * inner];
    let mut offset = 0;
    for p in parts {
        let pa = p.shape()[axis];
        for o in 0..outer {
            let src = &p.data()[o * pa * inner..(o + 1) * pa * inner];
            let dst_start = (o * total_axis + offset) * inner;
            out[dst_start..dst_start + pa * inner].copy_from_slice(src);
        }
        offset += pa;
    }
    Tensor::from_op("concat", out_shape, out)
}

/// Contiguous slice `[start, start+len)` along `axis`.
pub fn slice<E: Elem>(x: &Tensor<E>, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
    let rank = x.rank();
    if axis >= rank {
        return Err(Error::shape(
            "slice",
            format!("axis {axis} out of range for rank {rank}"),
        ));
    }
    let dim = x.shape()[axis];
    if start + len > dim {
        return Err(Error::shape(
            "slice",
            format!("[{start}, {}) exceeds dim {dim}", start + len),
        ));
    }
    let outer: usize = x.shape()[..axis].iter().product();
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let mut out_shape = x.shape().to_vec();
    out_shape[axis] = len;
    let mut out = vec![E::zero(); outer * len * inner];
    for o in 0..outer {
        let src = &x.data()[(o * dim + start) * inner..(o * dim + start + len) * inner];
        out[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
    }
    Tensor::from_op("slice", out_shape, out)
}

/// Scatter a slice gradient back into a zero tensor of the input shape.
pub fn slice_bwd<E: Elem>(
    go: &Tensor<E>,
    in_shape: &[usize],
    axis: usize,
    start: usize,
) -> Result<Tensor<E>> {
    let dim = in_shape[axis];
    let len = go.shape()[axis];
    let outer: usize = in_shape[..axis].iter().product();
    let inner: usize = in_shape[axis + 1..].iter().product();
    let mut dx = vec![E::zero(); in_shape.iter().product()];
    for o in 0..outer {
        let dst = &mut dx[(o * dim + start) * inner..(o * dim + start + len) * inner];
        dst.copy_from_slice(&go.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_op("slice_bwd", in_shape.to_vec(), dx)
}

/// Transpose of a rank-2 tensor (copying).
pub fn transpose2d<E: Elem>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let (r, c) = x.dims2()?;
    let mut out = vec![E::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x.data()[i * c + j];
        }
    }
    Tensor::from_op("transpose2d", [c, r], out)
}

/// Rank-2 matrix product.
pub fn matmul<E: Elem>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let (m, ka) = a.dims2()?;
    let (kb, n) = b.dims2()?;
    if ka != kb {
        return Err(Error::shape(
            "matmul",
            format!("inner dims differ: {ka} vs {kb}"),
        ));
    }
    let mut out = vec![E::zero(); m * n];
    gemm_nn(m, ka, n, a.data(), b.data(), &mut out);
    Tensor::from_op("matmul", [m, n], out)
}

/// Gradients of [`matmul`]: dA = G B^T, dB = A^T G.
pub fn matmul_bwd<E: Elem>(
    go: &Tensor<E>,
    a: &Tensor<E>,
    b: &Tensor<E>,
    needs: (bool, bool),
) -> Result<(Option<Tensor<E>>, Option<Tensor<E>>)> {
    let (m, k) = a.dims2()?;
    let (_, n) = b.dims2()?;
    let da = if needs.0 {
        let mut da = vec![E::zero(); m * k];
        gemm_nt(m, n, k, go.data(), b.data(), &mut da);
        Some(Tensor::from_op("matmul_bwd", [m, k], da)?)
    } else {
        None
    };
    let db = if needs.1 {
        let mut db = vec![E::zero(); k * n];
        gemm_tn(k, m, n, a.data(), go.data(), &mut db);
        Some(Tensor::from_op("matmul_bwd", [k, n], db)?)
    } else {
        None
    };
    Ok((da, db))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_channel_axis() {
        let a = Tensor::<f32>::full([1, 2, 4, 4], 1.0);
        let b = Tensor::<f32>::full([1, 2, 4, 4], 2.0);
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[1, 4, 4, 4]);
        assert_eq!(c.data()[0], 1.0);
        assert_eq!(c.data()[2 * 16], 2.0);
    }

    #[test]
    fn slice_roundtrips_through_bwd() {
        let x = Tensor::<f64>::from_fn([2, 3, 4], |i| i as f64);
        let s = slice(&x, 1, 1, 2).unwrap();
        assert_eq!(s.shape(), &[2, 2, 4]);
        assert_eq!(s.data()[0], 4.0);
        let back = slice_bwd(&s, x.shape(), 1, 1).unwrap();
        assert_eq!(back.shape(), x.shape());
        assert_eq!(back.data()[4], 4.0);
        assert_eq!(back.data()[0], 0.0);
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let mut rng = crate::rng::seeded(3);
        use rand::Rng;
        let a = Tensor::<f64>::from_fn([4, 5], |_| rng.gen_range(-1.0..1.0));
        let b = Tensor::<f64>::from_fn([5, 3], |_| rng.gen_range(-1.0..1.0));
        let c = matmul(&a, &b).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let mut want = 0.0;
                for p in 0..5 {
                    want += a.data()[i * 5 + p] * b.data()[p * 3 + j];
                }
                assert!((c.data()[i * 3 + j] - want).abs() < 1e-5);
            }
        }
    }
}
