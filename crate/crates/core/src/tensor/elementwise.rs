//! Pointwise and reduction operations.
//!
//! Binary ops broadcast only between identical shapes or scalar-vs-tensor;
//! anything else is a shape error. Backward helpers live next to their
//! forward so the tape closures stay thin.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

impl<E: Elem> Tensor<E> {
    fn map(&self, op: &'static str, f: impl Fn(E) -> E) -> Result<Tensor<E>> {
        let data: Vec<E> = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(op, self.shape().to_vec(), data)
    }

    /// Elementwise combine; `other` may be a scalar (or this may be).
    pub(crate) fn zip(
        &self,
        other: &Tensor<E>,
        op: &'static str,
        f: impl Fn(E, E) -> E,
    ) -> Result<Tensor<E>> {
        if self.shape() == other.shape() {
            let data: Vec<E> = self
                .data()
                .iter()
                .zip(other.data().iter())
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Tensor::from_op(op, self.shape().to_vec(), data);
        }
        if other.len() == 1 {
            let b = other.item();
            return self.map(op, |a| f(a, b));
        }
        if self.len() == 1 {
            let a = self.item();
            let data: Vec<E> = other.data().iter().map(|&b| f(a, b)).collect();
            return Tensor::from_op(op, other.shape().to_vec(), data);
        }
        Err(Error::shape(
            op,
            format!(
                "operands must match or one be scalar: {} vs {}",
                self.describe(),
                other.describe()
            ),
        ))
    }

    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor<E>> {
        let c = E::of(c);
        self.map("scale", |v| v * c)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor<E>> {
        let c = E::of(c);
        self.map("add_scalar", |v| v + c)
    }

    pub fn neg(&self) -> Result<Tensor<E>> {
        self.map("neg", |v| -v)
    }

    pub fn relu(&self) -> Result<Tensor<E>> {
        self.map("relu", |v| if v > E::zero() { v } else { E::zero() })
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Tensor<E>> {
        let s = E::of(slope);
        self.map("leaky_relu", |v| if v > E::zero() { v } else { v * s })
    }

    pub fn sigmoid(&self) -> Result<Tensor<E>> {
        self.map("sigmoid", sigmoid_scalar)
    }

    pub fn tanh_t(&self) -> Result<Tensor<E>> {
        self.map("tanh", |v| v.tanh())
    }

    /// Natural log; inputs must be positive (callers clamp first).
    pub fn log_t(&self) -> Result<Tensor<E>> {
        self.map("log", |v| v.ln())
    }

    /// Numerically stable ln(1 + e^x).
    pub fn softplus(&self) -> Result<Tensor<E>> {
        self.map("softplus", softplus_scalar)
    }

    pub fn abs_t(&self) -> Result<Tensor<E>> {
        self.map("abs", |v| v.abs())
    }

    pub fn square(&self) -> Result<Tensor<E>> {
        self.map("square", |v| v * v)
    }

    pub fn sqrt_t(&self) -> Result<Tensor<E>> {
        self.map("sqrt", |v| v.sqrt())
    }

    pub fn clamp_t(&self, lo: f64, hi: f64) -> Result<Tensor<E>> {
        let (lo, hi) = (E::of(lo), E::of(hi));
        self.map("clamp", |v| if v < lo { lo } else if v > hi { hi } else { v })
    }

    pub fn sum_all(&self) -> Result<Tensor<E>> {
        let mut acc = E::zero();
        for &v in self.data() {
            acc = acc + v;
        }
        Tensor::from_op("sum", Vec::new(), vec![acc])
    }

    pub fn mean_all(&self) -> Result<Tensor<E>> {
        if self.is_empty() {
            return Err(Error::shape("mean", "mean of empty tensor"));
        }
        let s = self.sum_all()?;
        Ok(Tensor::scalar(s.item() * E::of(1.0 / self.len() as f64)))
    }

    /// Sum of a rank-2 tensor along `axis` (0 or 1).
    pub fn sum_axis2(&self, axis: usize) -> Result<Tensor<E>> {
        let (r, c) = self.dims2()?;
        match axis {
            0 => {
                let mut out = vec![E::zero(); c];
                for i in 0..r {
                    for (j, o) in out.iter_mut().enumerate() {
                        *o = *o + self.data()[i * c + j];
                    }
                }
                Tensor::from_op("sum_axis", [c], out)
            }
            1 => {
                let mut out = vec![E::zero(); r];
                for (i, o) in out.iter_mut().enumerate() {
                    for j in 0..c {
                        *o = *o + self.data()[i * c + j];
                    }
                }
                Tensor::from_op("sum_axis", [r], out)
            }
            _ => Err(Error::shape("sum_axis", "axis must be 0 or 1")),
        }
    }

    /// Row-wise softmax of a rank-2 tensor, with the usual max shift.
    pub fn softmax_rows(&self) -> Result<Tensor<E>> {
        let (r, c) = self.dims2()?;
        if c == 0 {
            return Err(Error::shape("softmax", "empty rows"));
        }
        let mut out = vec![E::zero(); r * c];
        for i in 0..r {
            let row = &self.data()[i * c..(i + 1) * c];
            let mut mx = row[0];
            for &v in row {
                if v > mx {
                    mx = v;
                }
            }
            let orow = &mut out[i * c..(i + 1) * c];
            let mut denom = E::zero();
            for (o, &v) in orow.iter_mut().zip(row.iter()) {
                *o = (v - mx).exp();
                denom = denom + *o;
            }
            for o in orow.iter_mut() {
                *o = *o / denom;
            }
        }
        Tensor::from_op("softmax", [r, c], out)
    }

    /// Elementwise reciprocal; zero inputs surface as a non-finite error.
    pub fn recip(&self) -> Result<Tensor<E>> {
        self.map("recip", |v| E::one() / v)
    }

    /// Scale each row of a rank-2 tensor by the matching entry of `s`.
    pub fn scale_rows(&self, s: &Tensor<E>) -> Result<Tensor<E>> {
        let (r, c) = self.dims2()?;
        if s.len() != r {
            return Err(Error::shape(
                "scale_rows",
                format!("{} rows vs {} scales", r, s.len()),
            ));
        }
        let mut out = vec![E::zero(); r * c];
        for i in 0..r {
            let sv = s.data()[i];
            for j in 0..c {
                out[i * c + j] = self.data()[i * c + j] * sv;
            }
        }
        Tensor::from_op("scale_rows", [r, c], out)
    }

    /// Mean absolute difference between two same-shape tensors.
    pub fn l1_distance(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "l1_distance",
                format!("{} vs {}", self.describe(), other.describe()),
            ));
        }
        let mut acc = E::zero();
        for (&a, &b) in self.data().iter().zip(other.data().iter()) {
            acc = acc + (a - b).abs();
        }
        Tensor::from_op("l1_distance", Vec::new(), vec![acc * E::of(1.0 / self.len() as f64)])
    }

    /// Euclidean norm of the whole tensor.
    pub fn l2_norm(&self) -> Result<Tensor<E>> {
        let mut acc = E::zero();
        for &v in self.data() {
            acc = acc + v * v;
        }
        Tensor::from_op("l2_norm", Vec::new(), vec![acc.sqrt()])
    }
}

pub(crate) fn sigmoid_scalar<E: Elem>(v: E) -> E {
    if v >= E::zero() {
        E::one() / (E::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (E::one() + e)
    }
}

pub(crate) fn softplus_scalar<E: Elem>(v: E) -> E {
    // max(v, 0) + ln(1 + e^{-|v|})
    let m = if v > E::zero() { v } else { E::zero() };
    m + (E::one() + (-v.abs()).exp()).ln()
}

// Backward helpers (used by the tape).

pub fn unary_bwd_by_input<E: Elem>(
    op: &'static str,
    go: &Tensor<E>,
    x: &Tensor<E>,
    df: impl Fn(E) -> E,
) -> Result<Tensor<E>> {
    let data: Vec<E> = go
        .data()
        .iter()
        .zip(x.data().iter())
        .map(|(&g, &v)| g * df(v))
        .collect();
    Tensor::from_op(op, x.shape().to_vec(), data)
}

/// Reduce a gradient back to a scalar operand by summation.
pub fn reduce_to_scalar<E: Elem>(g: &Tensor<E>) -> Result<Tensor<E>> {
    let mut acc = E::zero();
    for &v in g.data() {
        acc = acc + v;
    }
    Tensor::from_op("reduce_grad", Vec::new(), vec![acc])
}

/// Fit `g` to the shape of the original operand (pass-through when shapes
/// matched; sum when the operand was scalar).
pub fn fit_grad<E: Elem>(g: &Tensor<E>, operand_shape: &[usize]) -> Result<Tensor<E>> {
    if g.shape() == operand_shape {
        Ok(g.clone())
    } else {
        reduce_to_scalar(g)?.reshaped(operand_shape.to_vec())
    }
}

pub fn softmax_rows_bwd<E: Elem>(go: &Tensor<E>, y: &Tensor<E>) -> Result<Tensor<E>> {
    let (r, c) = y.dims2()?;
    let mut dx = vec![E::zero(); r * c];
    for i in 0..r {
        let yrow = &y.data()[i * c..(i + 1) * c];
        let grow = &go.data()[i * c..(i + 1) * c];
        let mut dot = E::zero();
        for (&yv, &gv) in yrow.iter().zip(grow.iter()) {
            dot = dot + yv * gv;
        }
        let drow = &mut dx[i * c..(i + 1) * c];
        for ((d, &yv), &gv) in drow.iter_mut().zip(yrow.iter()).zip(grow.iter()) {
            *d = yv * (gv - dot);
        }
    }
    Tensor::from_op("softmax_bwd", [r, c], dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_is_half() {
        let t = Tensor::<f64>::scalar(0.0).sigmoid().unwrap();
        assert_eq!(t.item(), 0.5);
    }

    #[test]
    fn broadcast_only_scalar_or_equal() {
        let a = Tensor::<f32>::zeros([2, 3]);
        let b = Tensor::<f32>::zeros([3, 2]);
        assert!(a.add(&b).is_err());
        let s = Tensor::<f32>::scalar(1.0);
        assert_eq!(a.add(&s).unwrap().shape(), &[2, 3]);
    }

    #[test]
    fn mean_of_constant_is_constant() {
        let t = Tensor::<f64>::full([4, 5], 2.75);
        assert_eq!(t.mean_all().unwrap().item(), 2.75);
    }

    #[test]
    fn log_of_zero_is_an_error_not_inf() {
        let t = Tensor::<f64>::zeros([3]);
        assert!(matches!(t.log_t(), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let t = Tensor::<f64>::new([2, 3], alloc::vec![0.1, 2.0, -1.0, 5.0, 5.0, 5.0]).unwrap();
        let s = t.softmax_rows().unwrap();
        for i in 0..2 {
            let sum: f64 = s.data()[i * 3..(i + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
