//! Dense n-dimensional tensors.
//!
//! Storage is contiguous row-major (NCHW for image tensors) behind an `Arc`,
//! so clones are cheap and forward passes can share weights across threads.
//! Tensors are immutable once built; the optimizer mutates parameters through
//! [`Tensor::make_mut`], which copies only when the storage is shared.
//!
//! Every operation validates shapes up front and scans its output for
//! NaN/Inf: a non-finite value is an error surface here, never a silent
//! state.

mod batchnorm;
mod conv;
mod elementwise;
mod gemm;
mod structural;

pub use batchnorm::{bn_eval, bn_eval_bwd, bn_train, bn_train_bwd, BnSaved};
pub use conv::{
    avg_pool2d, avg_pool2d_bwd, conv2d, conv2d_bwd, conv2d_direct, conv_out_dim,
    conv_transpose2d, conv_transpose2d_bwd, convt_out_dim, global_avg_pool,
    global_avg_pool_bwd, Stride,
};
pub use elementwise::{fit_grad, reduce_to_scalar, softmax_rows_bwd, unary_bwd_by_input};
pub(crate) use elementwise::sigmoid_scalar;
pub use gemm::{gemm_nn, gemm_nt, gemm_tn};
pub use structural::{concat, matmul, matmul_bwd, slice, slice_bwd, transpose2d};

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::elem::Elem;
use crate::error::{Error, Result};

/// Dense tensor with shared, contiguous storage.
#[derive(Clone)]
pub struct Tensor<E: Elem = f32> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
}

impl<E: Elem> Tensor<E> {
    /// Build a tensor, checking that the buffer length matches the shape.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<E>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} wants {n} elements, buffer has {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    /// Like [`Tensor::new`] but also rejects non-finite values, naming `op`.
    /// All op outputs are built through this.
    pub fn from_op(op: &'static str, shape: impl Into<Vec<usize>>, data: Vec<E>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        Tensor::new(shape, data)
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![E::zero(); n]),
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: E) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![v; n]),
        }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(v: E) -> Self {
        Tensor {
            shape: Vec::new(),
            data: Arc::new(vec![v]),
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> E) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new((0..n).map(&mut f).collect()),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Mutable access to the storage, copying if it is shared.
    pub fn make_mut(&mut self) -> &mut [E] {
        let v: &mut Vec<E> = Arc::make_mut(&mut self.data);
        v.as_mut_slice()
    }

    /// The single value of a scalar (or length-1) tensor.
    pub fn item(&self) -> E {
        debug_assert_eq!(self.len(), 1, "item() on tensor of {} elements", self.len());
        self.data[0]
    }

    /// Interpret as (N, C, H, W).
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            other => Err(Error::shape(
                "dims4",
                format!("expected rank-4 tensor, got shape {other:?}"),
            )),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::shape(
                "dims2",
                format!("expected rank-2 tensor, got shape {other:?}"),
            )),
        }
    }

    /// View with a new shape over the same storage.
    pub fn reshaped(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} ({} elems) as {shape:?}", self.shape, self.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn cast<F: Elem>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| F::of(v.as_f64())).collect()),
        }
    }

    /// True when the two tensors have identical shape and bit-identical data.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "max_abs_diff",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn describe(&self) -> String {
        format!("{:?}", self.shape)
    }
}

// Keeping Debug small: shape plus the first few values.
impl<E: Elem> core::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, v) in self.data.iter().take(6).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.len() > 6 {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}
