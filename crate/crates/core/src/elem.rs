//! Scalar element types for tensors.
//!
//! Models train and run in `f32`; the `f64` instantiation exists for the
//! finite-difference gradient checks, which need more headroom than single
//! precision offers.

use num_traits::Float;

/// Tag carried by serialized tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }
}

/// Scalar type usable as a tensor element.
pub trait Elem:
    Float + num_traits::FromPrimitive + core::fmt::Debug + core::fmt::Display + Send + Sync + 'static
{
    const DTYPE: DType;

    /// Lossy conversion from `f64`, for literals and config constants.
    fn of(v: f64) -> Self {
        Self::from(v).expect("finite f64 converts to any Elem")
    }

    fn as_f64(self) -> f64;
}

impl Elem for f32 {
    const DTYPE: DType = DType::F32;

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Elem for f64 {
    const DTYPE: DType = DType::F64;

    fn as_f64(self) -> f64 {
        self
    }
}
