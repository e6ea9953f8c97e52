//! Seeded, portable randomness.
//!
//! All stochastic choices in the workbench (weight init, batch sampling,
//! synthetic rendering) flow through ChaCha8 streams so that a fixed seed
//! reproduces runs bit-for-bit on any platform.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::elem::Elem;
use crate::tensor::Tensor;

pub type Prng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Prng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream for a named sub-purpose of `seed`.
pub fn substream(seed: u64, tag: &str) -> Prng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ h);
    rng.set_stream(h);
    rng
}

pub fn uniform<E: Elem>(rng: &mut Prng, lo: f64, hi: f64, shape: impl Into<Vec<usize>>) -> Tensor<E> {
    let shape = shape.into();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| E::of(rng.gen::<f64>() * (hi - lo) + lo))
        .collect();
    Tensor::new(shape, data).expect("shape/product consistent")
}

/// Kaiming-uniform (fan-in) initialization for conv kernels:
/// U(-b, b) with b = sqrt(6 / fan_in).
pub fn kaiming_uniform<E: Elem>(
    rng: &mut Prng,
    fan_in: usize,
    shape: impl Into<Vec<usize>>,
) -> Tensor<E> {
    let b = (6.0 / fan_in.max(1) as f64).sqrt();
    uniform(rng, -b, b, shape)
}
