//! Exact parameter and multiply-accumulate accounting.
//!
//! Parameters: conv weights + biases + norm gamma/beta. MACs: one forward
//! pass at batch 1, counted as out_elems * in_ch * k^2 per convolution
//! (transpose convolutions analogously over their output elements);
//! normalization, activations, and residual adds are excluded.

use alloc::string::String;
use alloc::vec::Vec;

use crate::graph::spec::{Norm, ResolvedLayer, ResolvedModel};

pub fn layer_params(rl: &ResolvedLayer) -> u64 {
    let s = &rl.spec;
    let w = (s.in_ch * s.out_ch * s.kernel * s.kernel) as u64;
    let b = s.out_ch as u64;
    let norm = match s.norm {
        Norm::BatchNorm => 2 * s.out_ch as u64,
        Norm::None => 0,
    };
    w + b + norm
}

pub fn layer_macs(rl: &ResolvedLayer) -> u64 {
    let s = &rl.spec;
    let out_elems = (s.out_ch * rl.out_hw.0 * rl.out_hw.1) as u64;
    out_elems * (s.in_ch * s.kernel * s.kernel) as u64
}

pub fn count_params(rm: &ResolvedModel) -> u64 {
    rm.layers.iter().map(layer_params).sum()
}

pub fn count_macs(rm: &ResolvedModel) -> u64 {
    rm.layers.iter().map(layer_macs).sum()
}

/// Per-layer breakdown, in layer-index order.
pub fn per_layer(rm: &ResolvedModel) -> Vec<(String, u64, u64)> {
    rm.layers
        .iter()
        .map(|rl| (rl.spec.name.clone(), layer_params(rl), layer_macs(rl)))
        .collect()
}
