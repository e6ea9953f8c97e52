//! Fixed random-weight feature extractor.
//!
//! Four stride-2 stages (16/32/64/64 channels) with frozen Kaiming-uniform
//! weights, pinned to one workbench-wide seed. It stands in for a pretrained
//! perceptual network in the feature/style losses, and its pooled final
//! stage is the embedding used by the visual-fidelity metric.

use alloc::vec::Vec;

use crate::elem::Elem;
use crate::error::Result;
use crate::graph::{ConvStack, StackLayer};
use crate::graph::Act;
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Seed shared by distillation training and the metric embedder.
pub const FEATURE_NET_SEED: u64 = 0xFEA7;

pub const FEATURE_STAGES: usize = 4;

#[derive(Clone)]
pub struct FeatureExtractor<E: Elem = f32> {
    pub stack: ConvStack<E>,
    pub seed: u64,
}

pub fn build_feature_extractor<E: Elem>(seed: u64) -> FeatureExtractor<E> {
    let mut r = rng::substream(seed, "feature-extractor");
    let a = Act::LeakyRelu;
    let mk = |in_ch, out_ch| StackLayer {
        in_ch,
        out_ch,
        kernel: 3,
        stride: 2,
        pad: 1,
        act: a,
    };
    FeatureExtractor {
        stack: ConvStack::build(alloc::vec![mk(3, 16), mk(16, 32), mk(32, 64), mk(64, 64)], &mut r),
        seed,
    }
}

impl<E: Elem> FeatureExtractor<E> {
    /// Frozen forward: the four stage outputs.
    pub fn stages(&self, frames: &Tensor<E>) -> Result<Vec<Tensor<E>>> {
        self.stack.forward_stages(frames)
    }

    /// Traced forward with frozen weights; gradients flow to `frames` only.
    pub fn stages_traced<'t>(
        &self,
        tape: &'t Tape<E>,
        frames: Var<'t, E>,
    ) -> Result<Vec<Var<'t, E>>> {
        let vars = self.stack.register(tape, false);
        self.stack.forward_stages_with(&vars, frames)
    }
}
