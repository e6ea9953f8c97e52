//! Small convolutional side networks: the audio-visual sync expert and the
//! visual-quality discriminator.
//!
//! Both are plain conv stacks (no normalization) with leaky-ReLU interiors.
//! The sync expert maps a speech window and a mouth-region crop to unit-norm
//! 64-d embeddings; the discriminator maps a frame to one logit.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::elem::Elem;
use crate::error::Result;
use crate::graph::build::LEAKY_SLOPE;
use crate::graph::spec::Act;
use crate::rng::{self, Prng};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor};

pub const EMBED_DIM: usize = 64;

#[derive(Debug, Clone)]
pub struct StackLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub act: Act,
}

fn sl(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, act: Act) -> StackLayer {
    StackLayer {
        in_ch,
        out_ch,
        kernel,
        stride,
        pad,
        act,
    }
}

/// Sequential convolution stack with per-layer weights and biases.
#[derive(Clone)]
pub struct ConvStack<E: Elem = f32> {
    pub layers: Vec<StackLayer>,
    pub weights: Vec<(Tensor<E>, Tensor<E>)>,
}

impl<E: Elem> ConvStack<E> {
    pub fn build(layers: Vec<StackLayer>, rng: &mut Prng) -> Self {
        let weights = layers
            .iter()
            .map(|l| {
                let fan_in = l.in_ch * l.kernel * l.kernel;
                (
                    rng::kaiming_uniform(rng, fan_in, [l.out_ch, l.in_ch, l.kernel, l.kernel]),
                    Tensor::zeros([l.out_ch]),
                )
            })
            .collect();
        ConvStack { layers, weights }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(self.forward_stages(x)?.pop().expect("non-empty stack"))
    }

    /// Post-activation output of every layer.
    pub fn forward_stages(&self, x: &Tensor<E>) -> Result<Vec<Tensor<E>>> {
        let mut cur = x.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (l, (w, b)) in self.layers.iter().zip(&self.weights) {
            cur = tensor::conv2d(&cur, w, Some(b), l.stride, l.pad)?;
            cur = crate::graph::build::apply_act(l.act, cur)?;
            out.push(cur.clone());
        }
        Ok(out)
    }

    /// Register weights on a tape; pass the result to the `_with` runners.
    pub fn register<'t>(&self, tape: &'t Tape<E>, trainable: bool) -> Vec<(Var<'t, E>, Var<'t, E>)> {
        self.weights
            .iter()
            .map(|(w, b)| (tape.leaf(w.clone(), trainable), tape.leaf(b.clone(), trainable)))
            .collect()
    }

    pub fn forward_with<'t>(
        &self,
        vars: &[(Var<'t, E>, Var<'t, E>)],
        x: Var<'t, E>,
    ) -> Result<Var<'t, E>> {
        Ok(self
            .forward_stages_with(vars, x)?
            .pop()
            .expect("non-empty stack"))
    }

    pub fn forward_stages_with<'t>(
        &self,
        vars: &[(Var<'t, E>, Var<'t, E>)],
        x: Var<'t, E>,
    ) -> Result<Vec<Var<'t, E>>> {
        let mut cur = x;
        let mut out = Vec::with_capacity(self.layers.len());
        for (l, (w, b)) in self.layers.iter().zip(vars) {
            cur = cur.conv2d(*w, Some(*b), l.stride, l.pad)?;
            cur = match l.act {
                Act::Relu => cur.relu()?,
                Act::LeakyRelu => cur.leaky_relu(LEAKY_SLOPE)?,
                Act::Sigmoid => cur.sigmoid()?,
                Act::None => cur,
            };
            out.push(cur);
        }
        Ok(out)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<E>> {
        let mut out = Vec::new();
        for (w, b) in &mut self.weights {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn params(&self) -> Vec<&Tensor<E>> {
        let mut out = Vec::new();
        for (w, b) in &self.weights {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor<E>)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.weights.iter().enumerate() {
            out.push((format!("{prefix}.{i}.weight"), w.clone()));
            out.push((format!("{prefix}.{i}.bias"), b.clone()));
        }
        out
    }
}

/// Rows of a (N, d) matrix scaled to unit Euclidean norm.
pub fn normalize_rows<E: Elem>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let norms = x.square()?.sum_axis2(1)?.add_scalar(1e-12)?.sqrt_t()?;
    x.scale_rows(&norms.recip()?)
}

pub fn normalize_rows_traced<'t, E: Elem>(x: Var<'t, E>) -> Result<Var<'t, E>> {
    let norms = x.square()?.sum_axis2(1)?.add_scalar(1e-12)?.sqrt()?;
    x.scale_rows(norms.recip()?)
}

/// Audio-visual sync expert: two encoders into a shared embedding space.
#[derive(Clone)]
pub struct SyncExpert<E: Elem = f32> {
    pub speech_net: ConvStack<E>,
    pub video_net: ConvStack<E>,
}

/// Speech window encoder + mouth-crop encoder, seeded deterministically.
/// Works on any spatial size >= 8 thanks to the global pooling head.
pub fn build_sync_expert<E: Elem>(seed: u64) -> SyncExpert<E> {
    let mut r = rng::substream(seed, "sync-expert");
    let a = Act::LeakyRelu;
    let speech_net = ConvStack::build(
        alloc::vec![
            sl(1, 16, 3, 1, 1, a),
            sl(16, 32, 3, 2, 1, a),
            sl(32, 64, 3, 2, 1, a),
            sl(64, EMBED_DIM, 3, 2, 1, a),
        ],
        &mut r,
    );
    let video_net = ConvStack::build(
        alloc::vec![
            sl(3, 16, 3, 1, 1, a),
            sl(16, 32, 3, 2, 1, a),
            sl(32, 64, 3, 2, 1, a),
            sl(64, EMBED_DIM, 3, 2, 1, a),
        ],
        &mut r,
    );
    SyncExpert {
        speech_net,
        video_net,
    }
}

impl<E: Elem> SyncExpert<E> {
    /// Unit-norm embedding of speech windows (N,1,rows,cols) -> (N,64).
    pub fn embed_speech(&self, speech: &Tensor<E>) -> Result<Tensor<E>> {
        let y = self.speech_net.forward(speech)?;
        normalize_rows(&tensor::global_avg_pool(&y)?)
    }

    /// Unit-norm embedding of mouth crops (N,3,h,w) -> (N,64).
    pub fn embed_video(&self, mouth: &Tensor<E>) -> Result<Tensor<E>> {
        let y = self.video_net.forward(mouth)?;
        normalize_rows(&tensor::global_avg_pool(&y)?)
    }

    /// Traced video embedding (gradients flow into the frames, and into the
    /// expert weights only when registered trainable).
    pub fn embed_video_traced<'t>(
        &self,
        vars: &[(Var<'t, E>, Var<'t, E>)],
        mouth: Var<'t, E>,
    ) -> Result<Var<'t, E>> {
        let y = self.video_net.forward_with(vars, mouth)?;
        normalize_rows_traced(y.global_avg_pool()?)
    }

    pub fn embed_speech_traced<'t>(
        &self,
        vars: &[(Var<'t, E>, Var<'t, E>)],
        speech: Var<'t, E>,
    ) -> Result<Var<'t, E>> {
        let y = self.speech_net.forward_with(vars, speech)?;
        normalize_rows_traced(y.global_avg_pool()?)
    }
}

/// Visual-quality discriminator: frame -> one logit per batch item.
#[derive(Clone)]
pub struct Discriminator<E: Elem = f32> {
    pub net: ConvStack<E>,
}

pub fn build_discriminator<E: Elem>(seed: u64) -> Discriminator<E> {
    let mut r = rng::substream(seed, "discriminator");
    let a = Act::LeakyRelu;
    Discriminator {
        net: ConvStack::build(
            alloc::vec![
                sl(3, 16, 3, 2, 1, a),
                sl(16, 32, 3, 2, 1, a),
                sl(32, 64, 3, 2, 1, a),
                sl(64, 1, 1, 1, 0, Act::None),
            ],
            &mut r,
        ),
    }
}

impl<E: Elem> Discriminator<E> {
    /// (N,3,h,w) -> (N,) logits.
    pub fn logits(&self, frames: &Tensor<E>) -> Result<Tensor<E>> {
        let y = self.net.forward(frames)?;
        let pooled = tensor::global_avg_pool(&y)?; // (N,1)
        let n = pooled.shape()[0];
        pooled.reshaped([n])
    }

    pub fn logits_traced<'t>(
        &self,
        vars: &[(Var<'t, E>, Var<'t, E>)],
        frames: Var<'t, E>,
    ) -> Result<Var<'t, E>> {
        let y = self.net.forward_with(vars, frames)?;
        let pooled = y.global_avg_pool()?;
        let n = pooled.shape()[0];
        pooled.reshape([n])
    }
}
