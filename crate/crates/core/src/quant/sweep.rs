//! Layer-wise quantization sensitivity sweep and assignment selection.
//!
//! The sweep moves the INT8/FP16 boundary through the stable layer order
//! one layer at a time and scores each assignment by the Fréchet distance
//! between the FP32 model's outputs and the mixed model's outputs on a
//! held-out evaluation set. Point 0 is the all-INT8 endpoint; the last
//! point is all-FP16.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::BuiltModel;
use crate::metrics::proxy_fid;
use crate::tensor::Tensor;

use alloc::collections::BTreeMap;
use alloc::string::String;

use super::exec::{build_quantized_model, PrecisionAssignment};
use super::params::QuantParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    /// FP16 region grows from the front of the layer order.
    PrefixFp16,
    /// FP16 region grows from the back (decoder side); the default.
    SuffixFp16,
}

impl SweepAxis {
    pub fn token(self) -> &'static str {
        match self {
            SweepAxis::PrefixFp16 => "prefix_fp16",
            SweepAxis::SuffixFp16 => "suffix_fp16",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "prefix_fp16" => Ok(SweepAxis::PrefixFp16),
            "suffix_fp16" => Ok(SweepAxis::SuffixFp16),
            other => Err(Error::Quant {
                detail: format!("unknown sweep axis '{other}'"),
            }),
        }
    }

    pub fn assignment(self, model: &BuiltModel<f32>, boundary: usize) -> PrecisionAssignment {
        match self {
            SweepAxis::PrefixFp16 => PrecisionAssignment::prefix_fp16(&model.resolved, boundary),
            SweepAxis::SuffixFp16 => PrecisionAssignment::suffix_fp16(&model.resolved, boundary),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Number of FP16 layers on the axis side (0 = all INT8).
    pub boundary_index: usize,
    pub fp16_layers: usize,
    /// Fréchet distance of mixed outputs against FP32 outputs (lower is
    /// closer to full precision).
    pub quality: f64,
}

/// One point per boundary position: num_layers + 1 points total.
pub fn sensitivity_sweep(
    model: &BuiltModel<f32>,
    act_qparams: &BTreeMap<String, QuantParams>,
    eval_speech: &Tensor<f32>,
    eval_faces: &Tensor<f32>,
    axis: SweepAxis,
) -> Result<Vec<SweepPoint>> {
    if eval_speech.shape()[0] == 0 {
        return Err(Error::Quant {
            detail: "empty evaluation set".into(),
        });
    }
    let fp32_out = forward_batched(model, eval_speech, eval_faces)?;
    let layers = model.resolved.layers.len();
    let mut curve = Vec::with_capacity(layers + 1);
    for boundary in 0..=layers {
        let assignment = axis.assignment(model, boundary);
        let qm = build_quantized_model(model, &assignment, act_qparams)?;
        let mut outs = Vec::new();
        let n = eval_speech.shape()[0];
        let mut i = 0;
        while i < n {
            let take = (n - i).min(32);
            let sp = crate::tensor::slice(eval_speech, 0, i, take)?;
            let fc = crate::tensor::slice(eval_faces, 0, i, take)?;
            outs.extend_from_slice(qm.forward(&sp, &fc)?.output.data());
            i += take;
        }
        let shape = fp32_out.shape().to_vec();
        let mixed = Tensor::new(shape, outs)?;
        let quality = proxy_fid(&fp32_out, &mixed)?;
        curve.push(SweepPoint {
            boundary_index: boundary,
            fp16_layers: boundary,
            quality,
        });
    }
    Ok(curve)
}

fn forward_batched(
    model: &BuiltModel<f32>,
    speech: &Tensor<f32>,
    faces: &Tensor<f32>,
) -> Result<Tensor<f32>> {
    let n = speech.shape()[0];
    let mut outs = Vec::new();
    let mut shape = Vec::new();
    let mut i = 0;
    while i < n {
        let take = (n - i).min(32);
        let sp = crate::tensor::slice(speech, 0, i, take)?;
        let fc = crate::tensor::slice(faces, 0, i, take)?;
        let out = model.forward(&sp, &fc)?.output;
        shape = out.shape().to_vec();
        outs.extend_from_slice(out.data());
        i += take;
    }
    shape[0] = n;
    Tensor::new(shape, outs)
}

/// FP16 budget for assignment selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetRule {
    /// At most this many FP16 layers.
    MaxFp16Layers(usize),
    /// No constraint.
    AllowAll,
}

/// Pick the feasible sweep point with the best (lowest) quality value;
/// ties prefer more FP16 layers. Equals the brute-force minimum over the
/// feasible curve points.
pub fn select_mixed_precision(
    model: &BuiltModel<f32>,
    curve: &[SweepPoint],
    axis: SweepAxis,
    budget: BudgetRule,
) -> Result<PrecisionAssignment> {
    if curve.is_empty() {
        return Err(Error::Quant {
            detail: "empty sweep curve".into(),
        });
    }
    let limit = match budget {
        BudgetRule::MaxFp16Layers(k) => k,
        BudgetRule::AllowAll => usize::MAX,
    };
    let mut best: Option<&SweepPoint> = None;
    for p in curve.iter().filter(|p| p.fp16_layers <= limit) {
        best = Some(match best {
            None => p,
            Some(b) => {
                if p.quality < b.quality
                    || (p.quality == b.quality && p.fp16_layers > b.fp16_layers)
                {
                    p
                } else {
                    b
                }
            }
        });
    }
    let best = best.ok_or(Error::Quant {
        detail: "budget admits no sweep point".into(),
    })?;
    Ok(axis.assignment(model, best.boundary_index))
}
