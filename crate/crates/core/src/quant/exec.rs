//! Per-layer precision assignment and the mixed-precision executable model.
//!
//! FP32 layers run the exact eval-mode arithmetic of the plain forward (an
//! all-FP32 assignment is a bitwise identity). FP16 and INT8 layers fold
//! batchnorm into the convolution; FP16 simulates half precision by value
//! rounding, INT8 runs the integer kernels. Precision transitions insert
//! quantize / dequantize / fp16-round boundary ops; elementwise residual
//! adds and non-ReLU activations between quantize steps are evaluated in
//! f32 (each surrounding tensor still snaps to its int8 grid).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    apply_act, run_generator, BuiltModel, GenExec, LayerKind, Norm, ResolvedLayer, ResolvedModel,
    RunOut, BN_EPS,
};
use crate::tensor::{self, Tensor};

use super::kernel::{check_accumulator, qconv2d, qconv_transpose2d};
use super::params::{
    dequantize, fp16_round, quantize_tensor, quantize_weights_per_channel, QTensor, QuantParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    Fp32,
    Fp16,
    Int8,
}

impl Precision {
    pub fn token(self) -> &'static str {
        match self {
            Precision::Fp32 => "fp32",
            Precision::Fp16 => "fp16",
            Precision::Int8 => "int8",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fp32" => Ok(Precision::Fp32),
            "fp16" => Ok(Precision::Fp16),
            "int8" => Ok(Precision::Int8),
            other => Err(Error::Quant {
                detail: format!("unknown precision token '{other}'"),
            }),
        }
    }
}

/// Map from layer name to execution precision; must cover the whole model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAssignment {
    pub name: String,
    pub by_layer: BTreeMap<String, Precision>,
}

impl PrecisionAssignment {
    pub fn uniform(rm: &ResolvedModel, p: Precision, name: &str) -> Self {
        PrecisionAssignment {
            name: name.to_string(),
            by_layer: rm
                .layers
                .iter()
                .map(|l| (l.spec.name.clone(), p))
                .collect(),
        }
    }

    /// First `count` layers (in layer-index order) FP16, the rest INT8.
    pub fn prefix_fp16(rm: &ResolvedModel, count: usize) -> Self {
        let mut a = Self::uniform(rm, Precision::Int8, &format!("prefix_fp16_{count}"));
        for l in rm.layers.iter().take(count) {
            a.by_layer.insert(l.spec.name.clone(), Precision::Fp16);
        }
        a
    }

    /// Last `count` layers FP16, the rest INT8.
    pub fn suffix_fp16(rm: &ResolvedModel, count: usize) -> Self {
        let total = rm.layers.len();
        let mut a = Self::uniform(rm, Precision::Int8, &format!("suffix_fp16_{count}"));
        for l in rm.layers.iter().skip(total.saturating_sub(count)) {
            a.by_layer.insert(l.spec.name.clone(), Precision::Fp16);
        }
        a
    }

    /// Preset for the compact generator: the decoder's output block runs in
    /// FP16, everything else INT8.
    pub fn student_mix(rm: &ResolvedModel) -> Self {
        let mut a = Self::uniform(rm, Precision::Int8, "student_mix");
        for &li in rm.output_block_layers() {
            a.by_layer
                .insert(rm.layers[li].spec.name.clone(), Precision::Fp16);
        }
        a
    }

    /// Preset for the original generator: the first two face-encoder blocks
    /// and the last two decoder-side blocks (final decoder block + output
    /// block) run in FP16, everything else INT8.
    pub fn teacher_mix(rm: &ResolvedModel) -> Self {
        let mut a = Self::uniform(rm, Precision::Int8, "teacher_mix");
        let mut mark = |ids: &[usize]| {
            for &li in ids {
                a.by_layer
                    .insert(rm.layers[li].spec.name.clone(), Precision::Fp16);
            }
        };
        for b in rm.face_blocks.iter().take(2) {
            mark(b);
        }
        if let Some(last) = rm.decoder_blocks.last() {
            mark(last);
        }
        mark(rm.output_block_layers());
        a
    }

    pub fn fp16_layer_count(&self) -> usize {
        self.by_layer
            .values()
            .filter(|p| **p == Precision::Fp16)
            .count()
    }

    pub fn validate_covers(&self, rm: &ResolvedModel) -> Result<()> {
        for l in &rm.layers {
            if !self.by_layer.contains_key(&l.spec.name) {
                return Err(Error::Quant {
                    detail: format!("assignment is missing layer '{}'", l.spec.name),
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, layer: &str) -> Precision {
        self.by_layer.get(layer).copied().unwrap_or(Precision::Fp32)
    }

    /// Serialize as the text map format: one `layer = precision` per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("# precision assignment: {}\n", self.name);
        for (k, v) in &self.by_layer {
            s.push_str(&format!("{k} = {}\n", v.token()));
        }
        s
    }

    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut by_layer = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(Error::Parse {
                line: ln + 1,
                detail: "expected 'layer = precision'".into(),
            })?;
            by_layer.insert(k.trim().to_string(), Precision::parse(v.trim())?);
        }
        Ok(PrecisionAssignment {
            name: name.to_string(),
            by_layer,
        })
    }
}

/// Fold eval-mode batchnorm into convolution weights and bias.
fn fold_bn(
    rl: &ResolvedLayer,
    weight: &Tensor<f32>,
    bias: &Tensor<f32>,
    bn: Option<&crate::graph::BnState<f32>>,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let Some(bn) = bn else {
        return Ok((weight.clone(), bias.clone()));
    };
    let out_ch = rl.spec.out_ch;
    let mut scale = alloc::vec![0.0f32; out_ch];
    let mut shift = alloc::vec![0.0f32; out_ch];
    for c in 0..out_ch {
        let inv = 1.0 / (bn.running_var[c] + BN_EPS as f32).sqrt();
        scale[c] = bn.gamma.data()[c] * inv;
        shift[c] = bn.beta.data()[c] - bn.running_mean[c] * scale[c];
    }
    let mut w = weight.clone();
    {
        let dims = w.shape().to_vec();
        let data = w.make_mut();
        match rl.spec.kind {
            LayerKind::ConvTranspose => {
                // (Cin, Cout, K, K): out channel is axis 1.
                let (cin, cout, k) = (dims[0], dims[1], dims[2]);
                for ci in 0..cin {
                    for co in 0..cout {
                        let base = (ci * cout + co) * k * k;
                        for i in 0..k * k {
                            data[base + i] *= scale[co];
                        }
                    }
                }
            }
            _ => {
                let (cout, rest) = (dims[0], dims[1] * dims[2] * dims[3]);
                for co in 0..cout {
                    for i in 0..rest {
                        data[co * rest + i] *= scale[co];
                    }
                }
            }
        }
    }
    let mut b = bias.clone();
    for (c, v) in b.make_mut().iter_mut().enumerate() {
        *v = *v * scale[c] + shift[c];
    }
    Ok((w, b))
}

enum PreparedLayer {
    Fp32,
    Fp16 {
        weight: Tensor<f32>,
        bias: Tensor<f32>,
    },
    Int8 {
        weight: QTensor,
        w_scales: Vec<f32>,
        bias: Vec<f32>,
        qp_in: QuantParams,
        qp_pre: QuantParams,
        qp_out: QuantParams,
    },
}

/// A generator prepared for mixed-precision inference.
pub struct QuantizedModel {
    pub base: BuiltModel<f32>,
    pub assignment: PrecisionAssignment,
    prepared: Vec<PreparedLayer>,
}

/// Prepare per-layer state: folded/rounded/quantized weights plus the
/// calibrated activation parameters each INT8 layer needs.
/// Look up the calibrated params for one activation site.
pub fn site_qparams(
    act_qparams: &BTreeMap<String, QuantParams>,
    site: &str,
) -> Result<QuantParams> {
    act_qparams.get(site).copied().ok_or_else(|| Error::Quant {
        detail: format!("no calibration for activation site '{site}'"),
    })
}

pub fn build_quantized_model(
    model: &BuiltModel<f32>,
    assignment: &PrecisionAssignment,
    act_qparams: &BTreeMap<String, QuantParams>,
) -> Result<QuantizedModel> {
    assignment.validate_covers(&model.resolved)?;
    let mut prepared = Vec::with_capacity(model.resolved.layers.len());
    for rl in &model.resolved.layers {
        let lw = &model.weights[rl.index];
        let p = assignment.get(&rl.spec.name);
        prepared.push(match p {
            Precision::Fp32 => PreparedLayer::Fp32,
            Precision::Fp16 => {
                let (w, b) = fold_bn(rl, &lw.weight, &lw.bias, lw.bn.as_ref())?;
                PreparedLayer::Fp16 {
                    weight: fp16_round(&w)?,
                    bias: fp16_round(&b)?,
                }
            }
            Precision::Int8 => {
                check_accumulator(rl.spec.in_ch * rl.spec.kernel * rl.spec.kernel)?;
                let (w, b) = fold_bn(rl, &lw.weight, &lw.bias, lw.bn.as_ref())?;
                let axis = match rl.spec.kind {
                    LayerKind::ConvTranspose => 1,
                    _ => 0,
                };
                let (qw, scales) = quantize_weights_per_channel(&w, axis)?;
                let name = &rl.spec.name;
                PreparedLayer::Int8 {
                    weight: qw,
                    w_scales: scales,
                    bias: b.data().to_vec(),
                    qp_in: site_qparams(act_qparams, &format!("{name}.in"))?,
                    qp_pre: site_qparams(act_qparams, &format!("{name}.pre"))?,
                    qp_out: site_qparams(act_qparams, &format!("{name}.out"))?,
                }
            }
        });
    }
    Ok(QuantizedModel {
        base: model.clone(),
        assignment: assignment.clone(),
        prepared,
    })
}

/// Value flowing through the mixed-precision graph.
#[derive(Clone)]
pub enum QVal {
    F(Tensor<f32>),
    Q(QTensor, QuantParams),
}

impl QVal {
    pub fn to_f32(&self) -> Result<Tensor<f32>> {
        match self {
            QVal::F(t) => Ok(t.clone()),
            QVal::Q(q, qp) => dequantize(q, *qp),
        }
    }

    fn to_int8(&self, qp: QuantParams) -> Result<QTensor> {
        match self {
            QVal::F(t) => quantize_tensor(t, qp),
            QVal::Q(q, have) if *have == qp => Ok(q.clone()),
            QVal::Q(_, _) => quantize_tensor(&self.to_f32()?, qp),
        }
    }
}

struct QuantExec<'m> {
    qm: &'m QuantizedModel,
}

impl GenExec<f32> for QuantExec<'_> {
    type H = QVal;

    fn layer(&mut self, rl: &ResolvedLayer, x: &QVal) -> Result<QVal> {
        let s = &rl.spec;
        let lw = &self.qm.base.weights[rl.index];
        match &self.qm.prepared[rl.index] {
            // Bitwise-identical to the plain eval forward.
            PreparedLayer::Fp32 => {
                let xf = x.to_f32()?;
                let y = match s.kind {
                    LayerKind::ConvTranspose => tensor::conv_transpose2d(
                        &xf,
                        &lw.weight,
                        Some(&lw.bias),
                        s.stride,
                        s.padding,
                        s.output_padding,
                    )?,
                    _ => tensor::conv2d(&xf, &lw.weight, Some(&lw.bias), s.stride, s.padding)?,
                };
                let y = match &lw.bn {
                    Some(bn) => tensor::bn_eval(
                        &y,
                        &bn.gamma,
                        &bn.beta,
                        &bn.running_mean,
                        &bn.running_var,
                        BN_EPS,
                    )?,
                    None => y,
                };
                let y = if s.kind == LayerKind::ResidualConv {
                    y.add(&xf)?
                } else {
                    y
                };
                Ok(QVal::F(apply_act(s.act, y)?))
            }
            PreparedLayer::Fp16 { weight, bias } => {
                let xf = fp16_round(&x.to_f32()?)?;
                let y = match s.kind {
                    LayerKind::ConvTranspose => tensor::conv_transpose2d(
                        &xf,
                        weight,
                        Some(bias),
                        s.stride,
                        s.padding,
                        s.output_padding,
                    )?,
                    _ => tensor::conv2d(&xf, weight, Some(bias), s.stride, s.padding)?,
                };
                let y = if s.kind == LayerKind::ResidualConv {
                    y.add(&xf)?
                } else {
                    y
                };
                Ok(QVal::F(fp16_round(&apply_act(s.act, y)?)?))
            }
            PreparedLayer::Int8 {
                weight,
                w_scales,
                bias,
                qp_in,
                qp_pre,
                qp_out,
            } => {
                let qx = x.to_int8(*qp_in)?;
                let qy = match s.kind {
                    LayerKind::ConvTranspose => qconv_transpose2d(
                        &qx,
                        *qp_in,
                        weight,
                        w_scales,
                        bias,
                        *qp_pre,
                        s.stride,
                        s.padding,
                        s.output_padding,
                    )?,
                    _ => qconv2d(
                        &qx, *qp_in, weight, w_scales, bias, *qp_pre, s.stride, s.padding,
                    )?,
                };
                // Residual add and activation run in f32 between grid snaps.
                let pre = dequantize(&qy, *qp_pre)?;
                let pre = if s.kind == LayerKind::ResidualConv {
                    pre.add(&dequantize(&qx, *qp_in)?)?
                } else {
                    pre
                };
                let y = apply_act(s.act, pre)?;
                Ok(QVal::Q(quantize_tensor(&y, *qp_out)?, *qp_out))
            }
        }
    }

    fn concat_channels(&mut self, a: &QVal, b: &QVal) -> Result<QVal> {
        Ok(QVal::F(tensor::concat(
            &[&a.to_f32()?, &b.to_f32()?],
            1,
        )?))
    }
}

impl QuantizedModel {
    /// Mixed-precision forward; the output is always f32 frames.
    pub fn forward(&self, speech: &Tensor<f32>, faces: &Tensor<f32>) -> Result<RunOut<Tensor<f32>>> {
        self.base.validate_inputs(speech, faces)?;
        let mut exec = QuantExec { qm: self };
        let out = run_generator(
            &self.base.resolved,
            &mut exec,
            QVal::F(speech.clone()),
            QVal::F(faces.clone()),
        )?;
        let output = out.output.to_f32()?;
        let taps = out
            .taps
            .into_iter()
            .map(|(n, v)| Ok((n, v.to_f32()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(RunOut { output, taps })
    }
}

/// Convenience for tests: is the layer normalized (affects folding).
pub fn layer_has_norm(rl: &ResolvedLayer) -> bool {
    rl.spec.norm == Norm::BatchNorm
}
