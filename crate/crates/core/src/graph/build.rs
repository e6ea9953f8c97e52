//! Weight allocation and the shared forward wiring.
//!
//! The generator topology is executed through the [`GenExec`] trait so the
//! same wiring serves plain inference (with optional activation observers),
//! traced training, and the mixed-precision executor. Plain eval forward and
//! the all-FP32 quantized path therefore share identical arithmetic.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::graph::spec::{Act, GeneratorSpec, LayerKind, Norm, ResolvedLayer, ResolvedModel};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor};

/// Workbench-wide leaky-ReLU slope.
pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BnState<E: Elem> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub running_mean: Vec<E>,
    pub running_var: Vec<E>,
}

#[derive(Debug, Clone)]
pub struct LayerWeights<E: Elem> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
    pub bn: Option<BnState<E>>,
}

/// A resolved generator with allocated weights.
#[derive(Clone)]
pub struct BuiltModel<E: Elem = f32> {
    pub resolved: ResolvedModel,
    pub weights: Vec<LayerWeights<E>>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    Gamma,
    Beta,
}

impl ParamRole {
    pub fn suffix(self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
            ParamRole::Gamma => "gamma",
            ParamRole::Beta => "beta",
        }
    }
}

/// Deterministic weight construction from a seed (Kaiming-uniform kernels,
/// zero biases, unit/zero norm parameters).
pub fn build_model<E: Elem>(spec: &GeneratorSpec, seed: u64) -> Result<BuiltModel<E>> {
    let resolved = spec.resolve()?;
    let mut r = rng::substream(seed, "generator-init");
    let weights = resolved
        .layers
        .iter()
        .map(|rl| init_layer(&mut r, rl))
        .collect();
    Ok(BuiltModel {
        resolved,
        weights,
        seed,
    })
}

fn init_layer<E: Elem>(r: &mut rng::Prng, rl: &ResolvedLayer) -> LayerWeights<E> {
    let s = &rl.spec;
    let k = s.kernel;
    let fan_in = s.in_ch * k * k;
    let shape = match s.kind {
        LayerKind::ConvTranspose => [s.in_ch, s.out_ch, k, k],
        _ => [s.out_ch, s.in_ch, k, k],
    };
    let weight = rng::kaiming_uniform(r, fan_in, shape);
    let bias = Tensor::zeros([s.out_ch]);
    let bn = match s.norm {
        Norm::BatchNorm => Some(BnState {
            gamma: Tensor::full([s.out_ch], E::one()),
            beta: Tensor::zeros([s.out_ch]),
            running_mean: alloc::vec![E::zero(); s.out_ch],
            running_var: alloc::vec![E::one(); s.out_ch],
        }),
        Norm::None => None,
    };
    LayerWeights { weight, bias, bn }
}

impl<E: Elem> BuiltModel<E> {
    /// Canonical parameter order: per layer (weight, bias, [gamma, beta]).
    pub fn param_entries(&self) -> Vec<(usize, ParamRole)> {
        let mut out = Vec::new();
        for (li, w) in self.weights.iter().enumerate() {
            out.push((li, ParamRole::Weight));
            out.push((li, ParamRole::Bias));
            if w.bn.is_some() {
                out.push((li, ParamRole::Gamma));
                out.push((li, ParamRole::Beta));
            }
        }
        out
    }

    pub fn param_name(&self, li: usize, role: ParamRole) -> String {
        format!("{}.{}", self.resolved.layers[li].spec.name, role.suffix())
    }

    pub fn param(&self, li: usize, role: ParamRole) -> &Tensor<E> {
        let w = &self.weights[li];
        match role {
            ParamRole::Weight => &w.weight,
            ParamRole::Bias => &w.bias,
            ParamRole::Gamma => &w.bn.as_ref().expect("bn layer").gamma,
            ParamRole::Beta => &w.bn.as_ref().expect("bn layer").beta,
        }
    }

    pub fn param_mut(&mut self, li: usize, role: ParamRole) -> &mut Tensor<E> {
        let w = &mut self.weights[li];
        match role {
            ParamRole::Weight => &mut w.weight,
            ParamRole::Bias => &mut w.bias,
            ParamRole::Gamma => &mut w.bn.as_mut().expect("bn layer").gamma,
            ParamRole::Beta => &mut w.bn.as_mut().expect("bn layer").beta,
        }
    }

    /// All parameters mutably, in [`BuiltModel::param_entries`] order.
    pub fn params_mut_ordered(&mut self) -> Vec<&mut Tensor<E>> {
        let mut out = Vec::new();
        for w in &mut self.weights {
            out.push(&mut w.weight);
            out.push(&mut w.bias);
            if let Some(bn) = &mut w.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    /// All parameters immutably, in the same order.
    pub fn params_ordered(&self) -> Vec<&Tensor<E>> {
        let mut out = Vec::new();
        for w in &self.weights {
            out.push(&w.weight);
            out.push(&w.bias);
            if let Some(bn) = &w.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn validate_inputs(&self, speech: &Tensor<E>, faces: &Tensor<E>) -> Result<()> {
        let (rows, cols) = self.resolved.spec.speech_shape;
        let fs = self.resolved.spec.face_size;
        let (_, sc, sh, sw) = speech.dims4()?;
        if (sc, sh, sw) != (1, rows, cols) {
            return Err(Error::shape(
                "forward",
                format!("speech input must be Nx1x{rows}x{cols}, got {:?}", speech.shape()),
            ));
        }
        let (fn_, fc, fh, fw) = faces.dims4()?;
        if (fc, fh, fw) != (6, fs, fs) {
            return Err(Error::shape(
                "forward",
                format!("faces input must be Nx6x{fs}x{fs}, got {:?}", faces.shape()),
            ));
        }
        if fn_ != speech.shape()[0] {
            return Err(Error::shape("forward", "speech/faces batch mismatch"));
        }
        Ok(())
    }

    /// Plain eval-mode forward: output in [0,1] plus the seven decoder taps.
    pub fn forward(&self, speech: &Tensor<E>, faces: &Tensor<E>) -> Result<RunOut<Tensor<E>>> {
        self.validate_inputs(speech, faces)?;
        let mut exec = PlainExec {
            model: self,
            observer: None,
        };
        run_generator(&self.resolved, &mut exec, speech.clone(), faces.clone())
    }

    /// Eval-mode forward reporting every named activation site to `obs`
    /// (used by calibration).
    pub fn forward_observed(
        &self,
        speech: &Tensor<E>,
        faces: &Tensor<E>,
        obs: &mut dyn FnMut(&str, &Tensor<E>),
    ) -> Result<RunOut<Tensor<E>>> {
        self.validate_inputs(speech, faces)?;
        let mut exec = PlainExec {
            model: self,
            observer: Some(obs),
        };
        run_generator(&self.resolved, &mut exec, speech.clone(), faces.clone())
    }
}

/// Output of one generator run: final frame plus named decoder-block taps.
pub struct RunOut<H> {
    pub output: H,
    pub taps: Vec<(String, H)>,
}

/// Execution backend for the generator wiring.
pub trait GenExec<E: Elem> {
    type H: Clone;
    fn layer(&mut self, rl: &ResolvedLayer, x: &Self::H) -> Result<Self::H>;
    fn concat_channels(&mut self, a: &Self::H, b: &Self::H) -> Result<Self::H>;
    fn observe(&mut self, _site: &str, _h: &Self::H) -> Result<()> {
        Ok(())
    }
}

/// The one copy of the generator topology: encoders, skip concats, decoder
/// taps, output block.
pub fn run_generator<E: Elem, X: GenExec<E>>(
    rm: &ResolvedModel,
    exec: &mut X,
    speech: X::H,
    faces: X::H,
) -> Result<RunOut<X::H>> {
    exec.observe("input.speech", &speech)?;
    exec.observe("input.faces", &faces)?;

    let mut s = speech;
    for block in &rm.speech_blocks {
        for &li in block {
            s = exec.layer(&rm.layers[li], &s)?;
        }
    }

    let mut f = faces;
    let mut face_outs = Vec::new();
    for block in &rm.face_blocks {
        for &li in block {
            f = exec.layer(&rm.layers[li], &f)?;
        }
        face_outs.push(f.clone());
    }

    let mut x = s;
    let mut taps = Vec::new();
    for (bi, block) in rm.decoder_blocks.iter().enumerate() {
        if let Some(fb) = rm.skip_for_decoder[bi] {
            x = exec.concat_channels(&x, &face_outs[fb])?;
        }
        for &li in block {
            x = exec.layer(&rm.layers[li], &x)?;
        }
        taps.push((rm.decoder_block_name(bi), x.clone()));
    }

    if let Some(fb) = rm.skip_for_output {
        x = exec.concat_channels(&x, &face_outs[fb])?;
    }
    for &li in &rm.output_layers {
        x = exec.layer(&rm.layers[li], &x)?;
    }
    Ok(RunOut { output: x, taps })
}

pub fn apply_act<E: Elem>(act: Act, x: Tensor<E>) -> Result<Tensor<E>> {
    match act {
        Act::Relu => x.relu(),
        Act::LeakyRelu => x.leaky_relu(LEAKY_SLOPE),
        Act::Sigmoid => x.sigmoid(),
        Act::None => Ok(x),
    }
}

/// Eval-mode executor over plain tensors.
struct PlainExec<'m, E: Elem> {
    model: &'m BuiltModel<E>,
    observer: Option<&'m mut dyn FnMut(&str, &Tensor<E>)>,
}

impl<E: Elem> GenExec<E> for PlainExec<'_, E> {
    type H = Tensor<E>;

    fn layer(&mut self, rl: &ResolvedLayer, x: &Tensor<E>) -> Result<Tensor<E>> {
        let lw = &self.model.weights[rl.index];
        let s = &rl.spec;
        self.observe(&format!("{}.in", s.name), x)?;
        let y = match s.kind {
            LayerKind::ConvTranspose => tensor::conv_transpose2d(
                x,
                &lw.weight,
                Some(&lw.bias),
                s.stride,
                s.padding,
                s.output_padding,
            )?,
            _ => tensor::conv2d(x, &lw.weight, Some(&lw.bias), s.stride, s.padding)?,
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
        self.observe(&format!("{}.pre", s.name), &y)?;
        let y = if s.kind == LayerKind::ResidualConv {
            y.add(x)?
        } else {
            y
        };
        let y = apply_act(s.act, y)?;
        self.observe(&format!("{}.out", s.name), &y)?;
        Ok(y)
    }

    fn concat_channels(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        tensor::concat(&[a, b], 1)
    }

    fn observe(&mut self, site: &str, h: &Tensor<E>) -> Result<()> {
        if let Some(obs) = self.observer.as_mut() {
            obs(site, h);
        }
        Ok(())
    }
}

/// Per-layer parameter vars registered on a tape.
pub struct LayerVars<'t, E: Elem> {
    pub weight: Var<'t, E>,
    pub bias: Var<'t, E>,
    pub gamma: Option<Var<'t, E>>,
    pub beta: Option<Var<'t, E>>,
}

/// Traced executor: forward through the tape, optionally in train mode
/// (batch-stat normalization, running-stat updates collected).
pub struct TapeExec<'t, 'm, E: Elem> {
    model: &'m BuiltModel<E>,
    pub vars: Vec<LayerVars<'t, E>>,
    train: bool,
    /// (layer, batch mean, biased batch var, per-channel count)
    pub stat_updates: Vec<(usize, Vec<E>, Vec<E>, usize)>,
}

impl<'t, 'm, E: Elem> TapeExec<'t, 'm, E> {
    pub fn new(
        model: &'m BuiltModel<E>,
        tape: &'t Tape<E>,
        trainable: bool,
        train_mode: bool,
    ) -> Self {
        let vars = model
            .weights
            .iter()
            .map(|lw| LayerVars {
                weight: tape.leaf(lw.weight.clone(), trainable),
                bias: tape.leaf(lw.bias.clone(), trainable),
                gamma: lw.bn.as_ref().map(|bn| tape.leaf(bn.gamma.clone(), trainable)),
                beta: lw.bn.as_ref().map(|bn| tape.leaf(bn.beta.clone(), trainable)),
            })
            .collect();
        TapeExec {
            model,
            vars,
            train: train_mode,
            stat_updates: Vec::new(),
        }
    }

    /// Parameter vars in [`BuiltModel::param_entries`] order.
    pub fn param_vars(&self) -> Vec<Var<'t, E>> {
        let mut out = Vec::new();
        for (li, lv) in self.vars.iter().enumerate() {
            out.push(lv.weight);
            out.push(lv.bias);
            if let Some(g) = lv.gamma {
                out.push(g);
                out.push(lv.beta.expect("gamma implies beta"));
            }
            debug_assert!(self.model.weights[li].bn.is_some() == lv.gamma.is_some());
        }
        out
    }

    pub fn run(
        &mut self,
        speech: Var<'t, E>,
        faces: Var<'t, E>,
    ) -> Result<RunOut<Var<'t, E>>> {
        let rm = self.model.resolved.clone();
        run_generator(&rm, self, speech, faces)
    }
}

impl<'t, E: Elem> GenExec<E> for TapeExec<'t, '_, E> {
    type H = Var<'t, E>;

    fn layer(&mut self, rl: &ResolvedLayer, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let s = &rl.spec;
        let lv = &self.vars[rl.index];
        let y = match s.kind {
            LayerKind::ConvTranspose => x.conv_transpose2d(
                lv.weight,
                Some(lv.bias),
                s.stride,
                s.padding,
                s.output_padding,
            )?,
            _ => x.conv2d(lv.weight, Some(lv.bias), s.stride, s.padding)?,
        };
        let y = match (&self.model.weights[rl.index].bn, lv.gamma, lv.beta) {
            (Some(bn), Some(gamma), Some(beta)) => {
                if self.train {
                    let (y, mean, var) = y.batchnorm_train(gamma, beta, BN_EPS)?;
                    let count = {
                        let sh = rl.out_hw;
                        // batch size from the input handle
                        let n = x.shape()[0];
                        n * sh.0 * sh.1
                    };
                    self.stat_updates.push((rl.index, mean, var, count));
                    y
                } else {
                    y.batchnorm_eval(
                        gamma,
                        beta,
                        bn.running_mean.clone(),
                        bn.running_var.clone(),
                        BN_EPS,
                    )?
                }
            }
            _ => y,
        };
        let y = if s.kind == LayerKind::ResidualConv {
            y.add(*x)?
        } else {
            y
        };
        match s.act {
            Act::Relu => y.relu(),
            Act::LeakyRelu => y.leaky_relu(LEAKY_SLOPE),
            Act::Sigmoid => y.sigmoid(),
            Act::None => Ok(y),
        }
    }

    fn concat_channels(&mut self, a: &Var<'t, E>, b: &Var<'t, E>) -> Result<Var<'t, E>> {
        a.concat(*b, 1)
    }
}

/// Fold collected batch statistics into a model's running estimates.
pub fn apply_stat_updates<E: Elem>(
    model: &mut BuiltModel<E>,
    updates: &[(usize, Vec<E>, Vec<E>, usize)],
) {
    let momentum = E::of(BN_MOMENTUM);
    let keep = E::one() - momentum;
    for (li, mean, var, count) in updates {
        let Some(bn) = model.weights[*li].bn.as_mut() else {
            continue;
        };
        // Running variance tracks the unbiased estimate.
        let unbias = if *count > 1 {
            E::of(*count as f64 / (*count as f64 - 1.0))
        } else {
            E::one()
        };
        for c in 0..bn.running_mean.len() {
            bn.running_mean[c] = keep * bn.running_mean[c] + momentum * mean[c];
            bn.running_var[c] = keep * bn.running_var[c] + momentum * var[c] * unbias;
        }
    }
}
