//! The individual loss terms of the teacher and student objectives.
//!
//! Every loss is non-negative and exactly zero at its analytic minimum.
//! Traced variants run on the tape (gradients flow into the generated
//! frames); where a target is constant it is computed plainly and entered
//! as a tape constant.

use alloc::format;
use alloc::vec::Vec;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::graph::SyncExpert;
use crate::synth::mouth_crop;
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor};

use super::feature::FeatureExtractor;

/// Cosine clamp floor in the sync loss.
pub const SYNC_EPS: f64 = 1e-7;
/// Log clamp floor in the channel-attention KL.
const ATT_EPS: f64 = 1e-12;

/// Mean absolute error between generated and ground-truth frames.
pub fn recon_loss<E: Elem>(gen: &Tensor<E>, gt: &Tensor<E>) -> Result<Tensor<E>> {
    gen.l1_distance(gt)
}

pub fn recon_loss_traced<'t, E: Elem>(
    gen: Var<'t, E>,
    gt: Var<'t, E>,
) -> Result<Var<'t, E>> {
    gen.l1_distance(gt)
}

/// Stable binary cross-entropy with logits: target 1 -> softplus(-z),
/// target 0 -> softplus(z), averaged over the batch.
pub fn bce_with_logits_traced<'t, E: Elem>(
    logits: Var<'t, E>,
    target_one: bool,
) -> Result<Var<'t, E>> {
    let z = if target_one { logits.neg()? } else { logits };
    z.softplus()?.mean_all()
}

/// Discriminator and generator adversarial losses.
/// d_loss = BCE(D(real),1) + BCE(D(fake_detached),0); g_loss = BCE(D(fake),1).
pub fn gan_d_loss_traced<'t, E: Elem>(
    real_logits: Var<'t, E>,
    fake_logits: Var<'t, E>,
) -> Result<Var<'t, E>> {
    let lr = bce_with_logits_traced(real_logits, true)?;
    let lf = bce_with_logits_traced(fake_logits, false)?;
    lr.add(lf)
}

/// Lip-sync loss: p = clamp(cos(e_speech, e_video), eps, 1); mean(-log p).
/// The expert embeds the mouth-region crop of the generated frames.
pub fn sync_loss_traced<'t, E: Elem>(
    tape: &'t Tape<E>,
    expert: &SyncExpert<E>,
    speech: &Tensor<E>,
    gen_frames: Var<'t, E>,
) -> Result<Var<'t, E>> {
    let e_speech = tape.constant(expert.embed_speech(speech)?);
    let (_, _, h, _) = gen_frames.value().dims4()?;
    let mouth = gen_frames.slice(2, h / 2, h - h / 2)?;
    let vars = expert.video_net.register(tape, false);
    let e_video = expert.embed_video_traced(&vars, mouth)?;
    let cos = e_speech.mul(e_video)?.sum_axis2(1)?;
    let p = cos.clamp(SYNC_EPS, 1.0)?;
    p.log()?.mean_all()?.neg()
}

/// Plain sync loss on already-rendered frames.
pub fn sync_loss<E: Elem>(
    expert: &SyncExpert<E>,
    speech: &Tensor<E>,
    frames: &Tensor<E>,
) -> Result<Tensor<E>> {
    let es = expert.embed_speech(speech)?;
    let ev = expert.embed_video(&mouth_crop(frames)?)?;
    let cos = es.mul(&ev)?.sum_axis2(1)?;
    let p = cos.clamp_t(SYNC_EPS, 1.0)?;
    p.log_t()?.mean_all()?.neg()
}

/// 11x11 Gaussian window (sigma 1.5), normalized to unit mass.
pub fn ssim_window<E: Elem>() -> Tensor<E> {
    const K: usize = 11;
    const SIGMA: f64 = 1.5;
    let mut g1 = [0.0f64; K];
    let mut sum = 0.0;
    for (i, g) in g1.iter_mut().enumerate() {
        let x = i as f64 - (K as f64 - 1.0) / 2.0;
        *g = (-x * x / (2.0 * SIGMA * SIGMA)).exp();
        sum += *g;
    }
    for g in g1.iter_mut() {
        *g /= sum;
    }
    Tensor::from_fn([1, 1, K, K], |i| E::of(g1[i / K] * g1[i % K]))
}

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean SSIM index over all channels and valid window positions, traced.
/// `target` enters as a constant.
pub fn ssim_index_traced<'t, E: Elem>(
    tape: &'t Tape<E>,
    x: Var<'t, E>,
    target: &Tensor<E>,
) -> Result<Var<'t, E>> {
    let (n, c, h, w) = target.dims4()?;
    if x.shape() != target.shape() {
        return Err(Error::shape(
            "ssim",
            format!("{:?} vs {:?}", x.shape(), target.shape()),
        ));
    }
    if h < 11 || w < 11 {
        return Err(Error::shape("ssim", "images smaller than the 11x11 window"));
    }
    let win = tape.constant(ssim_window::<E>());
    let xm = x.reshape([n * c, 1, h, w])?;
    let y = tape.constant(target.reshaped([n * c, 1, h, w])?);

    let mu_x = xm.conv2d(win, None, 1, 0)?;
    let mu_y = y.conv2d(win, None, 1, 0)?;
    let xx = xm.mul(xm)?.conv2d(win, None, 1, 0)?;
    let yy = y.mul(y)?.conv2d(win, None, 1, 0)?;
    let xy = xm.mul(y)?.conv2d(win, None, 1, 0)?;

    let mu_xy = mu_x.mul(mu_y)?;
    let var_x = xx.sub(mu_x.mul(mu_x)?)?;
    let var_y = yy.sub(mu_y.mul(mu_y)?)?;
    let cov = xy.sub(mu_xy)?;

    let num = mu_xy
        .scale(2.0)?
        .add_scalar(SSIM_C1)?
        .mul(cov.scale(2.0)?.add_scalar(SSIM_C2)?)?;
    let den = mu_x
        .mul(mu_x)?
        .add(mu_y.mul(mu_y)?)?
        .add_scalar(SSIM_C1)?
        .mul(var_x.add(var_y)?.add_scalar(SSIM_C2)?)?;
    num.mul(den.recip()?)?.mean_all()
}

/// Plain mean SSIM index (shares the traced implementation).
pub fn ssim_index<E: Elem>(a: &Tensor<E>, b: &Tensor<E>) -> Result<E> {
    let tape = Tape::new();
    let x = tape.constant(a.clone());
    Ok(ssim_index_traced(&tape, x, b)?.value().item())
}

/// 1 - mean SSIM.
pub fn ssim_loss_traced<'t, E: Elem>(
    tape: &'t Tape<E>,
    x: Var<'t, E>,
    target: &Tensor<E>,
) -> Result<Var<'t, E>> {
    ssim_index_traced(tape, x, target)?.neg()?.add_scalar(1.0)
}

/// Mean of squared horizontal and vertical neighbor differences.
pub fn tv_loss_traced<'t, E: Elem>(x: Var<'t, E>) -> Result<Var<'t, E>> {
    let (n, c, h, w) = {
        let v = x.value();
        v.dims4()?
    };
    let dh = x.slice(2, 1, h - 1)?.sub(x.slice(2, 0, h - 1)?)?;
    let dv = x.slice(3, 1, w - 1)?.sub(x.slice(3, 0, w - 1)?)?;
    let sum = dh.square()?.sum_all()?.add(dv.square()?.sum_all()?)?;
    let count = (n * c * (h - 1) * w + n * c * h * (w - 1)) as f64;
    sum.scale(1.0 / count)
}

pub fn tv_loss<E: Elem>(x: &Tensor<E>) -> Result<E> {
    let tape = Tape::new();
    let v = tape.constant(x.clone());
    Ok(tv_loss_traced(v)?.value().item())
}

/// Gram matrix of one feature map: G = F F^T / (C*H*W), F flattened to
/// C x (H*W). Returns one (C, C) matrix per batch item.
pub fn gram<E: Elem>(feat: &Tensor<E>) -> Result<Vec<Tensor<E>>> {
    let (n, c, h, w) = feat.dims4()?;
    let norm = 1.0 / (c * h * w) as f64;
    (0..n)
        .map(|i| {
            let f = tensor::slice(feat, 0, i, 1)?.reshaped([c, h * w])?;
            tensor::matmul(&f, &tensor::transpose2d(&f)?)?.scale(norm)
        })
        .collect()
}

fn gram_traced<'t, E: Elem>(feat: Var<'t, E>, item: usize) -> Result<Var<'t, E>> {
    let (_, c, h, w) = feat.value().dims4()?;
    let f = feat.slice(0, item, 1)?.reshape([c, h * w])?;
    f.matmul(f.transpose2d()?)?.scale(1.0 / (c * h * w) as f64)
}

/// Sum over stages of the mean L1 distance between feature maps;
/// the target stages are constants.
pub fn feature_loss_traced<'t, E: Elem>(
    tape: &'t Tape<E>,
    fx: &FeatureExtractor<E>,
    x: Var<'t, E>,
    target_stages: &[Tensor<E>],
) -> Result<Var<'t, E>> {
    let xs = fx.stages_traced(tape, x)?;
    let mut total: Option<Var<'t, E>> = None;
    for (sx, st) in xs.iter().zip(target_stages) {
        let term = sx.l1_distance(tape.constant(st.clone()))?;
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::shape("feature_loss", "no stages"))
}

/// Sum over stages of the mean squared distance between Gram matrices.
pub fn style_loss_traced<'t, E: Elem>(
    tape: &'t Tape<E>,
    fx: &FeatureExtractor<E>,
    x: Var<'t, E>,
    target_stages: &[Tensor<E>],
) -> Result<Var<'t, E>> {
    let xs = fx.stages_traced(tape, x)?;
    let n = x.value().shape()[0];
    let mut total: Option<Var<'t, E>> = None;
    for (sx, st) in xs.iter().zip(target_stages) {
        let gt = gram(st)?;
        for (i, gti) in gt.iter().enumerate().take(n) {
            let gs = gram_traced(*sx, i)?;
            let term = gs
                .sub(tape.constant(gti.clone()))?
                .square()?
                .mean_all()?
                .scale(1.0 / n as f64)?;
            total = Some(match total {
                Some(t) => t.add(term)?,
                None => term,
            });
        }
    }
    total.ok_or_else(|| Error::shape("style_loss", "no stages"))
}

/// Plain feature/style losses for tests and reporting.
pub fn feature_loss<E: Elem>(
    fx: &FeatureExtractor<E>,
    a: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<E> {
    let tape = Tape::new();
    let x = tape.constant(a.clone());
    Ok(feature_loss_traced(&tape, fx, x, &fx.stages(b)?)?.value().item())
}

pub fn style_loss<E: Elem>(fx: &FeatureExtractor<E>, a: &Tensor<E>, b: &Tensor<E>) -> Result<E> {
    let tape = Tape::new();
    let x = tape.constant(a.clone());
    Ok(style_loss_traced(&tape, fx, x, &fx.stages(b)?)?.value().item())
}

/// Channel-attention vector: softmax over channels of the global-average-
/// pooled absolute activations, clamped for stable logs.
pub fn channel_attention<E: Elem>(feat: &Tensor<E>) -> Result<Tensor<E>> {
    tensor::global_avg_pool(&feat.abs_t()?)?
        .softmax_rows()?
        .clamp_t(ATT_EPS, 1.0)
}

/// Per-tap channel KD: KL between teacher and adapted-student channel
/// attentions plus the MSE between the feature maps, averaged over taps.
/// `adapters` are 1x1 zero-bias convs lifting student width to teacher width.
pub fn channel_kd_loss_traced<'t, E: Elem>(
    tape: &'t Tape<E>,
    teacher_taps: &[Tensor<E>],
    student_taps: &[Var<'t, E>],
    adapters: &[Var<'t, E>],
) -> Result<Var<'t, E>> {
    if teacher_taps.len() != 7 || student_taps.len() != 7 {
        return Err(Error::shape(
            "channel_kd",
            format!(
                "expected 7 tap pairs, got {} teacher / {} student",
                teacher_taps.len(),
                student_taps.len()
            ),
        ));
    }
    let mut total: Option<Var<'t, E>> = None;
    for ((tt, st), ad) in teacher_taps.iter().zip(student_taps).zip(adapters) {
        let adapted = st.conv2d(*ad, None, 1, 0)?;
        if adapted.shape() != tt.shape() {
            return Err(Error::shape(
                "channel_kd",
                format!("adapted tap {:?} vs teacher {:?}", adapted.shape(), tt.shape()),
            ));
        }
        // KL(teacher || student): sum_c a_t (ln a_t - ln a_s), mean over batch.
        let a_t = channel_attention(tt)?;
        let t_lnt = a_t.mul(&a_t.log_t()?)?;
        let a_s = adapted
            .abs()?
            .global_avg_pool()?
            .softmax_rows()?
            .clamp(ATT_EPS, 1.0)?;
        let cross = tape.constant(a_t).mul(a_s.log()?)?;
        let kl = tape
            .constant(t_lnt)
            .sub(cross)?
            .sum_axis2(1)?
            .mean_all()?;
        let mse = adapted
            .sub(tape.constant(tt.clone()))?
            .square()?
            .mean_all()?;
        let term = kl.add(mse)?.scale(1.0 / 7.0)?;
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::shape("channel_kd", "no taps"))
}
