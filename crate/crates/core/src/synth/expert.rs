//! Contrastive pair construction and sync-expert training.
//!
//! Positives couple a speech window with the mouth crop of its own frame;
//! negatives are time-shifted within the clip or swapped across identities.
//! The expert trains with a BCE on cosine similarity and is frozen by every
//! downstream consumer.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{build_sync_expert, SyncExpert};
use crate::optim::{Adam, AdamCfg};
use crate::rng::{self, Prng};
use crate::synth::{mouth_crop, Split, SynthDataset, Item, WINDOW};
use crate::tape::Tape;
use crate::tensor::{self, Tensor};

const PROB_EPS: f64 = 1e-6;

/// A labeled set of (speech window, mouth crop) pairs.
pub struct PairSet {
    pub speech: Tensor<f32>,
    pub mouth: Tensor<f32>,
    /// 1.0 for synced, 0.0 for unsynced.
    pub labels: Vec<f32>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Build `count` pairs (alternating positive/negative) from a split.
/// Negative mouths come from a `shift`-frame offset or another clip.
pub fn make_unsynced_pairs(
    ds: &SynthDataset,
    split: Split,
    shift: usize,
    count: usize,
    rng: &mut Prng,
) -> Result<PairSet> {
    if shift == 0 {
        return Err(Error::Data {
            detail: "shift must be >= 1".into(),
        });
    }
    let clips = ds.clip_indices(split);
    if clips.is_empty() {
        return Err(Error::Data {
            detail: format!("split {split:?} has no clips"),
        });
    }
    let half = WINDOW / 2;
    let mut speech = Vec::new();
    let mut mouth = Vec::new();
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let clip = clips[rng.gen_range(0..clips.len())];
        let t_len = ds.clips[clip].frames.shape()[0];
        let t = rng.gen_range(half..t_len - half);
        speech.extend_from_slice(ds.speech_window(clip, t).data());
        let positive = i % 2 == 0;
        let (mclip, mt) = if positive {
            (clip, t)
        } else {
            // A shifted frame whose mouth happens to match the speech is
            // not a usable negative; resample until the apertures differ.
            let a0 = ds.clips[clip].aperture[t];
            let mut pick = (clip, half + (t - half + shift) % (t_len - 2 * half));
            for attempt in 0..24 {
                let cand = if rng.gen_bool(0.5) {
                    let off = shift + attempt;
                    (clip, half + (t - half + off) % (t_len - 2 * half))
                } else {
                    let other = clips[rng.gen_range(0..clips.len())];
                    let ot = rng.gen_range(half..ds.clips[other].frames.shape()[0] - half);
                    (other, ot)
                };
                if (ds.clips[cand.0].aperture[cand.1] - a0).abs() >= 0.25 {
                    pick = cand;
                    break;
                }
            }
            pick
        };
        let frame = ds.frame(mclip, mt);
        mouth.extend_from_slice(mouth_crop(&frame)?.data());
        labels.push(if positive { 1.0 } else { 0.0 });
    }
    let s = crate::synth::FRAME_SIZE;
    Ok(PairSet {
        speech: Tensor::new([count, 1, crate::synth::SPEECH_BANDS, WINDOW], speech)?,
        mouth: Tensor::new([count, 3, s / 2, s], mouth)?,
        labels,
    })
}

/// Train the sync expert on contrastive pairs from the train split.
pub fn train_sync_expert(
    ds: &SynthDataset,
    steps: usize,
    seed: u64,
) -> Result<SyncExpert<f32>> {
    let mut expert: SyncExpert<f32> = build_sync_expert(seed);
    let cfg = AdamCfg::with_lr(1e-3);
    let mut adam = {
        let mut params = expert.speech_net.params();
        params.extend(expert.video_net.params());
        Adam::new(cfg, &params)
    };
    let mut batch_rng = rng::substream(seed, "expert-batches");

    for step in 0..steps {
        let pairs = make_unsynced_pairs(ds, Split::Train, 3, 32, &mut batch_rng)?;
        let tape = Tape::new();
        let sv = expert.speech_net.register(&tape, true);
        let vv = expert.video_net.register(&tape, true);
        let es = expert.embed_speech_traced(&sv, tape.constant(pairs.speech.clone()))?;
        let ev = expert.embed_video_traced(&vv, tape.constant(pairs.mouth.clone()))?;
        let cos = es.mul(ev)?.sum_axis2(1)?;
        let p = cos
            .scale(0.5)?
            .add_scalar(0.5)?
            .clamp(PROB_EPS, 1.0 - PROB_EPS)?;
        let y = tape.constant(Tensor::new([pairs.len()], pairs.labels.clone())?);
        let one_minus_y = tape.constant(
            Tensor::new(
                [pairs.len()],
                pairs.labels.iter().map(|l| 1.0 - l).collect::<Vec<f32>>(),
            )?,
        );
        let ll = y
            .mul(p.log()?)?
            .add(one_minus_y.mul(p.neg()?.add_scalar(1.0)?.log()?)?)?;
        let loss = ll.mean_all()?.neg()?;
        let loss_val = loss.value().item();
        if !loss_val.is_finite() {
            return Err(Error::Train {
                detail: format!("sync expert diverged at step {step}"),
            });
        }
        let grads = tape.backward(loss)?;
        let g: Vec<Option<Tensor<f32>>> = sv
            .iter()
            .chain(vv.iter())
            .flat_map(|(w, b)| [grads.get(*w).cloned(), grads.get(*b).cloned()])
            .collect();
        let mut params = expert.speech_net.params_mut();
        params.extend(expert.video_net.params_mut());
        adam.step(&mut params, &g)?;
    }
    Ok(expert)
}

/// Fraction of pairs classified correctly at the 0.5 probability threshold.
pub fn expert_pair_accuracy(expert: &SyncExpert<f32>, pairs: &PairSet) -> Result<f64> {
    let es = expert.embed_speech(&pairs.speech)?;
    let ev = expert.embed_video(&pairs.mouth)?;
    let cos = es.mul(&ev)?.sum_axis2(1)?;
    let mut correct = 0usize;
    for (c, l) in cos.data().iter().zip(&pairs.labels) {
        let pred = if *c >= 0.0 { 1.0 } else { 0.0 };
        if pred == *l {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Embedding sequences for a whole clip range (used by the sync metrics):
/// speech and mouth embeddings for every valid center t of one clip.
pub fn clip_embeddings(
    expert: &SyncExpert<f32>,
    ds: &SynthDataset,
    clip: usize,
    frames_override: Option<&Tensor<f32>>,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let half = WINDOW / 2;
    let t_len = ds.clips[clip].frames.shape()[0];
    let items: Vec<Item> = (half..t_len - half).map(|t| Item { clip, t }).collect();
    let mut speech = Vec::new();
    let mut mouth = Vec::new();
    let s = crate::synth::FRAME_SIZE;
    for it in &items {
        speech.extend_from_slice(ds.speech_window(it.clip, it.t).data());
        let frame = match frames_override {
            Some(f) => tensor::slice(f, 0, it.t, 1)?.reshaped([1, 3, s, s])?,
            None => ds.frame(it.clip, it.t),
        };
        mouth.extend_from_slice(mouth_crop(&frame)?.data());
    }
    let n = items.len();
    let es = expert.embed_speech(&Tensor::new(
        [n, 1, crate::synth::SPEECH_BANDS, WINDOW],
        speech,
    )?)?;
    let ev = expert.embed_video(&Tensor::new([n, 3, s / 2, s], mouth)?)?;
    Ok((es, ev))
}
