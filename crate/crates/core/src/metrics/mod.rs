//! Desk-scale evaluation metrics: visual fidelity as a Fréchet distance
//! over a fixed seed-pinned embedder, lip-sync proxies, and PSNR/SSIM.
//!
//! All metrics are pure functions of their inputs.

mod frechet;

pub use frechet::{frechet_distance, sym_eig};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::distill::{build_feature_extractor, ssim_index, FeatureExtractor, FEATURE_NET_SEED};
use crate::error::{Error, Result};
use crate::graph::SyncExpert;
use crate::tensor::{self, Tensor};

/// Covariance shrinkage added to keep small-sample moments well conditioned.
pub const COV_SHRINKAGE: f64 = 1e-6;
/// Evaluation-set size used by the quality pipelines at toy scale.
pub const EVAL_FRAMES: usize = 256;
/// Default half-width of the sync search window.
pub const SYNC_WINDOW_RADIUS: usize = 7;

/// Frame embeddings with their Gaussian moments.
pub struct EmbeddingSet {
    /// n x d embedding matrix.
    pub embeddings: Tensor<f32>,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    /// Set when n < d (moments are poorly determined).
    pub underdetermined: bool,
}

/// The fixed embedder: final stage of the shared feature extractor,
/// globally pooled to 64-d.
pub fn metric_embedder() -> FeatureExtractor<f32> {
    build_feature_extractor(FEATURE_NET_SEED)
}

/// Embed frames (N,3,H,W) and compute mean/covariance with shrinkage.
pub fn embed_frames(frames: &Tensor<f32>, embedder: &FeatureExtractor<f32>) -> Result<EmbeddingSet> {
    let (n, _, _, _) = frames.dims4()?;
    if n < 2 {
        return Err(Error::Numeric {
            detail: "need at least 2 frames for covariance".into(),
        });
    }
    let stages = embedder.stages(frames)?;
    let last = stages.last().expect("non-empty extractor");
    let emb = tensor::global_avg_pool(last)?;
    let (rows, d) = emb.dims2()?;

    let mut mean = vec![0.0f64; d];
    for i in 0..rows {
        for j in 0..d {
            mean[j] += emb.data()[i * d + j] as f64;
        }
    }
    for m in mean.iter_mut() {
        *m /= rows as f64;
    }
    let mut cov = vec![0.0f64; d * d];
    for i in 0..rows {
        for a in 0..d {
            let da = emb.data()[i * d + a] as f64 - mean[a];
            for b in a..d {
                let db = emb.data()[i * d + b] as f64 - mean[b];
                cov[a * d + b] += da * db;
            }
        }
    }
    let denom = (rows - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / denom;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
        cov[a * d + a] += COV_SHRINKAGE;
    }
    Ok(EmbeddingSet {
        embeddings: emb,
        mean,
        cov,
        underdetermined: rows < d,
    })
}

/// Fréchet distance between the embedding moments of two frame sets.
pub fn proxy_fid(real: &Tensor<f32>, generated: &Tensor<f32>) -> Result<f64> {
    let embedder = metric_embedder();
    let a = embed_frames(real, &embedder)?;
    let b = embed_frames(generated, &embedder)?;
    frechet_distance(&a.mean, &a.cov, &b.mean, &b.cov)
}

/// Lip-sync proxies over aligned embedding sequences.
///
/// For each valid t, d(t, tau) is the L2 distance between the speech
/// embedding at t and the video embedding at t + tau for |tau| <= radius.
/// `sync_dist` is the mean aligned distance d(t, 0); `sync_conf` is the mean
/// (median over tau - min over tau) gap: higher means a sharper sync
/// minimum.
pub fn sync_proxy_from_embeddings(
    speech: &Tensor<f32>,
    video: &Tensor<f32>,
    radius: usize,
) -> Result<(f64, f64)> {
    let (n, d) = speech.dims2()?;
    if video.dims2()? != (n, d) {
        return Err(Error::shape("sync_proxy", "sequence shape mismatch"));
    }
    if n < 2 * radius + 1 {
        return Err(Error::Numeric {
            detail: format!("sequence of {n} frames shorter than window 2*{radius}+1"),
        });
    }
    let dist = |t: usize, u: usize| -> f64 {
        let mut acc = 0.0f64;
        for j in 0..d {
            let diff = (speech.data()[t * d + j] - video.data()[u * d + j]) as f64;
            acc += diff * diff;
        }
        acc.sqrt()
    };
    let mut sync_dist = 0.0;
    let mut sync_conf = 0.0;
    let mut count = 0usize;
    for t in radius..n - radius {
        let ds: Vec<f64> = (-(radius as isize)..=radius as isize)
            .map(|tau| dist(t, (t as isize + tau) as usize))
            .collect();
        sync_dist += ds[radius];
        let mut sorted = ds.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        let median = sorted[sorted.len() / 2];
        sync_conf += median - sorted[0];
        count += 1;
    }
    Ok((sync_dist / count as f64, sync_conf / count as f64))
}

/// Sync proxies for per-frame speech windows and frames via the expert.
pub fn sync_proxy(
    expert: &SyncExpert<f32>,
    speech_windows: &Tensor<f32>,
    frames: &Tensor<f32>,
    radius: usize,
) -> Result<(f64, f64)> {
    let es = expert.embed_speech(speech_windows)?;
    let ev = expert.embed_video(&crate::synth::mouth_crop(frames)?)?;
    sync_proxy_from_embeddings(&es, &ev, radius)
}

/// Peak signal-to-noise ratio for unit-range images; `None` marks the
/// infinite PSNR of identical inputs (serialized as the token "inf").
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Option<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "psnr",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let mut mse = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = (x - y) as f64;
        mse += d * d;
    }
    mse /= a.len() as f64;
    if mse == 0.0 {
        return Ok(None);
    }
    Ok(Some(10.0 * (1.0 / mse).log10()))
}

/// Mean SSIM index (the loss module owns the formula).
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    Ok(ssim_index(a, b)? as f64)
}

/// Latency summary attached to reports by the benchmark harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencySummary {
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub iters: usize,
    pub threads: usize,
}

/// One evaluation record: quality, sync, computation, and provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model_id: String,
    pub precision: String,
    pub seed: u64,
    pub dataset_id: String,
    pub proxy_fid: f64,
    pub ssim: f64,
    /// None encodes infinite PSNR (identical images).
    pub psnr_db: Option<f64>,
    pub sync_dist: f64,
    pub sync_conf: f64,
    pub macs: u64,
    pub params: u64,
    pub latency: Option<LatencySummary>,
}

impl MetricsReport {
    /// Fixed CSV column order shared by every export.
    pub const CSV_HEADER: &'static str =
        "model_id,precision,proxy_fid,ssim,psnr,sync_dist,sync_conf,macs,params";

    pub fn validate(&self) -> Result<()> {
        let finite = self.proxy_fid.is_finite()
            && self.ssim.is_finite()
            && self.sync_dist.is_finite()
            && self.sync_conf.is_finite()
            && self.psnr_db.map_or(true, f64::is_finite);
        if !finite {
            return Err(Error::Numeric {
                detail: "metrics report contains non-finite values".into(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn frames(seed: u64, n: usize) -> Tensor<f32> {
        let mut r = crate::rng::seeded(seed);
        Tensor::from_fn([n, 3, 32, 32], |_| r.gen_range(0.0..1.0f32))
    }

    #[test]
    fn proxy_fid_of_a_set_with_itself_is_zero() {
        let f = frames(1, 48);
        let d = proxy_fid(&f, &f).unwrap();
        assert!(d.abs() < 1e-6, "got {d}");
    }

    #[test]
    fn proxy_fid_is_permutation_invariant() {
        let f = frames(2, 32);
        let mut perm = Vec::new();
        for i in (0..32).rev() {
            perm.extend_from_slice(tensor::slice(&f, 0, i, 1).unwrap().data());
        }
        let g = Tensor::new([32, 3, 32, 32], perm).unwrap();
        let base = frames(3, 32);
        let a = proxy_fid(&base, &f).unwrap();
        let b = proxy_fid(&base, &g).unwrap();
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn proxy_fid_grows_with_noise_level() {
        let real = frames(4, 64);
        let mut r = crate::rng::seeded(5);
        let mut noisy = |amp: f32| {
            let mut t = real.clone();
            for v in t.make_mut() {
                *v = (*v + r.gen_range(-amp..amp)).clamp(0.0, 1.0);
            }
            t
        };
        let weak = proxy_fid(&real, &noisy(0.05)).unwrap();
        let mid = proxy_fid(&real, &noisy(0.15)).unwrap();
        let strong = proxy_fid(&real, &noisy(0.4)).unwrap();
        assert!(weak < mid && mid < strong, "{weak} {mid} {strong}");
    }

    #[test]
    fn psnr_cases() {
        let a = frames(6, 2);
        assert!(psnr(&a, &a).unwrap().is_none()); // inf sentinel
        let mut b = a.clone();
        // MSE 0.01 -> 20 dB
        let step = 0.1f32;
        for v in b.make_mut() {
            *v += step;
        }
        let p = psnr(&a, &b).unwrap().unwrap();
        assert!((p - 20.0).abs() < 0.2, "got {p}");
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn sync_conf_is_zero_at_radius_zero() {
        let mut r = crate::rng::seeded(7);
        let e1 = Tensor::from_fn([20, 8], |_| r.gen_range(-1.0..1.0f32));
        let e2 = Tensor::from_fn([20, 8], |_| r.gen_range(-1.0..1.0f32));
        let (d, c) = sync_proxy_from_embeddings(&e1, &e2, 0).unwrap();
        assert!(d >= 0.0);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn short_sequences_error() {
        let e = Tensor::<f32>::zeros([5, 4]);
        assert!(sync_proxy_from_embeddings(&e, &e, 7).is_err());
    }
}
