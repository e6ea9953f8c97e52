//! Parametric face renderer and speech-feature synthesizer.
//!
//! A face is an oval with fixed eyes and an elliptical mouth whose vertical
//! aperture follows the per-frame driving signal; identity controls colors
//! and geometry. Speech features are a smooth 16-band profile whose energy
//! centroid encodes the aperture, plus identity-colored noise. Everything is
//! a pure function of (identity, aperture, seed), so frames re-render
//! bit-identically.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::rng;
use crate::tensor::Tensor;

pub const FRAME_SIZE: usize = 32;
pub const SPEECH_BANDS: usize = 16;
/// Mouth half-height in pixels at aperture 0 (closed lips) and 1.
pub const MOUTH_RY_MIN: f64 = 0.75;
pub const MOUTH_RY_MAX: f64 = 6.5;
/// Amplitude of the identity-colored noise on speech features.
pub const SPEECH_NOISE: f64 = 0.1;

/// Geometry and palette derived deterministically from (seed, identity).
#[derive(Debug, Clone)]
pub struct IdentityParams {
    pub id: u32,
    pub bg: [f64; 3],
    pub skin: [f64; 3],
    pub lip: [f64; 3],
    pub face_cx: f64,
    pub face_cy: f64,
    pub face_rx: f64,
    pub face_ry: f64,
    pub eye_dx: f64,
    pub eye_y: f64,
    pub mouth_cy: f64,
    pub mouth_rx: f64,
    /// Per-band noise coloring for the speech features.
    pub voice: Vec<f64>,
}

pub fn identity_params(seed: u64, id: u32) -> IdentityParams {
    let mut r = rng::substream(seed ^ ((id as u64 + 1) << 17), "identity");
    let mut g = |lo: f64, hi: f64| r.gen_range(lo..hi);
    IdentityParams {
        id,
        bg: [g(0.05, 0.35), g(0.05, 0.35), g(0.05, 0.35)],
        skin: [g(0.55, 0.9), g(0.45, 0.75), g(0.35, 0.65)],
        lip: [g(0.12, 0.3), g(0.02, 0.1), g(0.02, 0.1)],
        face_cx: 16.0 + g(-1.0, 1.0),
        face_cy: 15.0 + g(-1.0, 1.0),
        face_rx: g(10.0, 12.0),
        face_ry: g(12.0, 14.0),
        eye_dx: g(3.5, 5.0),
        eye_y: g(9.0, 11.0),
        mouth_cy: g(21.0, 23.0),
        mouth_rx: g(4.5, 6.0),
        voice: (0..SPEECH_BANDS).map(|_| g(-1.0, 1.0)).collect(),
    }
}

/// Mouth half-height as a function of aperture; the renderer draws exactly
/// this ellipse.
pub fn mouth_ry(aperture: f32) -> f64 {
    MOUTH_RY_MIN + aperture as f64 * (MOUTH_RY_MAX - MOUTH_RY_MIN)
}

fn ellipse_coverage(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> f64 {
    let v = ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2);
    ((1.0 - v) * 4.0 + 0.5).clamp(0.0, 1.0)
}

/// Render one 3x32x32 frame in [0,1].
pub fn render_frame(idp: &IdentityParams, aperture: f32) -> Tensor<f32> {
    let s = FRAME_SIZE;
    let mut data = vec![0.0f32; 3 * s * s];
    let m_ry = mouth_ry(aperture);
    for y in 0..s {
        for x in 0..s {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut px = idp.bg;
            let face = ellipse_coverage(fx, fy, idp.face_cx, idp.face_cy, idp.face_rx, idp.face_ry);
            for c in 0..3 {
                px[c] = px[c] * (1.0 - face) + idp.skin[c] * face;
            }
            let eye_l = ellipse_coverage(fx, fy, idp.face_cx - idp.eye_dx, idp.eye_y, 1.3, 1.3);
            let eye_r = ellipse_coverage(fx, fy, idp.face_cx + idp.eye_dx, idp.eye_y, 1.3, 1.3);
            let eye = (eye_l + eye_r).min(1.0);
            for c in 0..3 {
                px[c] = px[c] * (1.0 - eye) + 0.08 * eye;
            }
            let mouth = ellipse_coverage(fx, fy, idp.face_cx, idp.mouth_cy, idp.mouth_rx, m_ry);
            for c in 0..3 {
                px[c] = px[c] * (1.0 - mouth) + idp.lip[c] * mouth;
            }
            for c in 0..3 {
                data[(c * s + y) * s + x] = px[c] as f32;
            }
        }
    }
    Tensor::new([3, s, s], data).expect("fixed shape")
}

/// Speech feature vector for one frame: a Gaussian band profile centered at
/// a position that encodes the aperture, plus identity-colored noise.
pub fn speech_features(idp: &IdentityParams, aperture: f32, noise: &[f64]) -> Vec<f32> {
    debug_assert_eq!(noise.len(), SPEECH_BANDS);
    let c = 1.5 + aperture as f64 * 13.0;
    (0..SPEECH_BANDS)
        .map(|k| {
            let bump = (-((k as f64 - c).powi(2)) / (2.0 * 1.2 * 1.2)).exp();
            (bump + SPEECH_NOISE * idp.voice[k] * noise[k]) as f32
        })
        .collect()
}

/// Smooth in-[0,1] aperture curve for one clip.
pub fn aperture_curve(r: &mut rng::Prng, len: usize) -> Vec<f32> {
    let a1 = r.gen_range(0.3..0.45);
    let a2 = r.gen_range(0.12..0.25);
    let f1 = r.gen_range(1.0..2.5);
    let f2 = r.gen_range(3.0..6.0);
    let p1 = r.gen_range(0.0..core::f64::consts::TAU);
    let p2 = r.gen_range(0.0..core::f64::consts::TAU);
    (0..len)
        .map(|t| {
            let u = t as f64 / len as f64;
            let v = 0.5
                + a1 * (core::f64::consts::TAU * (f1 * u) + p1).sin()
                + a2 * (core::f64::consts::TAU * (f2 * u) + p2).sin();
            v.clamp(0.0, 1.0) as f32
        })
        .collect()
}
