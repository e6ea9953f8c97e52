//! Loss-term correctness: analytic minima, hand values, independent
//! formula oracles, and the weighted-sum combiners.

use lwtf_core::distill::{
    self, build_feature_extractor, channel_attention, ssim_index, student_total, teacher_total,
    StudentObjectiveConfig, SyncSchedule, TeacherObjectiveConfig,
};
use lwtf_core::graph::build_sync_expert;
use lwtf_core::rng;
use lwtf_core::tape::Tape;
use lwtf_core::tensor::Tensor;
use rand::Rng;

fn randt(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let mut r = rng::seeded(seed);
    Tensor::from_fn(shape.to_vec(), |_| r.gen_range(lo..hi))
}

fn randt32(seed: u64, shape: &[usize], lo: f32, hi: f32) -> Tensor<f32> {
    let mut r = rng::seeded(seed);
    Tensor::from_fn(shape.to_vec(), |_| r.gen_range(lo..hi))
}

#[test]
fn recon_loss_identical_and_shifted() {
    let a = randt(1, &[2, 3, 4, 4], 0.0, 1.0);
    assert_eq!(distill::recon_loss(&a, &a).unwrap().item(), 0.0);
    let b = a.add_scalar(0.5).unwrap();
    let l = distill::recon_loss(&b, &a).unwrap().item();
    assert!((l - 0.5).abs() < 1e-9);
}

#[test]
fn recon_loss_matches_direct_summation() {
    let a = randt(2, &[2, 3, 5, 5], 0.0, 1.0);
    let b = randt(3, &[2, 3, 5, 5], 0.0, 1.0);
    let want: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.len() as f64;
    let got = distill::recon_loss(&a, &b).unwrap().item();
    assert!((got - want).abs() < 1e-6);
}

#[test]
fn gan_losses_at_zero_logits_are_ln2() {
    // d_loss = BCE(0,1) + BCE(0,0) = 2 ln 2; g_loss = ln 2.
    let tape = Tape::<f64>::new();
    let zeros = tape.constant(Tensor::zeros([4]));
    let d = distill::gan_d_loss_traced(zeros, zeros).unwrap();
    assert!((d.value().item() - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
    let g = distill::bce_with_logits_traced(zeros, true).unwrap();
    assert!((g.value().item() - core::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn gan_d_loss_vanishes_for_a_confident_discriminator() {
    let tape = Tape::<f64>::new();
    let real = tape.constant(Tensor::full([4], 30.0));
    let fake = tape.constant(Tensor::full([4], -30.0));
    let d = distill::gan_d_loss_traced(real, fake).unwrap();
    assert!(d.value().item() < 1e-12);
}

#[test]
fn sync_loss_floor_and_zero() {
    // Identical unit embeddings -> cosine 1 -> loss 0;
    // orthogonal -> clamp floor -> -ln(eps).
    let expert = build_sync_expert::<f64>(3);
    let _ = &expert;
    // Exercise the clamp arithmetic directly.
    let p = Tensor::<f64>::scalar(1.0).clamp_t(distill::SYNC_EPS, 1.0).unwrap();
    assert_eq!(p.log_t().unwrap().neg().unwrap().item(), 0.0);
    let p0 = Tensor::<f64>::scalar(0.0).clamp_t(distill::SYNC_EPS, 1.0).unwrap();
    let want = -(distill::SYNC_EPS.ln());
    assert!((p0.log_t().unwrap().neg().unwrap().item() - want).abs() < 1e-9);
}

#[test]
fn ssim_loss_zero_on_identical_inputs() {
    let a = randt(5, &[1, 3, 16, 16], 0.0, 1.0);
    let idx = ssim_index(&a, &a).unwrap();
    assert!((idx - 1.0).abs() < 1e-12, "ssim index {idx}");
}

/// Independent direct-formula SSIM oracle: explicit window loops.
#[test]
fn ssim_matches_direct_formula_oracle() {
    let a = randt(6, &[1, 1, 14, 14], 0.0, 1.0);
    let b = randt(7, &[1, 1, 14, 14], 0.0, 1.0);

    // Build the same normalized gaussian window.
    let k = 11usize;
    let sigma = 1.5f64;
    let mut g1 = vec![0.0; k];
    let mut s = 0.0;
    for (i, g) in g1.iter_mut().enumerate() {
        let x = i as f64 - 5.0;
        *g = (-x * x / (2.0 * sigma * sigma)).exp();
        s += *g;
    }
    for g in g1.iter_mut() {
        *g /= s;
    }
    let w = |i: usize, j: usize| g1[i] * g1[j];

    let (h, wd) = (14usize, 14usize);
    let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
    let mut total = 0.0;
    let mut count = 0;
    for oy in 0..h - k + 1 {
        for ox in 0..wd - k + 1 {
            let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let xv = a.data()[(oy + i) * wd + ox + j];
                    let yv = b.data()[(oy + i) * wd + ox + j];
                    let wv = w(i, j);
                    mx += wv * xv;
                    my += wv * yv;
                    mxx += wv * xv * xv;
                    myy += wv * yv * yv;
                    mxy += wv * xv * yv;
                }
            }
            let (vx, vy, cxy) = (mxx - mx * mx, myy - my * my, mxy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    let want = total / count as f64;
    let got = ssim_index(&a, &b).unwrap();
    assert!((got - want).abs() < 1e-5, "{got} vs oracle {want}");
}

#[test]
fn tv_loss_zero_on_constant_image() {
    let a = Tensor::<f64>::full([2, 3, 8, 8], 0.42);
    assert_eq!(distill::tv_loss(&a).unwrap(), 0.0);
}

#[test]
fn tv_loss_matches_hand_sum() {
    let a = randt(8, &[1, 1, 3, 3], 0.0, 1.0);
    let d = a.data();
    let mut sum = 0.0;
    // vertical neighbors (along H)
    for y in 0..2 {
        for x in 0..3 {
            sum += (d[(y + 1) * 3 + x] - d[y * 3 + x]).powi(2);
        }
    }
    // horizontal neighbors (along W)
    for y in 0..3 {
        for x in 0..2 {
            sum += (d[y * 3 + x + 1] - d[y * 3 + x]).powi(2);
        }
    }
    let want = sum / 12.0;
    let got = distill::tv_loss(&a).unwrap();
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn feature_and_style_losses_vanish_on_identical_inputs() {
    let fx = build_feature_extractor::<f64>(11);
    let a = randt(9, &[2, 3, 16, 16], 0.0, 1.0);
    assert_eq!(distill::feature_loss(&fx, &a, &a).unwrap(), 0.0);
    assert_eq!(distill::style_loss(&fx, &a, &a).unwrap(), 0.0);
}

#[test]
fn gram_of_constant_single_channel_is_c_squared() {
    let c = 0.7f64;
    let f = Tensor::<f64>::full([1, 1, 4, 4], c);
    let g = distill::gram(&f).unwrap();
    assert_eq!(g.len(), 1);
    assert_eq!(g[0].shape(), &[1, 1]);
    assert!((g[0].item() - c * c).abs() < 1e-12);
}

/// Direct Gram-matrix oracle for the style loss.
#[test]
fn style_loss_matches_direct_gram_oracle() {
    let fx = build_feature_extractor::<f64>(11);
    let a = randt(10, &[1, 3, 16, 16], 0.0, 1.0);
    let b = randt(11, &[1, 3, 16, 16], 0.0, 1.0);

    let gram_direct = |feat: &Tensor<f64>| -> Vec<Vec<f64>> {
        let (_, c, h, w) = feat.dims4().unwrap();
        let mut g = vec![vec![0.0; c]; c];
        for i in 0..c {
            for j in 0..c {
                let mut acc = 0.0;
                for p in 0..h * w {
                    acc += feat.data()[i * h * w + p] * feat.data()[j * h * w + p];
                }
                g[i][j] = acc / (c * h * w) as f64;
            }
        }
        g
    };
    let mut want = 0.0;
    let sa = fx.stages(&a).unwrap();
    let sb = fx.stages(&b).unwrap();
    for (fa, fb) in sa.iter().zip(&sb) {
        let (ga, gb) = (gram_direct(fa), gram_direct(fb));
        let c = ga.len();
        let mut acc = 0.0;
        for i in 0..c {
            for j in 0..c {
                acc += (ga[i][j] - gb[i][j]).powi(2);
            }
        }
        want += acc / (c * c) as f64;
    }
    let got = distill::style_loss(&fx, &a, &b).unwrap();
    assert!(
        (got - want).abs() <= 1e-5 * want.max(1.0),
        "{got} vs oracle {want}"
    );
}

#[test]
fn channel_kd_zero_at_identity_and_attention_normalized() {
    let tape = Tape::<f32>::new();
    let mut taps_t = Vec::new();
    let mut taps_s = Vec::new();
    let mut adapters = Vec::new();
    for i in 0..7u64 {
        let c = 4usize;
        let t = randt32(20 + i, &[2, c, 4, 4], -1.0, 1.0);
        taps_t.push(t.clone());
        taps_s.push(tape.constant(t));
        // identity 1x1 adapter
        let eye = Tensor::from_fn([c, c, 1, 1], |idx| {
            if idx / c == idx % c {
                1.0f32
            } else {
                0.0
            }
        });
        adapters.push(tape.constant(eye));
    }
    let loss =
        distill::channel_kd_loss_traced(&tape, &taps_t, &taps_s, &adapters).unwrap();
    assert!(
        loss.value().item().abs() <= 1e-7,
        "identity channel-KD loss {}",
        loss.value().item()
    );

    // Attention vectors sum to one.
    let att = channel_attention(&taps_t[0]).unwrap();
    for row in 0..2 {
        let s: f32 = att.data()[row * 4..(row + 1) * 4].iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn channel_kd_requires_seven_taps() {
    let tape = Tape::<f32>::new();
    let t = vec![randt32(1, &[1, 2, 2, 2], 0.0, 1.0); 6];
    let s: Vec<_> = t.iter().map(|x| tape.constant(x.clone())).collect();
    let a: Vec<_> = (0..6)
        .map(|_| tape.constant(Tensor::<f32>::zeros([2, 2, 1, 1])))
        .collect();
    assert!(distill::channel_kd_loss_traced(&tape, &t, &s, &a).is_err());
}

#[test]
fn objective_totals_reproduce_hand_computed_sums() {
    let t = TeacherObjectiveConfig::default();
    let total = teacher_total(&t, 1.0f64, 1.0, 1.0);
    assert_eq!(total, 0.07 + 0.9 + 0.03);
    assert!((total - 1.0).abs() < 1e-12);

    let s = StudentObjectiveConfig::default();
    let total = student_total(&s, 1.0f64, 1.0, 1.0, 1.0, 1.0, 1.0, true);
    assert_eq!(total, 10.0 + 10.0 + 10.0 + 10000.0 + 0.00001 + 3.0);

    // Inactive sync contributes exactly zero.
    let gated = student_total(&s, 1.0f64, 1.0, 1.0, 1.0, 1.0, 123.0, false);
    assert_eq!(gated, 10.0 + 10.0 + 10.0 + 10000.0 + 0.00001);
}

#[test]
fn mid_schedule_gates_at_the_fraction() {
    let m = SyncSchedule::Mid(0.5);
    assert!(!m.active(0, 100));
    assert!(!m.active(49, 100));
    assert!(m.active(50, 100));
    assert!(SyncSchedule::All.active(0, 100));
}

#[test]
fn composite_objective_passes_gradcheck_on_tiny_model() {
    // A weighted student-style objective over a tiny conv "generator":
    // checks that gradients through ssim + feature + style + tv + recon
    // compose correctly.
    let fx = build_feature_extractor::<f64>(3);
    let target = randt(31, &[1, 3, 12, 12], 0.1, 0.9);
    let x0 = randt(32, &[1, 3, 12, 12], 0.1, 0.9);
    let tstages = fx.stages(&target).unwrap();
    let res = lwtf_core::gradcheck::gradcheck(
        |tape, vars| {
            let x = vars[0].sigmoid()?;
            let ssim = distill::ssim_loss_traced(tape, x, &target)?;
            let feat = distill::feature_loss_traced(tape, &fx, x, &tstages)?;
            let style = distill::style_loss_traced(tape, &fx, x, &tstages)?;
            let tv = distill::tv_loss_traced(x)?;
            let recon = x.l1_distance(tape.constant(target.clone()))?;
            ssim.scale(10.0)?
                .add(feat.scale(10.0)?)?
                .add(style.scale(100.0)?)?
                .add(tv.scale(0.1)?)?
                .add(recon.scale(0.9)?)
        },
        &[x0],
        1e-3,
    );
    if let Err(e) = res {
        panic!("composite gradcheck failed: {e}");
    }
}
