//! Computation accounting pinned to the published reference numbers, plus
//! the structural invariants of spec resolution.

use lwtf_core::graph::{
    self, build_model, canonical, count_macs, count_params, parse_spec, wav2lip_full, wav2lip_toy,
    LayerKind,
};
use lwtf_core::tensor::Tensor;

#[test]
fn full_spec_has_seven_decoder_blocks_and_seven_taps() {
    let spec = wav2lip_full();
    assert_eq!(spec.face_decoder.len(), 7);
    let model = build_model::<f32>(&spec, 1).unwrap();
    assert_eq!(model.resolved.decoder_blocks.len(), 7);
}

#[test]
fn teacher_counts_match_published_numbers_within_5_percent() {
    let rm = wav2lip_full().resolve().unwrap();
    let params = count_params(&rm) as f64;
    let macs = count_macs(&rm) as f64;
    let params_ref = 36.3e6;
    let macs_ref = 6.21e9;
    assert!(
        (params - params_ref).abs() / params_ref < 0.05,
        "params {params} vs reference {params_ref}"
    );
    assert!(
        (macs - macs_ref).abs() / macs_ref < 0.05,
        "macs {macs} vs reference {macs_ref}"
    );
}

#[test]
fn student_reduction_is_at_least_28x_in_both_counts() {
    let teacher = wav2lip_full().resolve().unwrap();
    let student = wav2lip_full()
        .with_multiplier(0.25)
        .with_residuals(false)
        .resolve()
        .unwrap();
    let pr = count_params(&teacher) as f64 / count_params(&student) as f64;
    let mr = count_macs(&teacher) as f64 / count_macs(&student) as f64;
    assert!(pr >= 28.0, "param ratio {pr}");
    assert!(mr >= 28.0, "mac ratio {mr}");
}

#[test]
fn multiplier_quarter_scales_512_to_128() {
    let spec = wav2lip_full().with_multiplier(0.25);
    assert_eq!(spec.scale_channels(512), 128);
    assert_eq!(spec.scale_channels(3), 1); // floor at 1
}

#[test]
fn counts_are_monotone_in_the_multiplier() {
    let mut prev_p = 0;
    let mut prev_m = 0;
    for mult in [0.25, 0.5, 0.75, 1.0] {
        let rm = wav2lip_toy().with_multiplier(mult).resolve().unwrap();
        let p = count_params(&rm);
        let m = count_macs(&rm);
        assert!(p >= prev_p && m >= prev_m, "not monotone at x{mult}");
        prev_p = p;
        prev_m = m;
    }
}

#[test]
fn removing_residuals_strictly_decreases_counts() {
    let with = wav2lip_toy().resolve().unwrap();
    let without = wav2lip_toy().with_residuals(false).resolve().unwrap();
    assert!(count_params(&without) < count_params(&with));
    assert!(count_macs(&without) < count_macs(&with));
    assert!(without
        .layers
        .iter()
        .all(|l| l.spec.kind != LayerKind::ResidualConv));
}

#[test]
fn single_conv_layer_closed_form() {
    // 3 -> 8 channels, k=3, 32x32 'same': params 8*3*9+8 = 224 (no norm),
    // MACs 8*32*32*3*9 = 221184.
    let text = "\
spec_version: 1
name: micro
face_size: 32
speech_rows: 8
speech_cols: 4
[speech_encoder]
block s1
  conv s1c1 1 -> 4 k3 s2 p1 linear
[face_encoder]
block f1
  conv f1c1 3 -> 8 k3 s1 p1 linear
";
    // Build a tiny but valid spec around the layer of interest by reusing
    // the toy topology; check the layer formulas directly instead.
    let _ = text;
    let rm = wav2lip_toy().resolve().unwrap();
    let probe = rm
        .layers
        .iter()
        .find(|l| l.spec.name == "f3c1")
        .expect("layer exists");
    // f3c1: 16 -> 32, k3, from 16x16 to 8x8, batchnorm.
    assert_eq!(graph::layer_params(probe), 16 * 32 * 9 + 32 + 64);
    assert_eq!(graph::layer_macs(probe), 32 * 8 * 8 * 16 * 9);
}

#[test]
fn count_macs_equals_brute_force_output_element_oracle() {
    for rm in [
        wav2lip_toy().resolve().unwrap(),
        wav2lip_full()
            .with_multiplier(0.25)
            .with_residuals(false)
            .resolve()
            .unwrap(),
    ] {
        let mut oracle: u64 = 0;
        for l in &rm.layers {
            let per_elem = (l.spec.in_ch * l.spec.kernel * l.spec.kernel) as u64;
            for _c in 0..l.spec.out_ch {
                oracle += (l.out_hw.0 * l.out_hw.1) as u64 * per_elem;
            }
        }
        assert_eq!(count_macs(&rm), oracle);
    }
}

#[test]
fn layer_index_is_stable_across_builds() {
    let a = build_model::<f32>(&wav2lip_toy(), 3).unwrap();
    let b = build_model::<f32>(&wav2lip_toy(), 99).unwrap();
    assert_eq!(a.resolved.layer_index(), b.resolved.layer_index());
}

#[test]
fn build_is_bitwise_deterministic_in_the_seed() {
    let spec = wav2lip_toy().with_multiplier(0.25).with_residuals(false);
    let a = build_model::<f32>(&spec, 7).unwrap();
    let b = build_model::<f32>(&spec, 7).unwrap();
    for (wa, wb) in a.weights.iter().zip(&b.weights) {
        assert!(wa.weight.bit_eq(&wb.weight));
    }
    let c = build_model::<f32>(&spec, 8).unwrap();
    assert!(!a.weights[0].weight.bit_eq(&c.weights[0].weight));
}

#[test]
fn forward_on_zero_inputs_is_finite_with_face_shape() {
    let spec = wav2lip_toy();
    let model = build_model::<f32>(&spec, 5).unwrap();
    let speech = Tensor::zeros([2, 1, 16, 5]);
    let faces = Tensor::zeros([2, 6, 32, 32]);
    let out = model.forward(&speech, &faces).unwrap();
    assert_eq!(out.output.shape(), &[2, 3, 32, 32]);
    assert_eq!(out.taps.len(), 7);
    assert!(out.output.data().iter().all(|v| v.is_finite()));
    assert!(out
        .output
        .data()
        .iter()
        .all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn dangling_skip_target_is_an_error_naming_the_block() {
    let text = lwtf_core::graph::WAV2LIP_TOY_TEXT.replace("d7 <- f2", "d7 <- nosuch");
    let err = parse_spec(&text).unwrap_err();
    let msg = format!("{err}");
    assert!(msg.contains("nosuch"), "got: {msg}");
    assert!(msg.contains("d7"), "got: {msg}");
}

#[test]
fn spec_text_roundtrips_through_serializer() {
    let spec = wav2lip_full();
    let text = spec.to_text();
    let back = parse_spec(&text).unwrap();
    assert_eq!(count_params(&back.resolve().unwrap()), count_params(&spec.resolve().unwrap()));
    assert_eq!(back.skip_wiring, spec.skip_wiring);
}

#[test]
fn canonical_lookup_knows_both_specs() {
    assert!(canonical("wav2lip_full").unwrap().is_ok());
    assert!(canonical("wav2lip_toy").unwrap().is_ok());
    assert!(canonical("nope").is_none());
}
