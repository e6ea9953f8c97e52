//! The sync expert must separate synced from unsynced pairs on held-out
//! identities, stay unit-norm, and train deterministically.

use lwtf_core::rng;
use lwtf_core::synth::{
    expert_pair_accuracy, generate_dataset, make_unsynced_pairs, train_sync_expert, GenParams,
    Split,
};

fn dataset() -> lwtf_core::synth::SynthDataset {
    generate_dataset(GenParams {
        seed: 31,
        n_identities: 10,
        clips_per_identity: 6,
        clip_len: 24,
    })
    .unwrap()
}

#[test]
fn trained_expert_separates_heldout_pairs() {
    let ds = dataset();
    let expert = train_sync_expert(&ds, 600, 5).unwrap();
    let mut r = rng::seeded(123);
    let pairs = make_unsynced_pairs(&ds, Split::Test, 3, 256, &mut r).unwrap();
    let acc = expert_pair_accuracy(&expert, &pairs).unwrap();
    assert!(acc >= 0.9, "held-out accuracy {acc:.3}");
}

#[test]
fn embeddings_are_unit_norm() {
    let ds = dataset();
    let expert = lwtf_core::graph::build_sync_expert::<f32>(7);
    let mut r = rng::seeded(9);
    let pairs = make_unsynced_pairs(&ds, Split::Val, 2, 16, &mut r).unwrap();
    let es = expert.embed_speech(&pairs.speech).unwrap();
    for row in 0..16 {
        let ss: f32 = es.data()[row * 64..(row + 1) * 64].iter().map(|v| v * v).sum();
        assert!((ss.sqrt() - 1.0).abs() < 1e-5);
    }
}

#[test]
fn expert_training_is_deterministic() {
    let ds = dataset();
    let a = train_sync_expert(&ds, 40, 3).unwrap();
    let b = train_sync_expert(&ds, 40, 3).unwrap();
    for (wa, wb) in a.speech_net.weights.iter().zip(&b.speech_net.weights) {
        assert!(wa.0.bit_eq(&wb.0));
        assert!(wa.1.bit_eq(&wb.1));
    }
}
