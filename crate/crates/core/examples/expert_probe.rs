//! Accuracy-vs-steps probe for the sync expert across seeds.

use lwtf_core::rng;
use lwtf_core::synth::{
    expert_pair_accuracy, generate_dataset, make_unsynced_pairs, train_sync_expert, GenParams,
    Split,
};

fn main() {
    for ds_seed in [7u64, 11, 31] {
        let ds = generate_dataset(GenParams::new(ds_seed)).unwrap();
        for steps in [400usize, 800, 1200] {
            let expert = train_sync_expert(&ds, steps, 5).unwrap();
            let mut accs = Vec::new();
            for (split, name) in [(Split::Val, "val"), (Split::Test, "test")] {
                let mut r = rng::seeded(123);
                let pairs = make_unsynced_pairs(&ds, split, 3, 256, &mut r).unwrap();
                accs.push(format!(
                    "{name}={:.3}",
                    expert_pair_accuracy(&expert, &pairs).unwrap()
                ));
            }
            println!("ds={ds_seed} steps={steps}: {}", accs.join(" "));
        }
    }
}
