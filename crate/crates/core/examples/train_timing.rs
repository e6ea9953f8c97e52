//! Rough step timing for the toy training loops.

use std::time::Instant;

use lwtf_core::distill::{train_student, train_teacher, StudentTrainCfg, TeacherTrainCfg};
use lwtf_core::graph::wav2lip_toy;
use lwtf_core::synth::{generate_dataset, train_sync_expert, GenParams};

fn main() {
    let threads: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    lwtf_core::runtime::set_threads(threads);
    #[cfg(feature = "parallel")]
    if threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }

    let t0 = Instant::now();
    let ds = generate_dataset(GenParams::new(7)).unwrap();
    println!("dataset: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let expert = train_sync_expert(&ds, 100, 5).unwrap();
    println!("expert 100 steps: {:?}", t0.elapsed());

    let spec = wav2lip_toy();
    let t0 = Instant::now();
    let mut tcfg = TeacherTrainCfg::new(11);
    tcfg.steps = 20;
    tcfg.batch_size = 4;
    let teacher = train_teacher(&spec, &ds, &expert, &tcfg).unwrap();
    println!("teacher 20 steps (batch 4): {:?} -> {:?}/step", t0.elapsed(), t0.elapsed() / 20);

    let student_spec = spec.clone().with_multiplier(0.25).with_residuals(false);
    let t0 = Instant::now();
    let mut scfg = StudentTrainCfg::new(13);
    scfg.steps = 20;
    scfg.batch_size = 4;
    let _student = train_student(&teacher.model, &student_spec, &ds, &expert, &scfg).unwrap();
    println!("student-KD 20 steps (batch 4): {:?} -> {:?}/step", t0.elapsed(), t0.elapsed() / 20);
}
