//! The two training loops: adversarial teacher pretraining and
//! non-adversarial student distillation from a frozen teacher.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{
    apply_stat_updates, build_discriminator, build_model, BuiltModel, GeneratorSpec, RunOut,
    SyncExpert, TapeExec,
};
use crate::optim::{Adam, AdamCfg};
use crate::rng::{self};
use crate::synth::{make_batch, Split, SynthDataset};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::config::{StudentObjectiveConfig, TeacherObjectiveConfig};
use super::feature::{build_feature_extractor, FeatureExtractor, FEATURE_NET_SEED};
use super::losses;

/// Per-snapshot record of the individual loss terms.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub terms: Vec<(String, f64)>,
}

/// Result of a training run. A NaN loss aborts the loop; the model carries
/// the last-good weights and `diverged_at` marks the failing step.
pub struct TrainOutcome {
    pub model: BuiltModel<f32>,
    pub snapshots: Vec<Snapshot>,
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TeacherTrainCfg {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub snapshot_every: usize,
    pub objective: TeacherObjectiveConfig,
}

impl TeacherTrainCfg {
    pub fn new(seed: u64) -> Self {
        TeacherTrainCfg {
            steps: 500,
            batch_size: 4,
            seed,
            lr: 1e-4,
            snapshot_every: 50,
            objective: TeacherObjectiveConfig::default(),
        }
    }
}

/// Adversarial teacher pretraining: alternating discriminator and
/// generator updates with the weighted GAN/reconstruction/sync objective.
pub fn train_teacher(
    spec: &GeneratorSpec,
    ds: &SynthDataset,
    expert: &SyncExpert<f32>,
    cfg: &TeacherTrainCfg,
) -> Result<TrainOutcome> {
    cfg.objective.validate()?;
    let mut model = build_model::<f32>(spec, cfg.seed)?;
    let mut disc = build_discriminator::<f32>(cfg.seed ^ 0xD15C);
    let mut adam_g = Adam::new(AdamCfg::with_lr(cfg.lr), &model.params_ordered());
    let mut adam_d = Adam::new(AdamCfg::with_lr(cfg.lr), &disc.net.params());
    let mut batch_rng = rng::substream(cfg.seed, "teacher-batches");

    let mut snapshots = Vec::new();
    let mut last_good = model.clone();
    for step in 0..cfg.steps {
        let batch = make_batch(ds, Split::Train, cfg.batch_size, &mut batch_rng)?;
        let faces = batch.faces()?;

        // Generator forward (train-mode batchnorm), traced once per step.
        let tape = Tape::new();
        let mut exec = TapeExec::new(&model, &tape, true, true);
        let out = exec.run(
            tape.constant(batch.speech.clone()),
            tape.constant(faces.clone()),
        )?;
        let fake = out.output;
        let stat_updates = core::mem::take(&mut exec.stat_updates);
        let gen_vars = exec.param_vars();

        // Discriminator step on detached fakes.
        let d_loss_val = {
            let dtape = Tape::new();
            let dvars = disc.net.register(&dtape, true);
            let real_logits = disc.logits_traced(&dvars, dtape.constant(batch.target.clone()))?;
            let fake_logits = disc.logits_traced(&dvars, dtape.constant(fake.value()))?;
            let d_loss = losses::gan_d_loss_traced(real_logits, fake_logits)?;
            let v = d_loss.value().item() as f64;
            let grads = dtape.backward(d_loss)?;
            let g: Vec<Option<Tensor<f32>>> = dvars
                .iter()
                .flat_map(|(w, b)| [grads.get(*w).cloned(), grads.get(*b).cloned()])
                .collect();
            adam_d.step(&mut disc.net.params_mut(), &g)?;
            v
        };

        // Generator step through the updated discriminator.
        let dvars = disc.net.register(&tape, false);
        let fake_logits = disc.logits_traced(&dvars, fake)?;
        let g_gan = losses::bce_with_logits_traced(fake_logits, true)?;
        let recon = losses::recon_loss_traced(fake, tape.constant(batch.target.clone()))?;
        let sync = losses::sync_loss_traced(&tape, expert, &batch.speech, fake)?;
        let total = g_gan
            .scale(cfg.objective.lambda_gan)?
            .add(recon.scale(cfg.objective.lambda_recon)?)?
            .add(sync.scale(cfg.objective.lambda_sync)?)?;

        let terms = alloc::vec![
            ("gan_d".to_string(), d_loss_val),
            ("gan_g".to_string(), g_gan.value().item() as f64),
            ("recon".to_string(), recon.value().item() as f64),
            ("sync".to_string(), sync.value().item() as f64),
            ("total".to_string(), total.value().item() as f64),
        ];
        if !terms.iter().all(|(_, v)| v.is_finite()) {
            return Ok(TrainOutcome {
                model: last_good,
                snapshots,
                diverged_at: Some(step),
            });
        }

        let grads = tape.backward(total)?;
        let g: Vec<Option<Tensor<f32>>> = gen_vars.iter().map(|v| grads.get(*v).cloned()).collect();
        adam_g.step(&mut model.params_mut_ordered(), &g)?;
        apply_stat_updates(&mut model, &stat_updates);

        if step % cfg.snapshot_every == 0 || step + 1 == cfg.steps {
            snapshots.push(Snapshot { step, terms });
            last_good = model.clone();
        }
    }
    Ok(TrainOutcome {
        model,
        snapshots,
        diverged_at: None,
    })
}

#[derive(Debug, Clone)]
pub struct StudentTrainCfg {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub snapshot_every: usize,
    pub objective: StudentObjectiveConfig,
}

impl StudentTrainCfg {
    pub fn new(seed: u64) -> Self {
        StudentTrainCfg {
            steps: 500,
            batch_size: 4,
            seed,
            lr: 1e-4,
            snapshot_every: 50,
            objective: StudentObjectiveConfig::default(),
        }
    }
}

/// Distillation training of the compact student. Never constructs or
/// updates a discriminator; the teacher stays frozen throughout. Adapters
/// (1x1 convs lifting student tap width to teacher width) train jointly and
/// are discarded from the returned model.
pub fn train_student(
    teacher: &BuiltModel<f32>,
    student_spec: &GeneratorSpec,
    ds: &SynthDataset,
    expert: &SyncExpert<f32>,
    cfg: &StudentTrainCfg,
) -> Result<TrainOutcome> {
    cfg.objective.validate()?;
    let obj = &cfg.objective;
    let mut model = build_model::<f32>(student_spec, cfg.seed)?;
    let fx: FeatureExtractor<f32> = build_feature_extractor(FEATURE_NET_SEED);

    // Adapter widths come from the decoder tap channel counts.
    let tap_channels = |m: &BuiltModel<f32>| -> Vec<usize> {
        m.resolved
            .decoder_blocks
            .iter()
            .map(|ids| m.resolved.layers[*ids.last().expect("non-empty block")].spec.out_ch)
            .collect()
    };
    let t_ch = tap_channels(teacher);
    let s_ch = tap_channels(&model);
    let mut adapters: Vec<Tensor<f32>> = if obj.use_kd {
        let mut r = rng::substream(cfg.seed, "kd-adapters");
        t_ch.iter()
            .zip(&s_ch)
            .map(|(&tc, &sc)| rng::kaiming_uniform(&mut r, sc, [tc, sc, 1, 1]))
            .collect()
    } else {
        Vec::new()
    };

    let mut adam = {
        let mut params = model.params_ordered();
        params.extend(adapters.iter());
        Adam::new(AdamCfg::with_lr(cfg.lr), &params)
    };
    let mut batch_rng = rng::substream(cfg.seed, "student-batches");

    let mut snapshots = Vec::new();
    let mut last_good = model.clone();
    for step in 0..cfg.steps {
        let batch = make_batch(ds, Split::Train, cfg.batch_size, &mut batch_rng)?;
        let faces = batch.faces()?;

        // Frozen teacher forward (eval mode) only when distilling.
        let teacher_out: Option<RunOut<Tensor<f32>>> = if obj.use_kd {
            Some(teacher.forward(&batch.speech, &faces)?)
        } else {
            None
        };
        let target = match &teacher_out {
            Some(t) => t.output.clone(),
            None => batch.target.clone(),
        };

        let tape = Tape::new();
        let mut exec = TapeExec::new(&model, &tape, true, true);
        let out = exec.run(
            tape.constant(batch.speech.clone()),
            tape.constant(faces.clone()),
        )?;
        let stat_updates = core::mem::take(&mut exec.stat_updates);
        let student_vars = exec.param_vars();

        let ssim = losses::ssim_loss_traced(&tape, out.output, &target)?;
        let target_stages = fx.stages(&target)?;
        let feature = losses::feature_loss_traced(&tape, &fx, out.output, &target_stages)?;
        let style = losses::style_loss_traced(&tape, &fx, out.output, &target_stages)?;
        let tv = losses::tv_loss_traced(out.output)?;

        let adapter_vars: Vec<Var<'_, f32>> =
            adapters.iter().map(|a| tape.param(a.clone())).collect();
        let cd = match &teacher_out {
            Some(t) => {
                let t_taps: Vec<Tensor<f32>> =
                    t.taps.iter().map(|(_, v)| v.clone()).collect();
                let s_taps: Vec<Var<'_, f32>> = out.taps.iter().map(|(_, v)| *v).collect();
                Some(losses::channel_kd_loss_traced(
                    &tape,
                    &t_taps,
                    &s_taps,
                    &adapter_vars,
                )?)
            }
            None => None,
        };

        // Under the Mid schedule the sync term contributes exactly zero
        // before the switch point, so it is not evaluated at all.
        let sync_active = obj.sync_schedule.active(step, cfg.steps);
        let sync = if sync_active {
            Some(losses::sync_loss_traced(&tape, expert, &batch.speech, out.output)?)
        } else {
            None
        };

        let mut total = ssim
            .scale(obj.lambda_ssim)?
            .add(feature.scale(obj.lambda_feature)?)?
            .add(style.scale(obj.lambda_style)?)?
            .add(tv.scale(obj.lambda_tv)?)?;
        if let Some(cd) = cd {
            total = total.add(cd.scale(obj.lambda_cd)?)?;
        }
        if let Some(sync) = sync {
            total = total.add(sync.scale(obj.lambda_sync)?)?;
        }

        let mut terms = alloc::vec![
            ("ssim".to_string(), ssim.value().item() as f64),
            ("feature".to_string(), feature.value().item() as f64),
            ("style".to_string(), style.value().item() as f64),
            ("tv".to_string(), tv.value().item() as f64),
            (
                "sync".to_string(),
                sync.map_or(0.0, |s| s.value().item() as f64),
            ),
            ("total".to_string(), total.value().item() as f64),
        ];
        if let Some(cd) = cd {
            terms.push(("channel_kd".to_string(), cd.value().item() as f64));
        }
        if !terms.iter().all(|(_, v)| v.is_finite()) {
            return Ok(TrainOutcome {
                model: last_good,
                snapshots,
                diverged_at: Some(step),
            });
        }

        let grads = tape.backward(total)?;
        let g: Vec<Option<Tensor<f32>>> = student_vars
            .iter()
            .chain(adapter_vars.iter())
            .map(|v| grads.get(*v).cloned())
            .collect();
        {
            let mut refs = model.params_mut_ordered();
            refs.extend(adapters.iter_mut());
            adam.step(&mut refs, &g)?;
        }
        apply_stat_updates(&mut model, &stat_updates);

        if step % cfg.snapshot_every == 0 || step + 1 == cfg.steps {
            snapshots.push(Snapshot { step, terms });
            last_good = model.clone();
        }
    }
    Ok(TrainOutcome {
        model,
        snapshots,
        diverged_at: None,
    })
}

/// Convenience: the error raised when a run diverged, for CLI reporting.
pub fn divergence_error(step: usize) -> Error {
    Error::Train {
        detail: format!("loss became non-finite at step {step}; last-good checkpoint retained"),
    }
}
