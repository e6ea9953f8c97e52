//! Implementations of the CLI subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde_json::json;

use lwtf_core::distill::{
    train_student, train_teacher, StudentTrainCfg, TeacherTrainCfg, TrainOutcome,
};
use lwtf_core::graph::{
    build_model, canonical, canonical_names, count_macs, count_params, parse_spec, BuiltModel,
    GeneratorSpec, SyncExpert,
};
use lwtf_core::metrics::{
    sync_proxy_from_embeddings, LatencySummary, MetricsReport, SYNC_WINDOW_RADIUS,
};
use lwtf_core::quant::{
    build_quantized_model, calibrate, select_mixed_precision, sensitivity_sweep, BudgetRule,
    CalibMethod, Calibration, Precision, PrecisionAssignment, QuantizedModel, SweepAxis,
};
use lwtf_core::rng;
use lwtf_core::synth::{
    batch_from_items, clip_embeddings, expert_pair_accuracy, generate_dataset, make_unsynced_pairs,
    mask_lower_half, GenParams, Item, Split, SynthDataset, WINDOW,
};
use lwtf_core::tensor::{self, Tensor};

use crate::checkpoint::{self, Checkpoint, Payload, QuantSection};
use crate::config::{parse_train_config, TrainConfigFile};
use crate::crc32::crc32;
use crate::dataset_io::{calib_items, eval_items, load_dataset, save_dataset};
use crate::fmtnum::{sig6, sig6_opt};
use crate::{bench, runlog, validation, runtime, Cmd, CmdError, CmdResult, SpecArgs, TOOL_VERSION};

/// Fixed internal streams for deterministic reference-frame picking.
const CALIB_REF_SEED: u64 = 0xCA11B;
const EVAL_REF_SEED: u64 = 0xE7A1;

fn provenance(cmd: &str, seed: Option<u64>, digest_src: &str) {
    let seed = seed.map_or_else(|| "-".into(), |s| s.to_string());
    println!(
        "# lwtf {TOOL_VERSION} | cmd={cmd} | seed={seed} | config={:08x}",
        crc32(digest_src.as_bytes())
    );
}

fn resolve_spec(args: &SpecArgs) -> Result<GeneratorSpec, CmdError> {
    let base = match canonical(&args.spec) {
        Some(res) => res.map_err(validation)?,
        None => {
            let text = std::fs::read_to_string(&args.spec)
                .with_context(|| {
                    format!(
                        "--spec '{}' is neither a canonical name ({}) nor a readable file",
                        args.spec,
                        canonical_names().join(", ")
                    )
                })
                .map_err(validation)?;
            parse_spec(&text).map_err(validation)?
        }
    };
    let spec = base
        .with_multiplier(args.mult)
        .with_residuals(!args.no_residual);
    spec.resolve().map_err(validation)?;
    Ok(spec)
}

fn read_dataset(path: &Path) -> Result<SynthDataset, CmdError> {
    load_dataset(path).map_err(validation)
}

fn load_generator(
    path: &Path,
    expected: Option<&GeneratorSpec>,
) -> Result<(BuiltModel<f32>, Option<QuantSection>, String), CmdError> {
    let ckpt = checkpoint::load(path, expected).map_err(validation)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let (model, quant) = ckpt.expect_generator().map_err(validation)?;
    Ok((model, quant, id))
}

fn load_expert(path: &Path) -> Result<SyncExpert<f32>, CmdError> {
    checkpoint::load(path, None)
        .and_then(Checkpoint::expect_expert)
        .map_err(validation)
}

/// A checkpoint ready to run: plain or mixed precision.
enum Runner {
    Plain(BuiltModel<f32>),
    Quant(Box<QuantizedModel>),
}

impl Runner {
    fn from_parts(model: BuiltModel<f32>, quant: Option<QuantSection>) -> Result<Self, CmdError> {
        match quant {
            None => Ok(Runner::Plain(model)),
            Some(q) => {
                let qm = build_quantized_model(&model, &q.assignment, &q.act_qparams)
                    .map_err(validation)?;
                Ok(Runner::Quant(Box::new(qm)))
            }
        }
    }

    fn forward(&self, speech: &Tensor<f32>, faces: &Tensor<f32>) -> anyhow::Result<Tensor<f32>> {
        let out = match self {
            Runner::Plain(m) => m.forward(speech, faces).map_err(|e| anyhow!("{e}"))?,
            Runner::Quant(q) => q.forward(speech, faces).map_err(|e| anyhow!("{e}"))?,
        };
        Ok(out.output)
    }

    fn model(&self) -> &BuiltModel<f32> {
        match self {
            Runner::Plain(m) => m,
            Runner::Quant(q) => &q.base,
        }
    }

    fn precision(&self) -> String {
        match self {
            Runner::Plain(_) => "fp32".into(),
            Runner::Quant(q) => q.assignment.name.clone(),
        }
    }
}

/// Assemble (speech, faces, targets) tensors for a deterministic item list.
fn tensors_for_items(
    ds: &SynthDataset,
    items: &[Item],
    ref_seed: u64,
) -> anyhow::Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
    let mut r = rng::substream(ref_seed, "reference-picker");
    let batch = batch_from_items(ds, items, &mut r).map_err(|e| anyhow!("{e}"))?;
    let faces = batch.faces().map_err(|e| anyhow!("{e}"))?;
    Ok((batch.speech, faces, batch.target))
}

fn forward_in_chunks(
    runner: &Runner,
    speech: &Tensor<f32>,
    faces: &Tensor<f32>,
) -> anyhow::Result<Tensor<f32>> {
    let n = speech.shape()[0];
    let mut out = Vec::new();
    let mut shape = Vec::new();
    let mut i = 0;
    while i < n {
        let take = (n - i).min(32);
        let sp = tensor::slice(speech, 0, i, take).map_err(|e| anyhow!("{e}"))?;
        let fc = tensor::slice(faces, 0, i, take).map_err(|e| anyhow!("{e}"))?;
        let y = runner.forward(&sp, &fc)?;
        shape = y.shape().to_vec();
        out.extend_from_slice(y.data());
        i += take;
    }
    shape[0] = n;
    Tensor::new(shape, out).map_err(|e| anyhow!("{e}"))
}

pub fn dispatch(cmd: Cmd, threads: usize) -> CmdResult {
    match cmd {
        Cmd::Build { spec, seed, out } => build_cmd(spec, seed, out),
        Cmd::Count { spec } => count_cmd(spec),
        Cmd::GenData {
            out,
            seed,
            identities,
            clips,
            clip_len,
        } => gen_data_cmd(out, seed, identities, clips, clip_len),
        Cmd::TrainExpert {
            data,
            out,
            seed,
            steps,
        } => train_expert_cmd(data, out, seed, steps),
        Cmd::TrainTeacher {
            data,
            spec,
            expert,
            out,
            seed,
            steps,
            batch_size,
            config,
            runlog,
        } => train_teacher_cmd(data, spec, expert, out, seed, steps, batch_size, config, runlog),
        Cmd::Distill {
            data,
            spec,
            teacher,
            expert,
            out,
            seed,
            steps,
            batch_size,
            no_kd,
            sync_schedule,
            switch_fraction,
            config,
            runlog,
        } => distill_cmd(DistillArgs {
            data,
            spec,
            teacher,
            expert,
            out,
            seed,
            steps,
            batch_size,
            no_kd,
            sync_schedule,
            switch_fraction,
            config,
            runlog,
        }),
        Cmd::Calibrate {
            data,
            model,
            out,
            method,
            frames,
        } => calibrate_cmd(data, model, out, method, frames),
        Cmd::Quantize {
            model,
            calib,
            assignment,
            out,
            out_assignment,
        } => quantize_cmd(model, calib, assignment, out, out_assignment),
        Cmd::Sweep {
            data,
            model,
            calib,
            assignment_axis,
            frames,
            out,
            runlog,
        } => sweep_cmd(data, model, calib, assignment_axis, frames, out, runlog),
        Cmd::Eval {
            data,
            model,
            expert,
            frames,
            id,
            runlog,
        } => eval_cmd(data, model, expert, frames, id, runlog),
        Cmd::Bench {
            model,
            baseline,
            iters,
            warmup,
            batch,
            runlog,
        } => bench_cmd(model, baseline, iters, warmup, batch, threads, runlog),
        Cmd::Report { runlog, out } => report_cmd(runlog, out),
    }
}

fn build_cmd(spec_args: SpecArgs, seed: u64, out: PathBuf) -> CmdResult {
    provenance(
        "build",
        Some(seed),
        &format!("{:?}{}{}", spec_args.spec, spec_args.mult, spec_args.no_residual),
    );
    let spec = resolve_spec(&spec_args)?;
    let model = build_model::<f32>(&spec, seed).map_err(validation)?;
    let rm = &model.resolved;
    println!(
        "built {} x{} residuals={} | layers {} | params {} | macs {}",
        spec.name,
        spec.channel_multiplier,
        if spec.residuals_enabled { "on" } else { "off" },
        rm.layers.len(),
        count_params(rm),
        count_macs(rm)
    );
    let mut meta = BTreeMap::new();
    meta.insert("seed".into(), seed.to_string());
    checkpoint::save(&Checkpoint::generator(model, meta), &out).map_err(runtime)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn count_cmd(spec_args: SpecArgs) -> CmdResult {
    provenance(
        "count",
        None,
        &format!("{:?}{}{}", spec_args.spec, spec_args.mult, spec_args.no_residual),
    );
    let spec = resolve_spec(&spec_args)?;
    let rm = spec.resolve().map_err(validation)?;
    let params = count_params(&rm);
    let macs = count_macs(&rm);
    println!("spec: {} x{} residuals={}", spec.name, spec.channel_multiplier, spec.residuals_enabled);
    println!("params: {params} ({})", sig6(params as f64));
    println!("macs: {macs} ({})", sig6(macs as f64));
    if spec.channel_multiplier != 1.0 || !spec.residuals_enabled {
        let base = spec
            .clone()
            .with_multiplier(1.0)
            .with_residuals(true)
            .resolve()
            .map_err(validation)?;
        let pr = count_params(&base) as f64 / params as f64;
        let mr = count_macs(&base) as f64 / macs as f64;
        println!("params_ratio_vs_base: {}x", sig6(pr));
        println!("macs_ratio_vs_base: {}x", sig6(mr));
    }
    Ok(())
}

fn gen_data_cmd(out: PathBuf, seed: u64, identities: usize, clips: usize, clip_len: usize) -> CmdResult {
    provenance(
        "gen-data",
        Some(seed),
        &format!("{identities}/{clips}/{clip_len}"),
    );
    let ds = generate_dataset(GenParams {
        seed,
        n_identities: identities,
        clips_per_identity: clips,
        clip_len,
    })
    .map_err(validation)?;
    save_dataset(&ds, &out).map_err(runtime)?;
    println!(
        "wrote {} clips ({} identities; splits train={} val={} test={} calib={}) to {}",
        ds.clips.len(),
        identities,
        ds.splits.train.len(),
        ds.splits.val.len(),
        ds.splits.test.len(),
        ds.splits.calib.len(),
        out.display()
    );
    Ok(())
}

fn train_expert_cmd(data: PathBuf, out: PathBuf, seed: u64, steps: usize) -> CmdResult {
    provenance("train-expert", Some(seed), &format!("{steps}"));
    let ds = read_dataset(&data)?;
    let expert = lwtf_core::synth::train_sync_expert(&ds, steps, seed)
        .map_err(|e| runtime(anyhow!("{e}")))?;
    let mut r = rng::substream(seed, "expert-eval");
    let pairs = make_unsynced_pairs(&ds, Split::Val, 3, 128, &mut r).map_err(|e| runtime(anyhow!("{e}")))?;
    let acc = expert_pair_accuracy(&expert, &pairs).map_err(|e| runtime(anyhow!("{e}")))?;
    println!("held-out pair accuracy: {}", sig6(acc));
    let mut meta = BTreeMap::new();
    meta.insert("seed".into(), seed.to_string());
    meta.insert("steps".into(), steps.to_string());
    let ckpt = Checkpoint {
        payload: Payload::SyncExpert(Box::new(expert)),
        meta,
        quant: None,
    };
    checkpoint::save(&ckpt, &out).map_err(runtime)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn read_config(path: &Option<PathBuf>) -> Result<TrainConfigFile, CmdError> {
    match path {
        None => Ok(TrainConfigFile::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))
                .map_err(validation)?;
            parse_train_config(&text).map_err(validation)
        }
    }
}

fn log_snapshots(
    runlog_path: &Option<PathBuf>,
    phase: &str,
    seed: u64,
    outcome: &TrainOutcome,
) -> CmdResult {
    if let Some(path) = runlog_path {
        for snap in &outcome.snapshots {
            let terms: serde_json::Map<String, serde_json::Value> = snap
                .terms
                .iter()
                .map(|(k, v)| (k.clone(), json!(v)))
                .collect();
            runlog::append(
                path,
                &json!({
                    "record": "train",
                    "phase": phase,
                    "seed": seed,
                    "step": snap.step,
                    "terms": terms,
                }),
            )
            .map_err(runtime)?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_teacher_cmd(
    data: PathBuf,
    spec_args: SpecArgs,
    expert_path: PathBuf,
    out: PathBuf,
    seed: u64,
    steps: Option<usize>,
    batch_size: Option<usize>,
    config: Option<PathBuf>,
    runlog_path: Option<PathBuf>,
) -> CmdResult {
    let file_cfg = read_config(&config)?;
    let mut cfg = TeacherTrainCfg::new(seed);
    if let Some(s) = file_cfg.steps {
        cfg.steps = s;
    }
    if let Some(b) = file_cfg.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = file_cfg.lr {
        cfg.lr = lr;
    }
    if let Some(se) = file_cfg.snapshot_every {
        cfg.snapshot_every = se;
    }
    file_cfg.teacher.apply(&mut cfg.objective);
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(b) = batch_size {
        cfg.batch_size = b;
    }
    provenance(
        "train-teacher",
        Some(seed),
        &format!("{:?}|{}|{}|{:?}", spec_args.spec, cfg.steps, cfg.batch_size, cfg.objective),
    );
    let spec = resolve_spec(&spec_args)?;
    let ds = read_dataset(&data)?;
    let expert = load_expert(&expert_path)?;

    let outcome = train_teacher(&spec, &ds, &expert, &cfg).map_err(|e| runtime(anyhow!("{e}")))?;
    log_snapshots(&runlog_path, "teacher", seed, &outcome)?;
    let mut meta = BTreeMap::new();
    meta.insert("seed".into(), seed.to_string());
    meta.insert("steps".into(), cfg.steps.to_string());
    checkpoint::save(&Checkpoint::generator(outcome.model, meta), &out).map_err(runtime)?;
    if let Some(step) = outcome.diverged_at {
        return Err(runtime(anyhow!(
            "training diverged at step {step}; last-good checkpoint written to {}",
            out.display()
        )));
    }
    if let Some(last) = outcome.snapshots.last() {
        let terms: Vec<String> = last
            .terms
            .iter()
            .map(|(k, v)| format!("{k}={}", sig6(*v)))
            .collect();
        println!("final step {}: {}", last.step, terms.join(" "));
    }
    println!("wrote {}", out.display());
    Ok(())
}

struct DistillArgs {
    data: PathBuf,
    spec: SpecArgs,
    teacher: PathBuf,
    expert: PathBuf,
    out: PathBuf,
    seed: u64,
    steps: Option<usize>,
    batch_size: Option<usize>,
    no_kd: bool,
    sync_schedule: Option<String>,
    switch_fraction: Option<f64>,
    config: Option<PathBuf>,
    runlog: Option<PathBuf>,
}

fn distill_cmd(args: DistillArgs) -> CmdResult {
    let file_cfg = read_config(&args.config)?;
    let mut cfg = StudentTrainCfg::new(args.seed);
    if let Some(s) = file_cfg.steps {
        cfg.steps = s;
    }
    if let Some(b) = file_cfg.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = file_cfg.lr {
        cfg.lr = lr;
    }
    if let Some(se) = file_cfg.snapshot_every {
        cfg.snapshot_every = se;
    }
    file_cfg.student.apply(&mut cfg.objective).map_err(validation)?;
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if args.no_kd {
        cfg.objective.use_kd = false;
    }
    let overrides = crate::config::StudentOverrides {
        sync_schedule: args.sync_schedule.clone(),
        switch_fraction: args.switch_fraction,
        ..Default::default()
    };
    overrides.apply(&mut cfg.objective).map_err(validation)?;

    provenance(
        "distill",
        Some(args.seed),
        &format!(
            "{:?}|{}|{}|{:?}",
            args.spec.spec, cfg.steps, cfg.batch_size, cfg.objective
        ),
    );
    let spec = resolve_spec(&args.spec)?;
    let ds = read_dataset(&args.data)?;
    let expert = load_expert(&args.expert)?;
    let (teacher, _, _) = load_generator(&args.teacher, None)?;

    let outcome = train_student(&teacher, &spec, &ds, &expert, &cfg)
        .map_err(|e| runtime(anyhow!("{e}")))?;
    log_snapshots(&args.runlog, "student", args.seed, &outcome)?;
    let mut meta = BTreeMap::new();
    meta.insert("seed".into(), args.seed.to_string());
    meta.insert("steps".into(), cfg.steps.to_string());
    meta.insert("use_kd".into(), cfg.objective.use_kd.to_string());
    checkpoint::save(&Checkpoint::generator(outcome.model, meta), &args.out).map_err(runtime)?;
    if let Some(step) = outcome.diverged_at {
        return Err(runtime(anyhow!(
            "training diverged at step {step}; last-good checkpoint written to {}",
            args.out.display()
        )));
    }
    if let Some(last) = outcome.snapshots.last() {
        let terms: Vec<String> = last
            .terms
            .iter()
            .map(|(k, v)| format!("{k}={}", sig6(*v)))
            .collect();
        println!("final step {}: {}", last.step, terms.join(" "));
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn parse_method(s: &str) -> Result<CalibMethod, CmdError> {
    if s == "minmax" {
        return Ok(CalibMethod::MinMax);
    }
    if let Some(p) = s.strip_prefix("percentile:") {
        let p: f64 = p
            .parse()
            .map_err(|_| validation(anyhow!("bad percentile in --method '{s}'")))?;
        return Ok(CalibMethod::Percentile(p));
    }
    Err(validation(anyhow!(
        "--method must be 'minmax' or 'percentile:<p>', got '{s}'"
    )))
}

fn calibrate_cmd(
    data: PathBuf,
    model_path: PathBuf,
    out: PathBuf,
    method: String,
    frames: usize,
) -> CmdResult {
    provenance("calibrate", None, &format!("{method}|{frames}"));
    let method = parse_method(&method)?;
    let ds = read_dataset(&data)?;
    let (model, _, _) = load_generator(&model_path, None)?;
    let items = calib_items(&ds, frames);
    if items.is_empty() {
        return Err(validation(anyhow!("calibration pool is empty")));
    }
    if items.len() < frames {
        println!(
            "note: calibration pool provides {} frames (requested {frames})",
            items.len()
        );
    }
    // Deterministic batches: fixed order, fixed reference picker.
    let chunks: Vec<&[Item]> = items.chunks(32).collect();
    let calib = calibrate(&model, method, |i| {
        let Some(chunk) = chunks.get(i) else {
            return Ok(None);
        };
        let mut r = rng::substream(CALIB_REF_SEED ^ i as u64, "reference-picker");
        let batch = batch_from_items(&ds, chunk, &mut r)?;
        let faces = batch.faces()?;
        Ok(Some((batch.speech, faces)))
    })
    .map_err(|e| runtime(anyhow!("{e}")))?;
    for w in &calib.warnings {
        println!("warning: {w}");
    }
    let json = serde_json::to_string(&calib).map_err(runtime)?;
    std::fs::write(&out, json).map_err(runtime)?;
    println!(
        "calibrated {} sites over {} frames; wrote {}",
        calib.sites.len(),
        calib.frames,
        out.display()
    );
    Ok(())
}

fn load_calibration(path: &Path) -> Result<Calibration, CmdError> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading calibration {}", path.display()))
        .map_err(validation)?;
    serde_json::from_str(&text).map_err(validation)
}

fn resolve_assignment(
    name: &str,
    model: &BuiltModel<f32>,
) -> Result<PrecisionAssignment, CmdError> {
    let rm = &model.resolved;
    Ok(match name {
        "student_mix" => PrecisionAssignment::student_mix(rm),
        "teacher_mix" => PrecisionAssignment::teacher_mix(rm),
        "all_int8" => PrecisionAssignment::uniform(rm, Precision::Int8, "all_int8"),
        "all_fp16" => PrecisionAssignment::uniform(rm, Precision::Fp16, "all_fp16"),
        "all_fp32" => PrecisionAssignment::uniform(rm, Precision::Fp32, "all_fp32"),
        path => {
            let text = std::fs::read_to_string(path)
                .with_context(|| {
                    format!("--assignment '{path}' is neither a preset nor a readable file")
                })
                .map_err(validation)?;
            let stem = Path::new(path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "custom".into());
            PrecisionAssignment::parse(&stem, &text).map_err(validation)?
        }
    })
}

fn quantize_cmd(
    model_path: PathBuf,
    calib_path: PathBuf,
    assignment: String,
    out: PathBuf,
    out_assignment: Option<PathBuf>,
) -> CmdResult {
    provenance("quantize", None, &assignment);
    let (model, _, _) = load_generator(&model_path, None)?;
    let calib = load_calibration(&calib_path)?;
    let assignment = resolve_assignment(&assignment, &model)?;
    // Validate the assignment and calibration up front.
    build_quantized_model(&model, &assignment, &calib.act_qparams).map_err(validation)?;

    if let Some(p) = &out_assignment {
        std::fs::write(p, assignment.to_text()).map_err(runtime)?;
        println!("wrote assignment map {}", p.display());
    }
    let mut meta = BTreeMap::new();
    meta.insert("seed".into(), model.seed.to_string());
    let ckpt = Checkpoint {
        payload: Payload::Generator(Box::new(model)),
        meta,
        quant: Some(QuantSection {
            assignment: assignment.clone(),
            act_qparams: calib.act_qparams.clone(),
            method: format!("{:?}", calib.method),
            calib_frames: calib.frames,
        }),
    };
    checkpoint::save(&ckpt, &out).map_err(runtime)?;
    println!(
        "wrote {} ({} fp16 / {} total layers in '{}')",
        out.display(),
        assignment.fp16_layer_count(),
        ckpt.quant.as_ref().unwrap().assignment.by_layer.len(),
        assignment.name
    );
    Ok(())
}

fn sweep_cmd(
    data: PathBuf,
    model_path: PathBuf,
    calib_path: PathBuf,
    axis: String,
    frames: usize,
    out: PathBuf,
    runlog_path: Option<PathBuf>,
) -> CmdResult {
    provenance("sweep", None, &format!("{axis}|{frames}"));
    let axis = SweepAxis::parse(&axis).map_err(validation)?;
    let ds = read_dataset(&data)?;
    let (model, _, _) = load_generator(&model_path, None)?;
    let calib = load_calibration(&calib_path)?;
    let items = eval_items(&ds, frames);
    if items.is_empty() {
        return Err(validation(anyhow!("evaluation set is empty")));
    }
    let (speech, faces, _) = tensors_for_items(&ds, &items, EVAL_REF_SEED).map_err(runtime)?;
    let curve = sensitivity_sweep(&model, &calib.act_qparams, &speech, &faces, axis)
        .map_err(|e| runtime(anyhow!("{e}")))?;

    let mut csv = String::from("boundary_index,fp16_layers,quality\n");
    for p in &curve {
        csv.push_str(&format!(
            "{},{},{}\n",
            p.boundary_index,
            p.fp16_layers,
            sig6(p.quality)
        ));
        if let Some(path) = &runlog_path {
            runlog::append(
                path,
                &json!({
                    "record": "sweep_point",
                    "axis": axis.token(),
                    "boundary_index": p.boundary_index,
                    "quality": p.quality,
                }),
            )
            .map_err(runtime)?;
        }
    }
    std::fs::write(&out, csv).map_err(runtime)?;
    let best = select_mixed_precision(&model, &curve, axis, BudgetRule::AllowAll)
        .map_err(|e| runtime(anyhow!("{e}")))?;
    println!(
        "sweep axis {} over {} layers: {} points; best-quality assignment: {} fp16 layers",
        axis.token(),
        model.resolved.layers.len(),
        curve.len(),
        best.fp16_layer_count()
    );
    println!("wrote {}", out.display());
    Ok(())
}

/// Compute the full metrics report for a runner on a dataset.
fn evaluate(
    runner: &Runner,
    expert: &SyncExpert<f32>,
    ds: &SynthDataset,
    frames: usize,
    model_id: &str,
    seed: u64,
) -> anyhow::Result<MetricsReport> {
    let items = eval_items(ds, frames);
    if items.len() < 2 {
        bail!("evaluation set has {} items; need at least 2", items.len());
    }
    let (speech, faces, targets) = tensors_for_items(ds, &items, EVAL_REF_SEED)?;
    let outputs = forward_in_chunks(runner, &speech, &faces)?;

    let proxy_fid = lwtf_core::metrics::proxy_fid(&targets, &outputs).map_err(|e| anyhow!("{e}"))?;
    let ssim = lwtf_core::metrics::ssim(&outputs, &targets).map_err(|e| anyhow!("{e}"))?;
    let psnr_db = lwtf_core::metrics::psnr(&outputs, &targets).map_err(|e| anyhow!("{e}"))?;

    // Sync proxies over whole test clips: generate every frame with the
    // clip's first frame as reference pose.
    let half = WINDOW / 2;
    let radius_cap = SYNC_WINDOW_RADIUS;
    let mut sync_dist = 0.0;
    let mut sync_conf = 0.0;
    let mut clip_count = 0usize;
    for ci in ds.clip_indices(Split::Test).into_iter().take(8) {
        let t_len = ds.clips[ci].frames.shape()[0];
        let ts: Vec<usize> = (half..t_len - half).collect();
        let mut speech_rows = Vec::new();
        let mut face_rows = Vec::new();
        let refs = ds.frame(ci, 0);
        for &t in &ts {
            speech_rows.extend_from_slice(ds.speech_window(ci, t).data());
            let target = ds.frame(ci, t);
            let masked = mask_lower_half(&target).map_err(|e| anyhow!("{e}"))?;
            face_rows.extend_from_slice(refs.data());
            face_rows.extend_from_slice(masked.data());
        }
        let b = ts.len();
        let s = lwtf_core::synth::FRAME_SIZE;
        let speech_t = Tensor::new([b, 1, lwtf_core::synth::SPEECH_BANDS, WINDOW], speech_rows)
            .map_err(|e| anyhow!("{e}"))?;
        let faces_t = Tensor::new([b, 6, s, s], face_rows).map_err(|e| anyhow!("{e}"))?;
        let gen = forward_in_chunks(runner, &speech_t, &faces_t)?;
        // Place generated frames into a full-length clip buffer.
        let mut clip_frames = ds.clips[ci].frames.clone();
        {
            let dst = clip_frames.make_mut();
            let fsz = 3 * s * s;
            for (bi, &t) in ts.iter().enumerate() {
                dst[t * fsz..(t + 1) * fsz].copy_from_slice(&gen.data()[bi * fsz..(bi + 1) * fsz]);
            }
        }
        let (es, ev) = clip_embeddings(expert, ds, ci, Some(&clip_frames))
            .map_err(|e| anyhow!("{e}"))?;
        let n_emb = es.shape()[0];
        let radius = radius_cap.min((n_emb.saturating_sub(1)) / 2);
        let (d, c) = sync_proxy_from_embeddings(&es, &ev, radius).map_err(|e| anyhow!("{e}"))?;
        sync_dist += d;
        sync_conf += c;
        clip_count += 1;
    }
    if clip_count == 0 {
        bail!("no test clips available for the sync proxies");
    }

    let rm = &runner.model().resolved;
    let report = MetricsReport {
        model_id: model_id.into(),
        precision: runner.precision(),
        seed,
        dataset_id: format!("synth-{}", ds.params.seed),
        proxy_fid,
        ssim,
        psnr_db,
        sync_dist: sync_dist / clip_count as f64,
        sync_conf: sync_conf / clip_count as f64,
        macs: count_macs(rm),
        params: count_params(rm),
        latency: None,
    };
    report.validate().map_err(|e| anyhow!("{e}"))?;
    Ok(report)
}

fn eval_cmd(
    data: PathBuf,
    model_path: PathBuf,
    expert_path: PathBuf,
    frames: usize,
    id: Option<String>,
    runlog_path: Option<PathBuf>,
) -> CmdResult {
    provenance("eval", None, &format!("{frames}"));
    let ds = read_dataset(&data)?;
    let (model, quant, file_id) = load_generator(&model_path, None)?;
    let seed = model.seed;
    let expert = load_expert(&expert_path)?;
    let runner = Runner::from_parts(model, quant)?;
    let model_id = id.unwrap_or(file_id);
    let report = evaluate(&runner, &expert, &ds, frames, &model_id, seed).map_err(runtime)?;
    println!(
        "model={} precision={} proxy_fid={} ssim={} psnr={} sync_dist={} sync_conf={} macs={} params={}",
        report.model_id,
        report.precision,
        sig6(report.proxy_fid),
        sig6(report.ssim),
        sig6_opt(report.psnr_db),
        sig6(report.sync_dist),
        sig6(report.sync_conf),
        report.macs,
        report.params
    );
    if let Some(path) = &runlog_path {
        runlog::append(path, &runlog::eval_record(&report)).map_err(runtime)?;
    }
    Ok(())
}

fn bench_one(
    path: &Path,
    iters: usize,
    warmup: usize,
    batch: usize,
    threads: usize,
) -> Result<bench::BenchResult, CmdError> {
    let (model, quant, id) = load_generator(path, None)?;
    let spec = &model.resolved.spec;
    let (rows, cols) = spec.speech_shape;
    let fs = spec.face_size;
    let mut r = rng::seeded(0xBE7C);
    let speech = lwtf_core::rng::uniform::<f32>(&mut r, -1.0, 1.0, [batch, 1, rows, cols]);
    let faces = lwtf_core::rng::uniform::<f32>(&mut r, 0.0, 1.0, [batch, 6, fs, fs]);
    let runner = Runner::from_parts(model, quant)?;
    let precision = runner.precision();
    let input_dims = vec![batch, 6, fs, fs];
    bench::bench(&id, &precision, &input_dims, iters, warmup, threads, || {
        runner.forward(&speech, &faces).map(|_| ())
    })
    .map_err(runtime)
}

fn bench_cmd(
    model: PathBuf,
    baseline: Option<PathBuf>,
    iters: usize,
    warmup: usize,
    batch: usize,
    threads: usize,
    runlog_path: Option<PathBuf>,
) -> CmdResult {
    provenance("bench", None, &format!("{iters}|{warmup}|{batch}|{threads}"));
    if iters < bench::MIN_ITERS {
        return Err(validation(anyhow!(
            "--iters must be at least {}",
            bench::MIN_ITERS
        )));
    }
    let main = bench_one(&model, iters, warmup, batch, threads)?;
    println!(
        "{} [{}] input {:?} threads {}: median {} ms (p10 {}, p90 {}) over {} iters",
        main.label,
        main.precision,
        main.input_dims,
        main.threads,
        sig6(main.median_ms),
        sig6(main.p10_ms),
        sig6(main.p90_ms),
        main.iters
    );
    if let Some(base_path) = &baseline {
        let base = bench_one(base_path, iters, warmup, batch, threads)?;
        println!(
            "{} [{}] baseline: median {} ms",
            base.label,
            base.precision,
            sig6(base.median_ms)
        );
        println!(
            "speedup vs {}: {}x",
            base.label,
            sig6(base.median_ms / main.median_ms)
        );
    }
    println!("note: {}", bench::HOST_NOTE);
    if let Some(path) = &runlog_path {
        runlog::append(
            path,
            &json!({"record": "bench", "result": &main}),
        )
        .map_err(runtime)?;
    }
    Ok(())
}

fn report_cmd(runlog_path: PathBuf, out: PathBuf) -> CmdResult {
    provenance("report", None, "report");
    let records = runlog::read_all(&runlog_path).map_err(validation)?;
    let rows = runlog::write_report_csv(&records, &out).map_err(runtime)?;
    println!("wrote {rows} evaluation rows to {}", out.display());
    Ok(())
}

/// Latency summary conversion for reports.
#[allow(dead_code)]
fn latency_summary(b: &bench::BenchResult) -> LatencySummary {
    LatencySummary {
        median_ms: b.median_ms,
        p10_ms: b.p10_ms,
        p90_ms: b.p90_ms,
        iters: b.iters,
        threads: b.threads,
    }
}
