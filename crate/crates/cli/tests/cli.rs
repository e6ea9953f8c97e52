//! Black-box tests of the `lwtf` binary: formats, diagnostics, exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lwtf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lwtf"))
}

fn run(args: &[&str]) -> Output {
    lwtf().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Fixture {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        let root = dir.path().to_path_buf();
        Fixture { dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

fn make_data(fx: &Fixture) {
    let out = run(&[
        "gen-data",
        "--out",
        &fx.arg("data"),
        "--seed",
        "7",
        "--identities",
        "8",
        "--clips",
        "4",
        "--clip-len",
        "24",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn count_pins_published_numbers() {
    let out = run(&["count", "--spec", "wav2lip_full", "--mult", "1.0"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("params: 36298035"), "{text}");
    assert!(text.contains("macs: 6202417152"), "{text}");

    let out = run(&[
        "count",
        "--spec",
        "wav2lip_full",
        "--mult",
        "0.25",
        "--no-residual",
    ]);
    let text = stdout(&out);
    let ratio_line = |key: &str| -> f64 {
        text.lines()
            .find(|l| l.starts_with(key))
            .unwrap_or_else(|| panic!("missing '{key}' in: {text}"))
            .split(':')
            .nth(1)
            .unwrap()
            .trim()
            .trim_end_matches('x')
            .parse()
            .unwrap()
    };
    assert!(ratio_line("params_ratio_vs_base") >= 28.0);
    assert!(ratio_line("macs_ratio_vs_base") >= 28.0);
}

#[test]
fn every_command_prints_a_provenance_header() {
    let out = run(&["count", "--spec", "wav2lip_toy"]);
    let first = stdout(&out).lines().next().unwrap_or_default().to_string();
    assert!(
        first.starts_with("# lwtf ") && first.contains("cmd=count") && first.contains("config="),
        "{first}"
    );
}

#[test]
fn missing_required_flags_are_listed_together_with_exit_1() {
    let out = run(&["gen-data"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("--out"), "{err}");
    assert!(err.contains("--seed"), "{err}");
}

#[test]
fn unknown_spec_is_a_validation_error() {
    let out = run(&["count", "--spec", "nonexistent_spec"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("wav2lip_full"));
}

#[test]
fn checkpoint_roundtrip_reproduces_forward_bitwise() {
    let fx = Fixture::new();
    let out = run(&[
        "build",
        "--spec",
        "wav2lip_toy",
        "--mult",
        "0.5",
        "--seed",
        "9",
        "--out",
        &fx.arg("m.ckpt"),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    // The file must reproduce the forward pass of the in-process model
    // bit-for-bit.
    let spec = lwtf_core::graph::wav2lip_toy().with_multiplier(0.5);
    let original = lwtf_core::graph::build_model::<f32>(&spec, 9).unwrap();
    let loaded = lwtf_cli::checkpoint::load(&fx.path("m.ckpt"), None)
        .unwrap_or_else(|e| panic!("load failed: {e:#}"))
        .expect_generator()
        .unwrap()
        .0;
    let mut r = lwtf_core::rng::seeded(3);
    let speech = lwtf_core::rng::uniform::<f32>(&mut r, -1.0, 1.0, [2, 1, 16, 5]);
    let faces = lwtf_core::rng::uniform::<f32>(&mut r, 0.0, 1.0, [2, 6, 32, 32]);
    let a = original.forward(&speech, &faces).unwrap().output;
    let b = loaded.forward(&speech, &faces).unwrap().output;
    assert!(a.bit_eq(&b));
}

#[test]
fn corrupted_checkpoint_fails_with_crc_diagnostics() {
    let fx = Fixture::new();
    let out = run(&[
        "build",
        "--spec",
        "wav2lip_toy",
        "--mult",
        "0.25",
        "--no-residual",
        "--seed",
        "4",
        "--out",
        &fx.arg("m.ckpt"),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let path = fx.path("m.ckpt");
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xFF;
    std::fs::write(&path, bytes).unwrap();

    let out = run(&[
        "bench",
        "--model",
        &fx.arg("m.ckpt"),
        "--iters",
        "30",
        "--warmup",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("checksum mismatch"), "{err}");
    assert!(err.contains("offset"), "{err}");
}

#[test]
fn bench_rejects_too_few_iterations() {
    let fx = Fixture::new();
    run(&[
        "build",
        "--spec",
        "wav2lip_toy",
        "--mult",
        "0.25",
        "--no-residual",
        "--seed",
        "4",
        "--out",
        &fx.arg("m.ckpt"),
    ]);
    let out = run(&["bench", "--model", &fx.arg("m.ckpt"), "--iters", "10"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("at least 30"));
}

#[test]
fn sweep_on_untrained_model_completes_with_full_curve() {
    let fx = Fixture::new();
    make_data(&fx);
    let out = run(&[
        "build",
        "--spec",
        "wav2lip_toy",
        "--mult",
        "0.25",
        "--no-residual",
        "--seed",
        "21",
        "--out",
        &fx.arg("m.ckpt"),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(&[
        "calibrate",
        "--data",
        &fx.arg("data"),
        "--model",
        &fx.arg("m.ckpt"),
        "--out",
        &fx.arg("calib.json"),
        "--frames",
        "64",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(&[
        "sweep",
        "--data",
        &fx.arg("data"),
        "--model",
        &fx.arg("m.ckpt"),
        "--calib",
        &fx.arg("calib.json"),
        "--assignment-axis",
        "suffix_fp16",
        "--frames",
        "32",
        "--out",
        &fx.arg("curve.csv"),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(fx.path("curve.csv")).unwrap();
    // num_layers + 1 points plus the header.
    let layers = lwtf_core::graph::wav2lip_toy()
        .with_multiplier(0.25)
        .with_residuals(false)
        .resolve()
        .unwrap()
        .layers
        .len();
    assert_eq!(csv.lines().count(), layers + 2, "{csv}");
}

#[test]
fn dataset_roundtrips_byte_identically() {
    let fx = Fixture::new();
    make_data(&fx);
    // Regenerating with the same seed writes the same blobs.
    let out = run(&[
        "gen-data",
        "--out",
        &fx.arg("data2"),
        "--seed",
        "7",
        "--identities",
        "8",
        "--clips",
        "4",
        "--clip-len",
        "24",
    ]);
    assert!(out.status.success());
    let a = std::fs::read(fx.path("data/clips/clip_00000.bin")).unwrap();
    let b = std::fs::read(fx.path("data2/clips/clip_00000.bin")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn report_row_count_matches_eval_records() {
    let fx = Fixture::new();
    let log = fx.path("runs.jsonl");
    let rec = |id: &str| {
        format!(
            "{{\"record\":\"eval\",\"report\":{{\"model_id\":\"{id}\",\"precision\":\"fp32\",\"seed\":1,\"dataset_id\":\"d\",\"proxy_fid\":1.0,\"ssim\":0.5,\"psnr_db\":20.0,\"sync_dist\":1.0,\"sync_conf\":0.1,\"macs\":10,\"params\":20,\"latency\":null}}}}"
        )
    };
    let lines = [
        rec("a"),
        "{\"record\":\"train\",\"phase\":\"teacher\",\"seed\":1,\"step\":0,\"terms\":{}}".into(),
        rec("b"),
        rec("c"),
    ];
    std::fs::write(&log, lines.join("\n") + "\n").unwrap();
    let out = run(&[
        "report",
        "--runlog",
        &fx.arg("runs.jsonl"),
        "--out",
        &fx.arg("report.csv"),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(fx.path("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4); // header + 3 eval rows
    assert!(csv.starts_with("model_id,precision,proxy_fid,ssim,psnr,sync_dist,sync_conf,macs,params"));
}

#[test]
fn wrong_spec_shape_on_load_names_the_layer() {
    let fx = Fixture::new();
    let out = run(&[
        "build",
        "--spec",
        "wav2lip_toy",
        "--mult",
        "0.25",
        "--seed",
        "4",
        "--out",
        &fx.arg("quarter.ckpt"),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    // Loading the x0.25 weights into an x1.0 target spec must fail with a
    // shape error that names the offending layer.
    let full = lwtf_core::graph::wav2lip_toy();
    let Err(err) = lwtf_cli::checkpoint::load(&fx.path("quarter.ckpt"), Some(&full)) else {
        panic!("expected a shape-mismatch error");
    };
    let msg = format!("{err:#}");
    assert!(msg.contains("shape"), "{msg}");
    assert!(msg.contains("s1c1"), "{msg}");
}

#[test]
fn future_version_checkpoints_are_rejected_explicitly() {
    let fx = Fixture::new();
    let out = run(&[
        "build",
        "--spec",
        "wav2lip_toy",
        "--mult",
        "0.25",
        "--no-residual",
        "--seed",
        "4",
        "--out",
        &fx.arg("m.ckpt"),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let path = fx.path("m.ckpt");
    let mut bytes = std::fs::read(&path).unwrap();
    // Bump the version field and re-seal the CRC so only the version trips.
    bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
    let body_len = bytes.len() - 4;
    let crc = lwtf_cli::crc32::crc32(&bytes[..body_len]);
    bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
    std::fs::write(&path, bytes).unwrap();

    let Err(err) = lwtf_cli::checkpoint::load(&path, None) else {
        panic!("expected a version error");
    };
    let msg = format!("{err:#}");
    assert!(msg.contains("version 99"), "{msg}");
}
