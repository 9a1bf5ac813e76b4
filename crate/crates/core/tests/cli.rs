use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mrsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrsynth")).args(args).output().unwrap()
}

fn hash_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout)
        .split_whitespace()
        .find_map(|w| w.strip_prefix("content_hash=").map(str::to_string))
        .expect("summary line carries a content hash")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn mrs_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let res = mrsynth(&[
        "mrs",
        "--pairs",
        "10",
        "--points",
        "256",
        "--rate",
        "0.25",
        "--seed",
        "7",
        "--out",
        path(&out),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let bundle = mrsynth::datasets::read_bundle(&out).unwrap();
    assert_eq!(bundle.len(), 10);
    assert_eq!(bundle.manifest.seed, 7);
    assert!(out.join("run_config.json").exists());
    assert_eq!(hash_of(&res), bundle.manifest.content_hash);
}

#[test]
fn same_command_twice_prints_same_hash() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        mrsynth(&[
            "mrs",
            "--pairs",
            "10",
            "--points",
            "128",
            "--snr",
            "20",
            "--seed",
            "7",
            "--out",
            path(&out),
        ])
    };
    assert_eq!(hash_of(&run("a")), hash_of(&run("b")));
    let other = mrsynth(&[
        "mrs",
        "--pairs",
        "10",
        "--points",
        "128",
        "--snr",
        "20",
        "--seed",
        "8",
        "--out",
        path(&dir.path().join("c")),
    ]);
    assert_ne!(hash_of(&run("a")), hash_of(&other));
}

#[test]
fn unknown_flag_is_usage_error_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let res = mrsynth(&["mrs", "--pairs", "10", "--bogus", "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!res.stderr.is_empty());
    assert!(res.stdout.is_empty());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn domain_error_exits_1_with_error_name_and_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let res = mrsynth(&["mrs", "--pairs", "4", "--rate", "1.5", "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("invalid-argument"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);

    let res = mrsynth(&["qsm-forward", "--nx", "15", "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("invalid-size"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(mrsynth(&["--help"]).status.code(), Some(0));
    assert_eq!(mrsynth(&["--version"]).status.code(), Some(0));
    assert_eq!(mrsynth(&["dataset", "--help"]).status.code(), Some(0));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"command": "mrs", "seed": 11, "params": {"n_pairs": 3, "n_points": 64, "rate": 0.5}}"#,
    )
    .unwrap();
    let out = dir.path().join("d");
    let res = mrsynth(&["mrs", "--config", path(&cfg), "--pairs", "5", "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let bundle = mrsynth::datasets::read_bundle(&out).unwrap();
    assert_eq!(bundle.len(), 5);
    assert_eq!(bundle.manifest.seed, 11);
    assert_eq!(bundle.samples[0].input("fid").unwrap().shape, vec![64]);

    let run: serde_json::Value = serde_json::from_slice(&fs::read(out.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "mrs");
    assert_eq!(run["seed"], 11);
    assert_eq!(run["params"]["n_pairs"], 5);
    assert_eq!(run["params"]["rate"], 0.5);

    let replay = dir.path().join("replay.json");
    fs::write(&replay, serde_json::to_vec(&run).unwrap()).unwrap();
    let res2 = mrsynth(&["mrs", "--config", path(&replay), "--out", path(&dir.path().join("e"))]);
    assert_eq!(hash_of(&res2), hash_of(&res));
}

#[test]
fn malformed_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"params": {"n_pairs": 3, "colour": 1}}"#).unwrap();
    let res = mrsynth(&["mrs", "--config", path(&cfg), "--out", path(&dir.path().join("d"))]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn rerun_replaces_previous_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    assert_eq!(
        mrsynth(&["mrs", "--pairs", "8", "--points", "64", "--out", path(&out)])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        mrsynth(&["mrs", "--pairs", "2", "--points", "64", "--out", path(&out)])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(mrsynth::datasets::read_bundle(&out).unwrap().len(), 2);
    assert!(!out.join("s000005.fid.raw").exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn mapping_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let res = mrsynth(&[
        "dataset",
        "--phantoms",
        "2",
        "--width",
        "20",
        "--height",
        "20",
        "--shapes",
        "15",
        "--no-b1",
        "--seed",
        "3",
        "--out",
        path(&data),
    ]);
    assert_eq!(res.status.code(), Some(0));
    let bundle = mrsynth::datasets::read_bundle(&data).unwrap();
    assert_eq!(bundle.samples[0].input("echoes").unwrap().shape, vec![4, 20, 20]);
    assert!(bundle.samples[0].input("b1").is_none());

    let matched = dir.path().join("matched");
    let res = mrsynth(&[
        "dict-match",
        "--input",
        path(&data),
        "--t1-grid",
        "100:100:2500",
        "--t2-grid",
        "10:10:700",
        "--out",
        path(&matched),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let m = mrsynth::datasets::read_bundle(&matched).unwrap();
    let truth = bundle.samples[0].label("t2").unwrap().to_f64();
    let est = m.samples[0].label("t2").unwrap().to_f64();
    for (t, e) in truth.iter().zip(&est) {
        if *t > 0.0 {
            assert!((t - e).abs() <= 10.0, "t2 {t} matched as {e}");
        }
    }

    let model = dir.path().join("model");
    let res = mrsynth(&[
        "train",
        "--input",
        path(&data),
        "--hidden",
        "6",
        "--epochs",
        "2",
        "--out",
        path(&model),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let net = mrsynth::quantify::read_model(&model).unwrap();
    assert_eq!(net.layer_sizes, vec![4, 6, 1]);
    let trace: Vec<f64> = serde_json::from_slice(&fs::read(model.join("loss_trace.json")).unwrap()).unwrap();
    assert_eq!(trace.len(), 2);
}

#[test]
fn simulate_and_qsm_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let res = mrsynth(&[
        "simulate",
        "--width",
        "8",
        "--height",
        "6",
        "--te",
        "40",
        "--tr",
        "600",
        "--repetitions",
        "2",
        "--out",
        path(&sim),
    ]);
    assert_eq!(res.status.code(), Some(0));
    let b = mrsynth::datasets::read_bundle(&sim).unwrap();
    assert_eq!(b.samples[0].input("signal").unwrap().shape, vec![2, 6, 8]);

    let ks = dir.path().join("ks");
    let res = mrsynth(&[
        "simulate",
        "--width",
        "8",
        "--height",
        "6",
        "--kspace",
        "--out",
        path(&ks),
    ]);
    assert_eq!(res.status.code(), Some(0));
    let b = mrsynth::datasets::read_bundle(&ks).unwrap();
    assert_eq!(b.samples[0].input("signal").unwrap().shape, vec![1]);

    let qsm = dir.path().join("qsm");
    let res = mrsynth(&[
        "qsm-forward",
        "--nx",
        "8",
        "--ny",
        "8",
        "--nz",
        "4",
        "--out",
        path(&qsm),
    ]);
    assert_eq!(res.status.code(), Some(0));
    let b = mrsynth::datasets::read_bundle(&qsm).unwrap();
    assert_eq!(b.samples[0].label("field_ppm").unwrap().shape, vec![4, 8, 8]);
}

#[test]
fn sequence_file_drives_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let seq = mrsynth::sequences::build_multi_echo(&[10.0, 30.0], 200.0).unwrap();
    let seq_path = dir.path().join("seq.json");
    fs::write(&seq_path, mrsynth::sequences::serialize_sequence(&seq)).unwrap();
    let out = dir.path().join("o");
    let res = mrsynth(&[
        "simulate",
        "--width",
        "4",
        "--height",
        "4",
        "--sequence",
        path(&seq_path),
        "--out",
        path(&out),
    ]);
    assert_eq!(res.status.code(), Some(0));
    let b = mrsynth::datasets::read_bundle(&out).unwrap();
    assert_eq!(b.samples[0].input("signal").unwrap().shape, vec![2, 4, 4]);

    fs::write(
        &seq_path,
        "{\"name\": \"x\",\n \"n_repetitions\": 1, \"events\": [{\"type\": \"Warp\"}]}",
    )
    .unwrap();
    let res = mrsynth(&[
        "simulate",
        "--sequence",
        path(&seq_path),
        "--out",
        path(&dir.path().join("p")),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("syntax-error"));
}
