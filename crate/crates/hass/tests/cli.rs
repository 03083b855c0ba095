//! Command-line behavior checked through the built binary.

use std::path::Path;
use std::process::{Command, Output};

use hass::params_file::encode_model;
use hass_core::{HeadKind, InputDims, Model, ModelConfig};

fn hass(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hass")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["synth", "--out", p(out)];
    args.extend_from_slice(extra);
    hass(&args)
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.heeg"), dir.path().join("b.heeg"));
    let flags = ["--channels", "6", "--timesteps", "64", "--count", "100", "--seed", "7"];
    let (ra, rb) = (synth(&a, &flags), synth(&b, &flags));
    assert_eq!(ra.status.code(), Some(0), "{}", stderr(&ra));
    assert_eq!(rb.status.code(), Some(0));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(stdout(&ra).contains("wrote 100 records"));
}

#[test]
fn synth_reports_histogram_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.heeg");
    let r = synth(&out, &["--balance", "1,0,0,0,0", "--count", "100"]);
    assert!(stdout(&r).contains("W:100"), "{}", stdout(&r));

    let bad = synth(&out, &["--channels", "0"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("channels"));
    assert_eq!(synth(&out, &["--balance", "0.5,0.5,0.5,0,0"]).status.code(), Some(1));
    assert_eq!(synth(&out, &["--channels", "x"]).status.code(), Some(1));
}

fn small_data(dir: &Path, name: &str, channels: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    let r = synth(
        &path,
        &[
            "--channels",
            channels,
            "--timesteps",
            "16",
            "--count",
            "30",
            "--seed",
            "2",
        ],
    );
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    path
}

#[test]
fn zero_learning_rate_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d.heeg", "3");
    let model = dir.path().join("m.prm");
    let r = hass(&[
        "train",
        "--data",
        p(&data),
        "--lr",
        "0",
        "--epochs",
        "3",
        "--seed",
        "5",
        "--out-model",
        p(&model),
    ]);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    let init = Model::init(&ModelConfig::new(
        InputDims::new(3, 16, 1).unwrap(),
        true,
        HeadKind::Linear,
        5,
    ))
    .unwrap();
    assert_eq!(std::fs::read(&model).unwrap(), encode_model(&init).unwrap());
}

#[test]
fn training_is_deterministic_and_memorizes() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d.heeg", "3");
    let model = dir.path().join("m.prm");
    let args = [
        "train",
        "--data",
        p(&data),
        "--epochs",
        "40",
        "--lr",
        "0.01",
        "--batch-size",
        "8",
        "--seed",
        "3",
        "--out-model",
        p(&model),
    ];
    let (a, b) = (hass(&args), hass(&args));
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("epoch  40  loss"));

    let report = dir.path().join("r.txt");
    let e = hass(&[
        "eval",
        "--data",
        p(&data),
        "--model",
        p(&model),
        "--emit-report",
        p(&report),
    ]);
    assert_eq!(e.status.code(), Some(0), "{}", stderr(&e));
    let text = std::fs::read_to_string(&report).unwrap();
    let metrics = hass_core::MetricsReport::from_key_values(&text, "eval").unwrap();
    assert_eq!(metrics.accuracy, 1.0, "{}", stdout(&e));
    assert!(metrics.columns().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(stdout(&e).contains("linear   Yes   1.000  1.000"), "{}", stdout(&e));
}

#[test]
fn eval_names_both_shapes_on_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let six = small_data(dir.path(), "six.heeg", "6");
    let twenty = small_data(dir.path(), "twenty.heeg", "20");
    let model = dir.path().join("m.prm");
    let t = hass(&[
        "train",
        "--data",
        p(&six),
        "--epochs",
        "1",
        "--hass",
        "no",
        "--out-model",
        p(&model),
    ]);
    assert_eq!(t.status.code(), Some(0), "{}", stderr(&t));
    let e = hass(&["eval", "--data", p(&twenty), "--model", p(&model)]);
    assert_eq!(e.status.code(), Some(1));
    let msg = stderr(&e);
    assert!(msg.contains("[20, 16, 1]") && msg.contains("[6, 16, 1]"), "{msg}");
}

#[test]
fn unreadable_and_corrupt_files_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.heeg");
    let model = dir.path().join("m.prm");
    let r = hass(&["train", "--data", p(&missing), "--out-model", p(&model)]);
    assert_eq!(r.status.code(), Some(2));

    let junk = dir.path().join("junk.heeg");
    std::fs::write(&junk, b"HEEG1\x01").unwrap();
    let r = hass(&["train", "--data", p(&junk), "--out-model", p(&model)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("truncated"), "{}", stderr(&r));
}

#[test]
fn gradcheck_gate_and_determinism() {
    let pass = hass(&["gradcheck"]);
    assert_eq!(pass.status.code(), Some(0), "{}", stdout(&pass));
    assert!(stdout(&pass).contains("PASS"));
    assert_eq!(stdout(&pass), stdout(&hass(&["gradcheck"])));

    let strict = hass(&["gradcheck", "--tolerance", "1e-15"]);
    assert_eq!(strict.status.code(), Some(2));
    assert!(stdout(&strict).contains("FAIL"));

    let indivisible = hass(&["gradcheck", "--heads", "2"]);
    assert_eq!(indivisible.status.code(), Some(1));
    assert!(stderr(&indivisible).contains("not divisible"));
}

#[test]
fn compare_renders_paired_rows_and_aa_delta() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d.heeg", "3");
    let base = [
        "compare",
        "--data-train",
        p(&data),
        "--data-eval",
        p(&data),
        "--seeds",
        "0,1",
        "--epochs",
        "2",
    ];

    let r = hass(&base);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    let out = stdout(&r);
    let table: String = out[out.find("Network").unwrap()..]
        .lines()
        .take(3)
        .map(|l| format!("{l}\n"))
        .collect();
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["Network", "HASS", "F1", "Acc", "W", "N1", "N2", "N3", "REM"]);
    let rows = hass_core::metrics::parse_report_table(&table).unwrap();
    assert_eq!(
        rows.iter().map(|r| (r.0.as_str(), r.1)).collect::<Vec<_>>(),
        [("tinyconv", true), ("tinyconv", false)]
    );
    assert!(out.contains("mean macro-F1 delta (hass yes - hass no) = "));

    let mut aa = base.to_vec();
    aa.extend(["--hass-arms", "no,no"]);
    let r = hass(&aa);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    assert!(
        stdout(&r).contains("mean macro-F1 delta (hass no - hass no) = +0.000"),
        "{}",
        stdout(&r)
    );
}

#[test]
fn config_file_precedence_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d.heeg", "3");
    let model = dir.path().join("m.prm");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, format!("# run\ndata = {}\nepochs = 2\nseed = 9\n", p(&data))).unwrap();

    let r = hass(&["train", "--config", p(&cfg), "--seed", "4", "--out-model", p(&model)]);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    let out = stdout(&r);
    assert!(out.contains("epochs = 2\n"), "file beats default: {out}");
    assert!(out.contains("seed = 4\n"), "flag beats file: {out}");
    assert!(out.contains("batch-size = 32\n"), "default kept: {out}");
    assert!(!out.contains("epoch   3"));

    std::fs::write(&cfg, "epochz = 2\n").unwrap();
    let r = hass(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--out-model",
        p(&model),
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(stderr(&r).contains("epochz"));
}

#[test]
fn help_lists_every_flag_with_defaults() {
    let cmd = hass::commands::command();
    for sub in cmd.get_subcommands() {
        let name = sub.get_name();
        let r = hass(&[name, "--help"]);
        assert_eq!(r.status.code(), Some(0));
        let text = stdout(&r);
        for arg in sub.get_arguments() {
            let Some(long) = arg.get_long() else { continue };
            assert!(text.contains(&format!("--{long}")), "{name} --help misses --{long}");
            if !arg.get_default_values().is_empty() {
                let line = text.lines().find(|l| l.contains(&format!("--{long} "))).unwrap();
                assert!(line.contains("[default: "), "{name} --{long}: {line}");
            }
        }
    }
}
