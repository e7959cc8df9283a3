use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn deepfactor(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepfactor"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn simulate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--firms", "60", "--months", "120", "--seed", "7", "--out", "data"];
    args.extend_from_slice(extra);
    ok(&deepfactor(&args, dir));
}

#[test]
fn simulate_writes_five_files_into_a_new_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = deepfactor(
        &["simulate", "--firms", "200", "--months", "360", "--seed", "7", "--out", "nested/data"],
        tmp.path(),
    );
    ok(&out);
    let mut names: Vec<String> = fs::read_dir(tmp.path().join("nested/data"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["factors.csv", "firms.csv", "macro.csv", "portfolios.csv", "truth.csv"]);
}

#[test]
fn simulate_repeats_byte_for_byte() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulate(a.path(), &["--holdout"]);
    simulate(b.path(), &["--holdout"]);
    for f in ["firms.csv", "macro.csv", "factors.csv", "portfolios.csv", "truth.csv", "holdout.csv"] {
        let read = |d: &Path| fs::read(d.join("data").join(f)).unwrap();
        assert_eq!(read(a.path()), read(b.path()), "{f}");
    }
}

#[test]
fn train_evaluate_and_dissect() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, &["--holdout"]);
    fs::write(dir.join("train.cfg"), "epochs = 2\nbatch_months = 24\nlayers = 1\nfactors = 1\n").unwrap();
    let args = [
        "--jobs", "2", "train", "--data", "data", "--out", "run", "--config", "train.cfg", "--epochs", "3",
        "--conditions", "0",
    ];
    ok(&deepfactor(&args, dir));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/manifest.json")).unwrap()).unwrap();
    let train = &manifest["config"]["train"];
    assert_eq!(train["epochs"], 3, "flag beats file");
    assert_eq!(train["batch_months"], 24, "file beats default");
    assert_eq!(train["grid"]["conditions"], serde_json::json!([0]));
    let labels: Vec<&str> = manifest["rows"].as_array().unwrap().iter().map(|r| r["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["CAPM", "CAPM+DL"]);

    // Same checkpoints, same data: the rebuilt table matches the one from training.
    ok(&deepfactor(&["evaluate", "--data", "data", "--run", "run", "--out", "eval"], dir));
    assert_eq!(
        fs::read_to_string(dir.join("run/report/table_oos.csv")).unwrap(),
        fs::read_to_string(dir.join("eval/table_oos.csv")).unwrap()
    );

    let holdout = dir.join("data/holdout.csv");
    fs::copy(&holdout, dir.join("external.csv")).unwrap();
    ok(&deepfactor(&["dissect", "--data", "data", "--run", "run", "--holdout", "external.csv", "--out", "dis"], dir));
    let table = fs::read_to_string(dir.join("dis/table_dissect.csv")).unwrap();
    assert_eq!(table.lines().filter(|l| l.starts_with("external,")).count(), 2, "{table}");
}

#[test]
fn gradcheck_passes_on_the_default_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let out = deepfactor(&["gradcheck", "--layers", "1", "--factors", "1", "--conditions", "0"], tmp.path());
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| deepfactor(args, tmp.path()).status.code().unwrap();
    assert_eq!(code(&["train", "--bogus"]), 1);
    assert_eq!(code(&["nonsense"]), 1);
    assert_eq!(code(&["train", "--layers", "9"]), 1);
    assert_eq!(code(&["train", "--data", "missing"]), 2);
    fs::write(tmp.path().join("bad.cfg"), "epochs = many\n").unwrap();
    assert_eq!(code(&["train", "--config", "bad.cfg"]), 1);
    assert_eq!(code(&["--help"]), 0);
}
