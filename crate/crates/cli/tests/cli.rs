use std::path::Path;
use std::process::{Command, Output};

fn ifm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifm")).args(args).output().expect("run ifm")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn missing_sigma_is_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "D = 2\nL = 6\nd = 1\nquark = 0,0\nantiquark = 1,1\n");
    let out = ifm(&["field-eval", "--config", &cfg, "--at", "0,0,3"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma0"));
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "D = 2\nL = 6\nsigma0 = 1\nd = 1\nsigmaa = 2\n");
    let out = ifm(&["field-eval", "--config", &cfg, "--at", "0,0,3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigmaa"));
}

#[test]
fn field_outside_plates_is_caged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "D = 2\nL = 6\nsigma0 = 1\nd = 1\nquark = 0,0\nantiquark = 1,-1\n");
    let out = ifm(&["field-eval", "--config", &cfg, "--at", "0.2,-0.1,7.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("caged"), "{text}");
    assert!(text.contains("magnitude = 0.0"), "{text}");

    let inside = ifm(&["field-eval", "--config", &cfg, "--at", "0.5,-0.5,3"]);
    let text = String::from_utf8_lossy(&inside.stdout);
    assert!(inside.status.success() && !text.contains("caged"), "{text}");
}

#[test]
fn verify_caging_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.json");
    let r = ifm(&["verify", "--suite", "caging", "--out", &s(&out), "--seed", "3"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["seed"], 3);
    assert!(v["entries"].as_array().unwrap().iter().all(|e| e["pass"] == true));
}

#[test]
fn generate_train_sample_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("source_train.csv");
    let tgt = dir.path().join("target_train.csv");
    let eval = dir.path().join("source_eval.csv");
    assert!(ifm(&["generate", "--dataset", "gaussian", "--n", "256", "--out", &s(&src), "--seed", "1"]).status.success());
    assert!(ifm(&["generate", "--dataset", "swiss-roll", "--n", "256", "--out", &s(&tgt), "--seed", "2"]).status.success());
    assert!(ifm(&["generate", "--dataset", "gaussian", "--n", "32", "--out", &s(&eval), "--seed", "3"]).status.success());
    assert!(std::fs::read_to_string(&src).unwrap().starts_with("# seed=1"));

    let cfg = write(
        dir.path(),
        "train.toml",
        "D = 2\nL = 6\nsigma0 = 1\nd = 3\nsource = source_train.csv\ntarget = target_train.csv\n\
         batch = 64\niterations = 20\nwarmup = 5\nhidden = 16,16\nseed = 5\n",
    );
    let model = dir.path().join("m.ckpt");
    let r = ifm(&["train", "--config", &cfg, "--out", &s(&model)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let history = std::fs::read_to_string(dir.path().join("m.history.csv")).unwrap();
    assert!(history.starts_with("# seed=5"));
    assert_eq!(history.lines().filter(|l| !l.starts_with('#')).count(), 21);

    let out = dir.path().join("target_out.csv");
    let traces = dir.path().join("traces.csv");
    let r = ifm(&[
        "sample", "--config", &cfg, "--model", &s(&model), "--in", &s(&eval), "--out", &s(&out), "--traces", &s(&traces),
        "--steps", "10",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let terminal = std::fs::read_to_string(&out).unwrap();
    assert!(terminal.starts_with("# seed=5"));
    assert_eq!(terminal.lines().filter(|l| !l.starts_with('#')).count(), 33);
    let rows = std::fs::read_to_string(&traces).unwrap();
    assert_eq!(rows.lines().filter(|l| !l.starts_with('#')).count(), 1 + 32 * 11);
}

#[test]
fn trace_dumps_steps_plus_one_rows() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("source.csv");
    let tgt = dir.path().join("target.csv");
    assert!(ifm(&["generate", "--dataset", "gaussian", "--n", "16", "--out", &s(&src)]).status.success());
    assert!(ifm(&["generate", "--dataset", "swiss-roll", "--n", "16", "--out", &s(&tgt)]).status.success());
    let cfg = write(
        dir.path(),
        "t.toml",
        "D = 2\nL = 6\nsigma0 = 1\nd = 3\nsource = source.csv\ntarget = target.csv\nbatch = 16\nsteps = 100\n",
    );
    let traces = dir.path().join("tr.csv");
    let terminal = dir.path().join("target_end.csv");
    let r = ifm(&["trace", "--config", &cfg, "--in", &s(&src), "--out", &s(&traces), "--terminal", &s(&terminal)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(&traces).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "trace_id,step,x0,x1,z");
    assert_eq!(body.len() - 1, 16 * 101);
    assert!(body.last().unwrap().starts_with("15,100,"));
    assert!(body.last().unwrap().ends_with(",6") || body.last().unwrap().contains(",6."));
}

#[test]
fn bad_flag_exits_with_usage_code() {
    let out = ifm(&["generate", "--dataset", "nope", "--n", "3", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
}
