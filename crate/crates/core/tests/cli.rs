use std::fs;
use std::path::Path;
use std::process::Command;

fn gdgm(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_gdgm")).args(args).output().expect("spawn");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

const SMALL: &str = "\
synth.n_transactions = 160
synth.n_accounts = 24
synth.n_instruments = 4
synth.n_rings = 2
synth.d_raw = 12
epochs = 2
pretrain_epochs = 2
h_dim = 4
att_hidden = 4
q_dim = 4
cls_hidden = 4
wavelet_hidden = 4
wavelet_post_hidden = 2
max_len = 6
solver_steps = 1
block_seconds = 300000
";

fn setup(dir: &Path) -> (String, String) {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let data = dir.join("data.jsonl");
    let (code, _, err) = gdgm(&["synth", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    (cfg.to_str().unwrap().to_string(), data.to_str().unwrap().to_string())
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let (code, _, err) = gdgm(&["frobnicate"]);
    assert_eq!(code, 1);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn unknown_flag_is_usage_error() {
    let (code, _, _) = gdgm(&["train", "--bogus", "x"]);
    assert_eq!(code, 1);
}

#[test]
fn help_exits_zero() {
    assert_eq!(gdgm(&["--help"]).0, 0);
}

#[test]
fn eval_with_missing_checkpoint_fails_at_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = setup(dir.path());
    let missing = dir.path().join("none.ckpt");
    let m = dir.path().join("m.txt");
    let (code, _, err) =
        gdgm(&["eval", "--checkpoint", missing.to_str().unwrap(), "--data", &data, "--metrics-out", m.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error:"), "{err}");
}

#[test]
fn bad_config_fails_at_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = setup(dir.path());
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "variant = sideways\n").unwrap();
    let ck = dir.path().join("c.ckpt");
    let m = dir.path().join("m.txt");
    let (code, _, err) = gdgm(&[
        "train", "--config", cfg.to_str().unwrap(), "--data", &data,
        "--out-checkpoint", ck.to_str().unwrap(), "--metrics-out", m.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("sideways"), "{err}");
}

#[test]
fn synth_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let ck = dir.path().join("model.ckpt");
    let m = dir.path().join("train.txt");
    let (code, _, err) = gdgm(&[
        "train", "--config", &cfg, "--data", &data,
        "--out-checkpoint", ck.to_str().unwrap(), "--metrics-out", m.to_str().unwrap(), "--seed", "3",
    ]);
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(&m).unwrap();
    for key in ["AUC", "Accuracy", "F1", "Precision", "Recall", "N_TP", "N_FP", "N_TN", "N_FN"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{key} = "))), "{key} missing in {text}");
    }
    let trace = fs::read_to_string(dir.path().join("train.txt.trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("epoch,loss,val_auc"));
    assert_eq!(trace.lines().count(), 1 + 3);
    assert!(fs::read_to_string(&ck).unwrap().contains("@ cfg.seed = 3"));

    let em = dir.path().join("eval.txt");
    let (code, _, err) =
        gdgm(&["eval", "--checkpoint", ck.to_str().unwrap(), "--data", &data, "--metrics-out", em.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let report = gdgm::metrics::MetricsReport::from_text(&fs::read_to_string(&em).unwrap()).unwrap();
    assert_eq!(report.total(), 160);
    let scores = fs::read_to_string(dir.path().join("eval.txt.scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 161);
}

#[test]
fn ablate_and_rolling_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let out = dir.path().join("ablate.csv");
    let (code, _, err) = gdgm(&[
        "ablate", "--config", &cfg, "--data", &data, "--out", out.to_str().unwrap(),
        "--variants", "full,no_ode,full",
    ]);
    assert_eq!(code, 0, "{err}");
    let table = fs::read_to_string(&out).unwrap();
    assert_eq!(table.lines().count(), 3, "{table}");

    let (code, _, _) = gdgm(&[
        "ablate", "--config", &cfg, "--data", &data, "--out", out.to_str().unwrap(), "--variants", "nope",
    ]);
    assert_eq!(code, 2);

    let out = dir.path().join("rolling.csv");
    let (code, _, err) = gdgm(&["rolling", "--config", &cfg, "--data", &data, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(fs::read_to_string(&out).unwrap().lines().count() >= 3);
}
