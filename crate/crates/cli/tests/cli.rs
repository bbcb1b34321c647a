use std::process::Command;

fn soil_pinn(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_soil-pinn")).args(args).output().unwrap()
}

#[test]
fn simulate_then_predict_one_window() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f).to_str().unwrap().to_string();
    let out = soil_pinn(&["gen-dataset", "--deterministic", "--episodes", "12", "--out", &p("data")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = soil_pinn(&["train", "--epochs", "1", "--data", &p("data"), "--out", &p("model")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = soil_pinn(&["simulate", "--soil", "clay", "--density", "70", "--mode", "default", "--out", &p("ep.csv")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = soil_pinn(&["predict", "--checkpoint", &p("model/checkpoint.json"), "--window", &p("ep.csv"), "--index", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pred: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["theta", "raw", "residual", "f_fee", "f_hat", "masked"] {
        assert!(pred.get(key).is_some(), "{key}");
    }

    // past the last window
    let out = soil_pinn(&["predict", "--checkpoint", &p("model/checkpoint.json"), "--window", &p("ep.csv"), "--index", "10"]);
    assert!(!out.status.success());
    let out = soil_pinn(&["eval", "--checkpoint", &p("model/checkpoint.json"), "--data", &p("data"), "--out", &p("eval"), "--d-fixed", "0.5"]);
    assert!(!out.status.success());
}

#[test]
fn bad_episode_count_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = soil_pinn(&["gen-dataset", "--episodes", "10", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
