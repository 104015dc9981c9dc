use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
weathers = ["dry"]

[collect]
n_samples = 300
episode_days = 1.0

[model]
hidden = [8, 8]
latent = 6
horizon = 6

[train]
epochs = 2
batch_size = 32

[empc]
horizon = 6

[closed_loop]
days = 0.25
"#;

fn wwtp(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_wwtp-empc"))
        .args(args)
        .current_dir(dir)
        .env_remove("WWTP_EMPC_CONFIG")
        .env_remove("WWTP_EMPC_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn settle_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    wwtp(tmp.path(), &["settle", "--out", "a"]);
    wwtp(tmp.path(), &["settle", "--out", "b"]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for f in [
        "steady_state.bin",
        "steady_state.csv",
        "reference_comparison.csv",
        "config.toml",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let m = manifest(&a);
    assert_eq!(m["command"], "settle");
    assert_eq!(m, manifest(&b));
    assert!(m["outputs"]["steady_state.bin"].as_str().unwrap().len() == 64);
    assert!(m["failures"].as_array().unwrap().is_empty());
}

#[test]
fn collect_train_evaluate_small_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("small.toml"), SMALL).unwrap();

    wwtp(
        dir,
        &[
            "--config",
            "small.toml",
            "collect",
            "--out",
            "data",
            "--csv",
        ],
    );
    let m = manifest(&dir.join("data"));
    assert_eq!(m["config"]["collect"]["n_samples"], 300);
    assert_eq!(m["config"]["collect"]["horizon"], 6);
    let csv = fs::read_to_string(dir.join("data/dataset.csv")).unwrap();
    assert_eq!(csv.lines().count(), 301);

    // the seed can come from the environment
    let out = Command::new(env!("CARGO_BIN_EXE_wwtp-empc"))
        .args(["train", "--dataset", "data/dataset.bin", "--out", "train"])
        .current_dir(dir)
        .env("WWTP_EMPC_CONFIG", "small.toml")
        .env("WWTP_EMPC_SEED", "5")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.join("train/model_seed5.bin").exists());
    assert_eq!(
        manifest(&dir.join("train"))["seeds"],
        serde_json::json!([5])
    );

    wwtp(
        dir,
        &[
            "--config",
            "small.toml",
            "evaluate",
            "--model",
            "train/model_seed5.bin",
            "--out",
            "eval",
        ],
    );
    let eval = fs::read_to_string(dir.join("eval/evaluation.csv")).unwrap();
    let methods: Vec<&str> = eval
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(methods, ["constant", "random", "dioko-empc"]);
    assert!(dir.join("eval/trajectories/dioko-empc_dry.csv").exists());
    let inputs = manifest(&dir.join("eval"))["inputs"]
        .as_object()
        .unwrap()
        .len();
    assert_eq!(inputs, 2);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), "[train]\nepoch = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_wwtp-empc"))
        .args(["--config", "bad.toml", "settle"])
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}
