use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY_CONFIG: &str = r#"
[regressor_model]
k = 2

[handnet]
epochs = 1
max_steps = 3

[regressor]
k = 2
epochs = 1
max_steps = 3

[manip]
epochs = 3

[baseline_hands_only]
epochs = 3

[baseline_future_detector]
epochs = 1
max_steps = 2
"#;

fn handcast(ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handcast"))
        .args(args)
        .env("HANDCAST_WORKSPACE", ws)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn generate_defaults_match_dataset_sizes_and_repeat_exactly() {
    let ws = tempfile::tempdir().unwrap();
    let out = handcast(ws.path(), &["generate", "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("47 episodes (32 train / 15 test)"));
    assert!(stdout(&out).contains("50 robot logs"));
    let first = files(&ws.path().join("corpus"));
    assert!(first.keys().any(|p| p.ends_with("resolved_config.toml")));

    let again = tempfile::tempdir().unwrap();
    assert_eq!(code(&handcast(again.path(), &["generate", "--seed", "4"])), 0);
    assert!(first == files(&again.path().join("corpus")), "corpus bytes differ between identical runs");
}

#[test]
fn invalid_flags_exit_with_usage_code() {
    let ws = tempfile::tempdir().unwrap();
    assert_eq!(code(&handcast(ws.path(), &["generate", "--episodes", "0"])), 2);
    assert_eq!(code(&handcast(ws.path(), &["generate", "--scenario", "juggling"])), 2);
    assert_eq!(code(&handcast(ws.path(), &["train", "--stage", "everything"])), 2);
    assert_eq!(code(&handcast(ws.path(), &["frobnicate"])), 2);
}

#[test]
fn missing_dependencies_name_the_prior_stage() {
    let ws = tempfile::tempdir().unwrap();
    let out = handcast(ws.path(), &["train", "--stage", "regressor"]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("handcast generate"));

    assert_eq!(code(&handcast(ws.path(), &["generate", "--episodes", "2", "--detector-frames", "20"])), 0);
    let out = handcast(ws.path(), &["train", "--stage", "regressor"]);
    assert_eq!(code(&out), 4);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("handnet.ckpt") && err.contains("`handnet`"), "{err}");

    let out = handcast(ws.path(), &["eval", "--methods", "hands_only"]);
    assert_eq!(code(&out), 4);
    let out = handcast(ws.path(), &["demo", "--episodes", "1"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn oracle_demo_succeeds_everywhere() {
    let ws = tempfile::tempdir().unwrap();
    let out = handcast(ws.path(), &["demo", "--oracle", "--episodes", "3", "--seed", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("oracle success rate: 1.00"), "{}", stdout(&out));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ws.path().join("demos/closed_loop_oracle.json")).unwrap()).unwrap();
    let step = &report["episodes"][0]["trace"][0];
    for key in ["predicted", "joints", "pixel_error"] {
        assert!(!step[key].is_null(), "trace step lacks {key}");
    }
    assert!(ws.path().join("demos/resolved_config.toml").exists());
}

#[test]
fn staged_pipeline_end_to_end() {
    let ws = tempfile::tempdir().unwrap();
    let w = ws.path();
    std::fs::write(w.join("tiny.toml"), TINY_CONFIG).unwrap();
    let config = w.join("tiny.toml");
    let config = config.to_str().unwrap();
    assert_eq!(code(&handcast(w, &["generate", "--episodes", "3", "--detector-frames", "40"])), 0);

    let out = handcast(w, &["train", "--stage", "all", "--config", config, "--k", "1,2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "handnet",
        "regressor_k1",
        "regressor_k2",
        "manip",
        "baseline_hands_only",
        "baseline_future_detector",
    ] {
        assert!(w.join(format!("checkpoints/{name}.ckpt")).exists(), "{name} checkpoint missing");
        let report: serde_json::Value =
            serde_json::from_slice(&std::fs::read(w.join(format!("checkpoints/{name}.report.json"))).unwrap()).unwrap();
        for key in ["stage", "epoch_losses", "steps", "seed", "config", "model"] {
            assert!(!report[key].is_null(), "{name} report lacks {key}");
        }
    }
    let snapshot = std::fs::read_to_string(w.join("checkpoints/resolved_config.toml")).unwrap();
    assert!(snapshot.contains("[cli]") && snapshot.contains("[regressor_model]"));
    assert!(!snapshot.contains(w.to_str().unwrap()), "snapshot records an absolute path");

    let eval = ["eval", "--config", config, "--methods", "full_k2,full_k1,hands_only,future_detector"];
    let out = handcast(w, &eval);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("Mean Pixel Distance") && text.contains("Right hand only"));
    assert!(text.contains("Full regressor (K=2)"), "{text}");
    let json = std::fs::read(w.join("reports/prediction_test.json")).unwrap();
    assert_eq!(code(&handcast(w, &eval)), 0);
    assert_eq!(json, std::fs::read(w.join("reports/prediction_test.json")).unwrap());

    let out = handcast(w, &["predict", "--config", config, "--episode", "ep_002", "--K", "2", "--t", "5000"]);
    assert_eq!(code(&out), 2);
    let out = handcast(w, &["predict", "--config", config, "--episode", "ep_002", "--K", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ppms: Vec<_> = files(&w.join("overlays/ep_002"))
        .into_iter()
        .filter(|(p, _)| p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    assert!(ppms.len() >= 5, "one overlay per second expected");
    let img = handcast::evaluation::read_ppm(&mut ppms[0].1.as_slice()).unwrap();
    assert_eq!(img.width, 96 * 4);

    let out = handcast(w, &["demo", "--config", config, "--episodes", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("trained success rate"));
    let out = handcast(w, &["demo", "--config", config, "--episodes", "2", "--untrained"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}
