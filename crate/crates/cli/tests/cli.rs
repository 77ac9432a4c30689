use std::path::Path;
use std::process::{Command, Output};

fn hqg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hqg")).args(args).output().expect("run hqg")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY: &str = "\
# 16x16 truth coarsened to 8x8
nx_hi = 16
nx_lo = 8
spinup_days = 1
duration_days = 1.5
obs_interval = 3
n_obs = 2
window_gap_days = 0
train_sims = 2
test_sims = 1
eval_steps = 6
eval_cadence = 3
ic_kmax = 3
cnn_hidden = 4
epochs = 2
phase_switch = 1
batch_size = 2
hmc_iterations = 8
hmc_leapfrog = 2
hmc_thin = 2
ensemble_members = 3
";

fn write_tiny(dir: &Path) -> String {
    let p = dir.join("tiny.cfg");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = hqg(&["generate", "--run", run.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("config"));

    let missing = dir.path().join("nope.cfg");
    let out = hqg(&["generate", "--config", missing.to_str().unwrap(), "--run", run.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = hqg(&["train", "--frobnicate"]);
    assert_eq!(code(&out), 2);
    let out = hqg(&["launch"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn invalid_override_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let run = dir.path().join("run");
    for bad in ["no_such_key=3", "nx_lo", "nx_lo=eight"] {
        let out = hqg(&["generate", "--config", &cfg, "--set", bad, "--run", run.to_str().unwrap()]);
        assert_eq!(code(&out), 2, "{bad}: {}", stderr(&out));
    }
    assert!(!run.join("train.dqgd").exists());
}

#[test]
fn evaluate_without_checkpoint_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let run = dir.path().join("run");
    let run = run.to_str().unwrap();
    assert_eq!(code(&hqg(&["generate", "--config", &cfg, "--run", run])), 0);
    let out = hqg(&["evaluate", "--run", run]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("checkpoint"), "{}", stderr(&out));
    let out = hqg(&["evaluate", "--run", dir.path().join("elsewhere").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gradcheck_passes() {
    let out = hqg(&["gradcheck"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 3, "{text}");
    // An impossible tolerance fails with a runtime error, not a usage error.
    assert_eq!(code(&hqg(&["gradcheck", "--tolerance", "0"])), 1);
}

#[test]
fn full_pipeline_writes_every_artefact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let run = dir.path().join("run");
    let r = run.to_str().unwrap();
    for args in [
        vec!["generate", "--config", &cfg, "--run", r],
        vec!["train", "--run", r],
        vec!["sample", "--run", r],
        vec!["evaluate", "--run", r],
        vec!["plot", "--run", r],
    ] {
        let out = hqg(&args);
        assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
    }
    for f in [
        "config.cfg",
        "manifest.txt",
        "train.dqgd",
        "test.dqgd",
        "checkpoint.dcnn",
        "history.csv",
        "ensemble.dpen",
        "ensemble.csv",
        "metrics.csv",
        "histogram.csv",
        "r2.svg",
        "mse.svg",
        "ke.svg",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    for v in ["truth", "none", "smagorinsky", "deterministic", "map", "posterior"] {
        assert!(metrics.contains(&format!(",{v},")), "no {v} rows");
    }
    let manifest = std::fs::read_to_string(run.join("manifest.txt")).unwrap();
    assert!(manifest.contains("stage.evaluate"));
}

#[test]
fn overrides_reach_the_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let run = dir.path().join("run");
    let out = hqg(&["generate", "--config", &cfg, "--set", "seed=77", "--run", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let snap = std::fs::read_to_string(run.join("config.cfg")).unwrap();
    assert!(snap.lines().any(|l| l.replace(' ', "") == "seed=77"), "{snap}");
}
