use std::path::Path;
use std::process::{Command, Output};

fn obsearch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obsearch"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("config.json");
    let text = format!(
        r#"{{
  "env": "diagnostic",
  "presets": ["RS"],
  "steps": 300,
  "bucket_steps": 100,
  "train": {{"hidden": [8], "batch_size": 16, "warmup_steps": 100{extra}}}
}}"#
    );
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn bench_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let args = ["bench", "--config", &config, "--seeds", "2", "--workers", "2", "--out", out];
    let run = obsearch(&args);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.contains("seeds=2"), "{stdout}");

    // a second identical run needs --force
    assert_eq!(obsearch(&args).status.code(), Some(1));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(obsearch(&forced).status.code(), Some(0));

    let report = obsearch(&["report", "--out", out]);
    assert_eq!(report.status.code(), Some(0));
    assert!(Path::new(out).join("report/comparison.svg").exists());
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(obsearch(&["bench"]).status.code(), Some(1));
    let missing = dir.path().join("missing.json");
    assert_eq!(obsearch(&["bench", "--config", missing.to_str().unwrap()]).status.code(), Some(1));
    let config = write_config(dir.path(), "");
    assert_eq!(obsearch(&["bench", "--config", &config, "--seeds", "0"]).status.code(), Some(1));
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(obsearch(&["report", "--out", empty.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn all_seeds_failing_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // a learning rate this large overflows the networks on the first updates
    let config = write_config(dir.path(), r#", "learning_rate": 1e300"#);
    let out = dir.path().join("out");
    let run = obsearch(&["bench", "--config", &config, "--seeds", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2), "{}", String::from_utf8_lossy(&run.stderr));
}
