use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bpslam() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bpslam"))
}

fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    let text = format!(
        r#"{{
  "schema": "bpslam-config/1",
  "scenario": {{
    "plan": {{
      "walls": [
        {{"start": [0, 0], "end": [12, 0]}},
        {{"start": [12, 0], "end": [12, 8]}},
        {{"start": [12, 8], "end": [0, 8]}},
        {{"start": [0, 8], "end": [0, 0]}}
      ],
      "roi_center": [6, 4],
      "roi_radius": 30
    }},
    "pas": [[10, 6], [3, 4]],
    "waypoints": [[1.5, 1.5], [3, 2.5]],
    "step_length": 0.05,
    "num_steps": 25
  }},
  "filter": {{"n_particles": 300, "intensity_particles": 300}}
  {extra}
}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

fn read_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

fn succeeds(cmd: &mut Command) -> bool {
    cmd.output().unwrap().status.success()
}

#[test]
fn evaluate_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "config.json", "");
    let out = dir.path().join("out");
    assert!(succeeds(
        bpslam()
            .args(["--config", cfg.to_str().unwrap(), "--mode", "evaluate", "--runs", "2", "--seed", "7", "--out"])
            .arg(&out)
    ));
    for f in ["scenario.json", "measurements.csv", "agent_estimates.csv", "features.csv", "metrics.csv", "summary.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert_eq!(read_lines(&out.join("measurements.csv"))[0], "n,j,z,sigma");
    let agent = read_lines(&out.join("agent_estimates.csv"));
    assert_eq!(agent[0], "run,n,x,y,vx,vy");
    assert_eq!(agent.len(), 1 + 2 * 25);
    assert_eq!(read_lines(&out.join("features.csv"))[0], "run,n,j,feature_id,x,y,p_exist,detected");
    let metrics = read_lines(&out.join("metrics.csv"));
    assert_eq!(metrics[0], "n,rmse,ospa_pa1,ospa_pa2,n_detected_pa1,n_detected_pa2");
    assert_eq!(metrics.len(), 26);
    assert_eq!(read_lines(&out.join("summary.csv"))[0], "key,value");
}

#[test]
fn identical_seeds_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "config.json", "");
    let run = |name: &str| {
        let out = dir.path().join(name);
        assert!(succeeds(
            bpslam().args(["--config", cfg.to_str().unwrap(), "--runs", "2", "--seed", "3", "--out"]).arg(&out)
        ));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["scenario.json", "measurements.csv", "agent_estimates.csv", "features.csv", "metrics.csv", "summary.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn simulate_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "config.json", "");
    let sim = dir.path().join("sim");
    assert!(succeeds(
        bpslam().args(["--config", cfg.to_str().unwrap(), "--mode", "simulate", "--runs", "2", "--out"]).arg(&sim)
    ));
    assert!(sim.join("measurements.csv").exists());
    assert!(sim.join("measurements_run1.csv").exists());
    assert!(!sim.join("agent_estimates.csv").exists());

    let replay = write_config(
        dir.path(),
        "replay.json",
        r#", "experiment": {"mode": "run", "runs": 1, "measurements": "sim/measurements.csv"}"#,
    );
    let out = dir.path().join("replay");
    assert!(succeeds(bpslam().args(["--config", replay.to_str().unwrap(), "--out"]).arg(&out)));
    assert!(out.join("agent_estimates.csv").exists());
    assert!(out.join("features.csv").exists());
    assert!(!out.join("metrics.csv").exists());
}

#[test]
fn synthetic_csv_replay() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("n,j,z,sigma\n");
    for n in 1..=10 {
        csv += &format!("{n},1,{},0.1\n", 9.5 - 0.01 * n as f64);
        csv += &format!("{n},2,2.9,0.1\n");
    }
    fs::write(dir.path().join("frames.csv"), csv).unwrap();
    let cfg = write_config(
        dir.path(),
        "config.json",
        r#", "experiment": {"mode": "run", "runs": 1, "measurements": "frames.csv"}"#,
    );
    let out = dir.path().join("out");
    assert!(succeeds(bpslam().args(["--config", cfg.to_str().unwrap(), "--out"]).arg(&out)));
    assert_eq!(read_lines(&out.join("agent_estimates.csv")).len(), 11);
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"schema": "other/9"}"#).unwrap();
    let out = bpslam().args(["--config", cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = bpslam().args(["--mode", "sideways"]).output().unwrap();
    assert!(!out.status.success());
}
