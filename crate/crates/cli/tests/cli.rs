//! End-to-end runs of the `colsim` binary.

use std::path::Path;
use std::process::{Command, Output};

fn colsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_colsim")).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        "[grid]\nx = 4\ny = 4\nneurons_per_column = 20\n\n\
         [kernel]\nshape = \"gaussian\"\n\n\
         [run]\nduration_ms = 80.0\nwarmup_ms = 0.0\nseed = 3\nworkers = 2\n",
    )
    .unwrap();
    path
}

fn raster_in(dir: &Path) -> Vec<u8> {
    let entry = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("raster-"))
        .expect("no raster written");
    std::fs::read(entry).unwrap()
}

#[test]
fn repeated_runs_write_identical_rasters() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let mut rasters = Vec::new();
    for (i, workers) in ["1", "3"].iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        let o = colsim(&[
            "run",
            config.to_str().unwrap(),
            "--workers",
            workers,
            "--dump-raster",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("report.json").exists());
        assert!(out.join("config.toml").exists());
        rasters.push(raster_in(&out));
    }
    assert_eq!(rasters[0], rasters[1]);
    assert!(rasters[0].starts_with(b"# config_digest="));
}

#[test]
fn single_worker_sweep_has_unit_efficiency() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let out = tmp.path().join("sweep");
    let o = colsim(&["sweep", config.to_str().unwrap(), "--workers", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("scaling.json")).unwrap()).unwrap();
    let first = &json["scaling"]["rows"][0];
    assert_eq!(first["workers"], 1);
    assert_eq!(first["speedup"].as_f64(), Some(1.0));
    assert_eq!(first["efficiency"].as_f64(), Some(1.0));
}

#[test]
fn stats_on_full_preset_reports_problem_size_without_sampling() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("stats");
    let o = colsim(&["stats", "--preset", "paper-gaussian-24x24", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(json["problem"]["neurons"], 714_240);
    assert_eq!(json["problem"]["stencil_side"], 7);
    assert!(json["sampling_skipped"].is_string());
}

#[test]
fn errors_exit_nonzero_with_one_json_line() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[grid]\nx = 4\ny = 4\nbogus = 1\n").unwrap();
    let o = colsim(&["run", bad.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let stderr = String::from_utf8(o.stderr).unwrap();
    let line: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(line["status"], "error");
    assert_eq!(line["kind"], "unknown_key");
    assert!(line["message"].as_str().unwrap().contains("bogus"));

    let o = colsim(&["run", "--preset", "no-such-preset"]);
    assert!(!o.status.success());
}
