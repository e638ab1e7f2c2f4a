use std::path::Path;
use std::process::{Command, Output};

use conelayer::cli_io::{read_spectrum_csv, read_sweep_csv, Manifest};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conelayer")).args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    let d = dir.to_str().unwrap();
    all.extend(["--output", d]);
    run(&all)
}

const COARSE: [&str; 8] = ["--h", "0.5", "--grading", "1e3", "--smax", "80", "--refine", "false"];

fn coarse(extra: &[&str]) -> Vec<String> {
    extra.iter().chain(COARSE.iter()).map(|s| s.to_string()).collect()
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(|s| s.as_str()).collect()
}

fn error_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).expect("error JSON on stderr")
}

#[test]
fn missing_angle_is_a_usage_error() {
    let out = run(&["solve", "--k", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
}

#[test]
fn unknown_flag_and_two_angles_are_usage_errors() {
    assert_eq!(run(&["solve", "--beta-deg", "3", "--bogus", "1"]).status.code(), Some(2));
    let out = run(&["solve", "--beta-deg", "3", "--theta-deg", "80"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
}

#[test]
fn nonzero_partial_wave_has_no_bound_states() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["solve", "--theta-deg", "45", "--m", "1", "--h", "0.5", "--grading", "1e3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_spectrum_csv(&std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap()).unwrap();
    assert!(rows.is_empty());
    let js: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("spectrum.json")).unwrap()).unwrap();
    assert_eq!(js["angle"]["beta_deg"].as_f64().unwrap().round(), 45.0);
}

#[test]
fn bound_json_and_range_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["bound", "--theta-deg", "87.5", "--lambda-bar", "0.95"]);
    assert_eq!(out.status.code(), Some(0));
    let js: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("bound.json")).unwrap()).unwrap();
    assert!(js["n"].as_u64().unwrap() >= 1);
    assert!(js["radius"].as_f64().unwrap() > 0.0 && js["length"].as_f64().unwrap() > 0.0);
    let low = run_in(dir.path(), &["bound", "--theta-deg", "87.5", "--lambda-bar", "0.5"]);
    assert_eq!(low.status.code(), Some(2));
    assert_eq!(run_in(dir.path(), &["bound", "--theta-deg", "87.5"]).status.code(), Some(2));
}

#[test]
fn bound_against_shipped_sweep() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/sweep_beta_2_5.csv");
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["bound", "--beta-deg", "2.5", "--lambda-bar", "0.95", "--sweep-file", data.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let js: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("bound.json")).unwrap()).unwrap();
    let cmp = &js["comparison"];
    assert_eq!(cmp["fem_count_at_least_n"], true);
    assert!(cmp["fem_count"].as_u64().unwrap() >= js["n"].as_u64().unwrap());
}

#[test]
fn sweep_matches_solve_and_single_angle_plot_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let sw = dir.path().join("sweep");
    let so = dir.path().join("solve");
    let args = coarse(&["sweep", "--beta-deg", "20", "--k", "2"]);
    assert_eq!(run_in(&sw, &strs(&args)).status.code(), Some(0));
    let args = coarse(&["solve", "--beta-deg", "20", "--k", "2"]);
    assert_eq!(run_in(&so, &strs(&args)).status.code(), Some(0));
    let sweep = read_sweep_csv(&std::fs::read_to_string(sw.join("sweep.csv")).unwrap()).unwrap();
    let solve = read_spectrum_csv(&std::fs::read_to_string(so.join("spectrum.csv")).unwrap()).unwrap();
    assert_eq!(sweep.len(), solve.len());
    for (a, b) in sweep.iter().zip(&solve) {
        assert!((a.lambda - b.lambda).abs() <= 1e-12);
    }
    let svg = std::fs::read_to_string(sw.join("sweep.svg")).unwrap();
    assert!(svg.contains("class=\"threshold\"") && svg.contains("class=\"lambda0\""));
    assert!(!svg.contains("href"));
}

#[test]
fn sweep_range_has_k_rows_per_angle() {
    let dir = tempfile::tempdir().unwrap();
    let args = coarse(&["sweep", "--beta-deg", "14:16:1", "--k", "1"]);
    let out = run_in(dir.path(), &strs(&args));
    assert_eq!(out.status.code(), Some(0));
    let rows = read_sweep_csv(&std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.ok && r.j == Some(1)));
}

#[test]
fn manifest_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = coarse(&["solve", "--beta-deg", "15", "--k", "2"]);
    assert_eq!(run_in(&a, &strs(&args)).status.code(), Some(0));
    let manifest = a.join("manifest.json");
    let out = run_in(&b, &["solve", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read(a.join("spectrum.csv")).unwrap(), std::fs::read(b.join("spectrum.csv")).unwrap());
    let m = Manifest::read(&b.join("manifest.json")).unwrap();
    assert!(m.verify(&b).is_empty());
    assert_eq!(run_in(&b, &["sweep", "--manifest", manifest.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# coarse run\nbeta-deg = 15\nk = 1\nh = 0.5\ngrading = 1e3\nsmax = 80\nrefine = false\n").unwrap();
    let out = run_in(dir.path(), &["solve", "--config", cfg.to_str().unwrap(), "--k", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let m = Manifest::read(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(m.config["k"], "2");
    assert_eq!(m.config["h"], "0.5");
}

#[test]
fn mesh_export_writes_mesh_and_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["mesh-export", "--beta-deg", "20", "--smax", "30", "--h", "0.5", "--grading", "1e2"]);
    assert_eq!(out.status.code(), Some(0));
    let a = std::fs::read_to_string(dir.path().join("stiffness.txt")).unwrap();
    assert!(a.starts_with("conelayer-matrix v1 "));
    let mesh = std::fs::read_to_string(dir.path().join("mesh.txt")).unwrap();
    assert!(conelayer::geometry::Mesh::from_text(&mesh).is_ok());
    let m = Manifest::read(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(m.files.len(), 3);
}

#[test]
fn plot_modes_nodal_strokes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "plot-modes", "--beta-deg", "2.5", "--k", "4", "--h", "0.5", "--grading", "1e3", "--smax", "200",
            "--refine", "false", "--vertical-scale", "5",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let nodal = |j: usize| {
        let svg = std::fs::read_to_string(dir.path().join(format!("mode_{j}.svg"))).unwrap();
        svg.matches("class=\"nodal\"").count()
    };
    assert_eq!(nodal(1), 0);
    assert_eq!(nodal(4), 3);
    assert!(dir.path().join("profiles.svg").exists());
}
