use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn hmmflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmmflow"))
        .args(args)
        .env_remove("HMMFLOW_OUTPUT_DIR")
        .output()
        .expect("spawn hmmflow")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect();
    (header, rows)
}

fn cfg(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

#[test]
fn upscale_constant_gives_three_identity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    ok(&hmmflow(&["upscale", "--config", &cfg("equilibrium.cfg"), "--output", &out]));
    let (header, rows) = csv_rows(&dir.path().join("tensors.csv"));
    assert_eq!(header, ["x", "y", "K11", "K12", "K22", "alpha_loc", "beta_loc", "m_indicator"]);
    assert_eq!(rows.len(), 25);
    for row in &rows {
        let v: Vec<f64> = row.iter().map(|f| f.parse().unwrap()).collect();
        assert!((v[2] - 3.0).abs() < 1e-12 && v[3].abs() < 1e-12 && (v[4] - 3.0).abs() < 1e-12, "{row:?}");
        assert!(v[7].abs() < 1e-12);
    }
    let vtk = std::fs::read_to_string(dir.path().join("tensors.vtk")).unwrap();
    assert!(vtk.contains("CELL_DATA 25"));
}

#[test]
fn equilibrium_run_writes_one_snapshot_without_newton_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let stdout =
        ok(&hmmflow(&["run", "--config", &cfg("equilibrium.cfg"), "--output", &out, "--formulation", "kirchhoff"]));
    assert!(stdout.contains("kirchhoff"));
    let snapshots: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".vtk"))
        .collect();
    assert_eq!(snapshots.len(), 1);
    let (header, rows) = csv_rows(&dir.path().join("run_log.csv"));
    assert_eq!(header[3], "newton_iters");
    assert_eq!(rows.len(), 4);
    for row in &rows[1..] {
        assert_eq!(row[3], "0");
    }
}

#[test]
fn phase_run_with_fluxes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let stdout = ok(&hmmflow(&["run", "-c", &cfg("layered.cfg"), "-o", &out, "--formulation", "phases", "--fluxes"]));
    assert!(stdout.contains("phases"));
    let vtk = std::fs::read_to_string(dir.path().join("state_0005.vtk")).unwrap();
    assert!(vtk.contains("SCALARS s_w double 1") && vtk.contains("SCALARS p_n double 1"));
    assert!(dir.path().join("state_0000.vtk").exists());
    let flux = std::fs::read_to_string(dir.path().join("fluxes.vtk")).unwrap();
    assert!(flux.contains("VECTORS u_s double") && flux.contains("VECTORS u_p double"));
}

#[test]
fn modeling_study_shows_decay_for_rotated_layers() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("layered.cfg")).unwrap().replace("wave = 1, 0", "wave = 1, 1");
    let path = dir.path().join("rotated.cfg");
    std::fs::write(&path, text).unwrap();
    let out = dir.path().join("out").to_string_lossy().into_owned();
    let stdout = ok(&hmmflow(&["study", "-c", &path.to_string_lossy(), "--mode", "modeling-error", "-o", &out]));
    assert_eq!(stdout.lines().count(), 4);
    let (header, rows) = csv_rows(&Path::new(&out).join("modeling_error.csv"));
    assert_eq!(header[0], "m");
    let errors: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["8", "16", "32"]);
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}

#[test]
fn estimate_honours_the_output_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hmmflow"))
        .args(["estimate", "-c", &cfg("layered.cfg")])
        .env("HMMFLOW_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    let stdout = ok(&out);
    assert!(stdout.contains("\"aggregate\""));
    let (header, rows) = csv_rows(&dir.path().join("estimators.csv"));
    assert_eq!(header, ["n", "t", "cell", "alpha_phase", "eta_CR", "eta_CF", "eta_DF", "eta_APP", "eta_MOD_or_NA"]);
    assert_eq!(rows.len(), 5 * 81 * 2);
    assert!(rows.iter().all(|r| r[8] != "NA"));
    let summary = std::fs::read_to_string(dir.path().join("estimator_summary.txt")).unwrap();
    assert!(summary.contains("\"eta_MOD\""));
}

#[test]
fn adapt_run_writes_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let stdout = ok(&hmmflow(&["adapt-run", "-c", &cfg("checkerboard.cfg"), "-o", &out, "--generations", "1"]));
    assert_eq!(stdout.lines().count(), 1);
    let (header, rows) = csv_rows(&dir.path().join("adapt_trace.csv"));
    assert_eq!(header, ["cycle", "n_triangles", "n_cellsolves_new", "aggregate_before", "aggregate_after"]);
    assert_eq!(rows.len(), 1);
    assert!(rows[0][1].parse::<usize>().unwrap() > 128);
    assert!(rows[0][4].parse::<f64>().is_ok());

    let per_step = dir.path().join("step");
    let step_out = per_step.to_string_lossy().into_owned();
    ok(&hmmflow(&[
        "adapt-run",
        "-c",
        &cfg("checkerboard.cfg"),
        "-o",
        &step_out,
        "--cadence",
        "per-step",
        "--generations",
        "2",
    ]));
    let (_, rows) = csv_rows(&per_step.join("adapt_trace.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[4] == "NA"));
    assert!(per_step.join("adapted_state.vtk").exists());
}

#[test]
fn exit_codes_separate_config_and_numeric_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = hmmflow(&["run", "-c", "/definitely/not/here.cfg"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    assert_eq!(hmmflow(&["run", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(hmmflow(&["frobnicate"]).status.code(), Some(2));

    let bad = dir.path().join("bad.cfg");
    let text = std::fs::read_to_string(configs().join("layered.cfg")).unwrap();
    std::fs::write(&bad, text.replace("initial_saturation = 0.2", "initial_saturation = 1.5")).unwrap();
    let out = hmmflow(&["run", "-c", &bad.to_string_lossy(), "-o", &dir.path().to_string_lossy()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("(A7)"));

    let stuck = dir.path().join("stuck.cfg");
    std::fs::write(&stuck, format!("{text}\n[solver]\nnewton_max_iter = 0\nmax_halvings = 0\n")).unwrap();
    let out = hmmflow(&["run", "-c", &stuck.to_string_lossy(), "-o", &dir.path().to_string_lossy()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
