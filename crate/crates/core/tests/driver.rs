use std::path::Path;

use hmmflow::driver::{
    compare, fine_mesh, fine_reference, grid_states, mesh_width, modeling_study, simulate, solve_fine, tensor_rows,
    write_file, write_run_log, write_tensor_csv, write_vtk_fluxes, write_vtk_state, write_vtk_tensors, OracleConfig,
    SimConfig, Upscaling, OUTPUT_DIR_ENV,
};
use hmmflow::estimators::EstimatorReport;
use hmmflow::fluxrecon::reconstruct;
use hmmflow::macrofv::{FaceTensors, Formulation, FvScheme};
use hmmflow::mesh::{CoarseMesh, DualMesh, Rect};
use hmmflow::microcell::Coefficient;
use hmmflow::{Error, Tensor2};

const BASE: &str = "
[domain]
nx = 4
ny = 4

[coefficient]
kind = constant
value = 3

[micro]
epsilon = 0.25
m = 8

[data]
initial_saturation = 0.4
pressure = 1.0, 0.0, 0.0

[time]
t_end = 0.1
steps = 2
";

/// Set `key = value` in `[section]`, adding either when missing.
fn set(text: &str, section: &str, key: &str, value: &str) -> String {
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let header = format!("[{section}]");
    let Some(start) = lines.iter().position(|l| l.trim() == header) else {
        return format!("{text}\n{header}\n{key} = {value}\n");
    };
    let end = lines[start + 1..].iter().position(|l| l.starts_with('[')).map_or(lines.len(), |i| start + 1 + i);
    let line = format!("{key} = {value}");
    match (start + 1..end).find(|&i| lines[i].split('=').next().is_some_and(|k| k.trim() == key)) {
        Some(i) => lines[i] = line,
        None => lines.insert(start + 1, line),
    }
    lines.join("\n") + "\n"
}

/// `BASE` with the sections and keys of `extra` overriding or added.
fn with(extra: &str) -> String {
    let mut text = BASE.to_string();
    let mut section = String::new();
    for line in extra.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.to_string();
        } else {
            let (k, v) = line.split_once('=').expect("key = value");
            text = set(&text, &section, k.trim(), v.trim());
        }
    }
    text
}

fn parse(text: &str) -> hmmflow::Result<SimConfig> {
    SimConfig::parse(text, None)
}

const DISPLACEMENT: &str = "
[domain]
nx = 8
ny = 8

[coefficient]
kind = layered
values = 1, 4
wave = 1, 0

[micro]
epsilon = 0.25
m = 16

[fluids]
capillary = brooks-corey
entry = 0.5
lambda = 2

[data]
initial_saturation = 0.2
inflow_side = left
inflow_saturation = 0.85
pressure = 2.0, -2.0, 0.0

[time]
t_end = 0.03
steps = 3
";

#[test]
fn parses_defaults_and_overrides() {
    let cfg = parse(DISPLACEMENT).unwrap();
    assert_eq!((cfg.domain.nx, cfg.domain.ny), (8, 8));
    assert_eq!(cfg.micro.kappa, 0.25);
    assert_eq!(cfg.micro.m, 16);
    assert_eq!(cfg.upscaling, Upscaling::Cells);
    assert_eq!(cfg.oracle, OracleConfig::None);
    assert_eq!(cfg.run.formulation, Formulation::Kirchhoff);
    assert!(matches!(cfg.coefficient, Coefficient::Layered { period, .. } if period == 0.25));
    let data = cfg.flow_data();
    assert_eq!((data.boundary_saturation)([0.0, 0.5], 0.0), 0.85);
    assert_eq!((data.boundary_saturation)([1.0, 0.5], 0.0), 0.2);
    assert_eq!((data.boundary_pressure)([0.5, 0.3], 0.0), 1.0);

    let phases = parse(&format!("{DISPLACEMENT}\n[solver]\nformulation = phases\nnewton_tol = 1e-10\n")).unwrap();
    assert_eq!(phases.run.formulation, Formulation::Phases);
    assert_eq!(phases.run.newton.tol, 1e-10);
}

#[test]
fn malformed_configurations_are_config_errors() {
    let cases = [
        with("[domain]\nbogus = 1\n"),
        with("[nonsense]\nx = 1\n"),
        "[domain]\nnx = 4\n".to_string(),
        with("[micro]\nkappa = 0.1\n"),
        with("[micro]\nm = 1\n"),
        with("[domain]\nnx = 0\n"),
        with("[solver]\nformulation = sideways\n"),
        with("[coefficient]\nkind = plaid\n"),
        with("[time]\nsteps = zero\n"),
        with("[adapt]\ntheta = 1.5\n"),
        with("[oracle]\nkind = analytic\n[coefficient]\nkind = raster\nfile = missing.csv\n"),
        "[domain\nnx = 4".to_string(),
        format!("{BASE}\n[domain]\nnx = 5\n"),
    ];
    for text in &cases {
        let err = parse(text).expect_err(text);
        assert!(err.is_config() || matches!(err, Error::Csv { .. }), "{text}: {err}");
    }
}

#[test]
fn model_assumption_violations_are_named() {
    let cases = [
        ("[fluids]\nmu_w = 0\n", "(A1)"),
        ("[fluids]\nphi0 = 0\n", "(A3)"),
        ("[data]\nboundary_saturation = 1.5\n", "(A6)"),
        ("[data]\ninflow_side = left\ninflow_saturation = -0.1\n", "(A6)"),
        ("[coefficient]\nvalue = -1\n", "(A2)"),
    ];
    for (extra, name) in cases {
        let err = parse(&with(extra)).expect_err(extra);
        assert!(err.is_config());
        assert!(err.to_string().contains(name), "{extra}: {err}");
    }
    let err = parse(&BASE.replace("initial_saturation = 0.4", "initial_saturation = 1.2")).unwrap_err();
    assert!(err.to_string().contains("(A7)"), "{err}");
}

#[test]
fn kappa_must_dominate_epsilon() {
    let err = parse(&with("[micro]\nkappa = 0.1\n")).unwrap_err();
    assert!(matches!(err, Error::MicroConfig(_)), "{err}");
    let ok = parse(&BASE.replace("epsilon = 0.25", "epsilon = 0.25\nkappa = 0.5\nkappa0 = 0.25")).unwrap();
    assert_eq!((ok.micro.kappa, ok.micro.kappa0), (0.5, 0.25));
    let scaled = ok.with_epsilon(0.125).unwrap();
    assert_eq!((scaled.micro.epsilon, scaled.micro.kappa, scaled.micro.kappa0), (0.125, 0.25, 0.125));
}

#[test]
fn output_directory_follows_the_environment() {
    let cfg = parse(&with("[output]\ndir = from_config\n")).unwrap();
    std::env::remove_var(OUTPUT_DIR_ENV);
    assert_eq!(cfg.output_dir(), Path::new("from_config"));
    std::env::set_var(OUTPUT_DIR_ENV, "/tmp/from_env");
    assert_eq!(cfg.output_dir(), Path::new("/tmp/from_env"));
    std::env::remove_var(OUTPUT_DIR_ENV);
}

#[test]
fn raster_files_resolve_next_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("k.csv"), "1,2\n3,4\n").unwrap();
    let text = with("[coefficient]\nkind = raster\nfile = k.csv\n").replace("value = 3\n", "");
    let path = dir.path().join("c.cfg");
    std::fs::write(&path, text).unwrap();
    let cfg = SimConfig::load(&path).unwrap();
    assert_eq!(cfg.coefficient.eval([0.1, 0.1]).unwrap(), Tensor2::iso(1.0));
    assert_eq!(cfg.coefficient.eval([0.9, 0.9]).unwrap(), Tensor2::iso(4.0));
}

fn section_count(text: &str, keyword: &str) -> usize {
    let line = text.lines().find(|l| l.starts_with(keyword)).unwrap_or_else(|| panic!("no {keyword}"));
    line.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn vtk_of_a_four_vertex_mesh() {
    let cfg = parse(&with("[domain]\nnx = 1\nny = 1\n")).unwrap();
    let source = cfg.tensor_source().unwrap();
    let sim = simulate(&cfg, &source).unwrap();
    assert_eq!(sim.mesh.n_vertices(), 4);
    let mut buf = Vec::new();
    write_vtk_state(&mut buf, &sim.mesh, &sim.model, sim.trajectory.last()).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("# vtk DataFile Version 3.0\n"));
    assert!(text.contains("ASCII\nDATASET UNSTRUCTURED_GRID\n"));
    assert_eq!(section_count(&text, "POINTS"), 4);
    assert_eq!(section_count(&text, "CELLS"), 2);
    assert_eq!(section_count(&text, "CELL_TYPES"), 2);
    assert_eq!(section_count(&text, "POINT_DATA"), 4);
    for name in ["S", "P", "s_n", "p_n"] {
        assert!(text.contains(&format!("SCALARS {name} double 1")));
    }

    let rows = tensor_rows(&sim.mesh, &sim.field);
    let mut buf = Vec::new();
    write_vtk_tensors(&mut buf, &sim.dual, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(section_count(&text, "CELLS"), 4);
    assert_eq!(section_count(&text, "CELL_DATA"), 4);
    assert!(text.contains("SCALARS m_indicator double 1"));
}

#[test]
fn flux_vtk_has_one_vector_per_triangle() {
    let cfg = parse(DISPLACEMENT).unwrap();
    let source = cfg.tensor_source().unwrap();
    let sim = simulate(&cfg, &source).unwrap();
    let s = &sim.trajectory.states;
    let rec = reconstruct(&sim.scheme().unwrap(), &s[1], &s[0], 1e-8).unwrap();
    let mut buf = Vec::new();
    write_vtk_fluxes(&mut buf, &sim.mesh, &rec).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(section_count(&text, "CELL_DATA"), sim.mesh.n_triangles());
    let start = text.find("VECTORS u_s double\n").unwrap();
    let lines = text[start..].lines().skip(1).take_while(|l| !l.starts_with("VECTORS")).count();
    assert_eq!(lines, sim.mesh.n_triangles());
}

#[test]
fn csv_outputs_round_trip_and_repeat_bytewise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse(DISPLACEMENT).unwrap();
    let produce = |tag: &str| -> (Vec<u8>, Vec<u8>, Vec<u8>, f64) {
        let source = cfg.tensor_source().unwrap();
        let sim = simulate(&cfg, &source).unwrap();
        let report = sim.estimate(&source, &cfg).unwrap();
        let rows = tensor_rows(&sim.mesh, &sim.field);
        let (t, l, e) = (
            dir.path().join(format!("t{tag}.csv")),
            dir.path().join(format!("l{tag}.csv")),
            dir.path().join(format!("e{tag}.csv")),
        );
        write_file(&t, |w| write_tensor_csv(w, &rows)).unwrap();
        write_file(&l, |w| write_run_log(w, &sim.trajectory.log)).unwrap();
        report.save_csv(&e).unwrap();
        std::fs::write(dir.path().join(format!("s{tag}.txt")), report.summary().unwrap()).unwrap();
        let read = |p: &Path| std::fs::read(p).unwrap();
        (read(&t), read(&l), read(&e), report.aggregate().unwrap())
    };
    let a = produce("a");
    let b = produce("b");
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);

    let summary = std::fs::read_to_string(dir.path().join("sa.txt")).unwrap();
    let (t0, alpha, initial) = EstimatorReport::parse_summary(&summary).unwrap();
    let back = EstimatorReport::read_csv(a.2.as_slice(), t0, alpha, initial).unwrap();
    assert_eq!(back.aggregate().unwrap().to_bits(), a.3.to_bits());

    let header = String::from_utf8(a.0.clone()).unwrap();
    assert!(header.starts_with("x,y,K11,K12,K22,alpha_loc,beta_loc,m_indicator\n"));
    let log = String::from_utf8(a.1).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn writer_failures_carry_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let target = blocker.join("nested.csv");
    let err = write_file(&target, |w| w.write_all(b"x")).unwrap_err();
    match err {
        Error::Io { path, .. } => assert!(path.starts_with(&blocker)),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn fine_mesh_resolves_epsilon_within_budget() {
    let coarse = CoarseMesh::build_structured(4, 4, Rect::UNIT).unwrap();
    let (mesh, r) = fine_mesh(&coarse, 0.25, 8.0, 10_000).unwrap();
    assert_eq!(r, 3);
    assert!(mesh_width(&mesh) <= 0.25 / 8.0 + 1e-15);
    assert_eq!(mesh.n_vertices(), 33 * 33);
    let err = fine_mesh(&coarse, 0.25, 8.0, 500).unwrap_err();
    assert!(matches!(err, Error::DofBudget { budget: 500, .. }));
    assert!(err.is_config());
    let (same, r0) = fine_mesh(&coarse, 2.0, 8.0, 10_000).unwrap();
    assert_eq!((same, r0), (coarse, 0));
}

#[test]
fn constant_coefficient_fine_run_matches_hmm() {
    // coarse mesh already resolves ε, so both runs share the mesh
    let text = DISPLACEMENT
        .replace("kind = layered\nvalues = 1, 4\nwave = 1, 0", "kind = constant\nvalue = 3")
        .replace("epsilon = 0.25", "epsilon = 1.0")
        .replace("nx = 8\nny = 8", "nx = 8\nny = 8\n[oracle]\nkind = fine\nresolution = 8");
    let cfg = parse(&text).unwrap();
    let source = cfg.tensor_source().unwrap();
    let hmm = simulate(&cfg, &source).unwrap();
    let fine = fine_reference(&cfg).unwrap();
    assert_eq!(fine.refinements, 0);
    let grid = cfg.time_grid().unwrap();
    let (a, b) = (grid_states(&hmm.trajectory, &grid).unwrap(), grid_states(&fine.trajectory, &grid).unwrap());
    for (x, y) in a.iter().zip(&b) {
        for (u, v) in x.s.iter().zip(&y.s).chain(x.p.iter().zip(&y.p)) {
            assert!((u - v).abs() < 1e-8, "{u} vs {v}");
        }
    }
    let errors = compare(
        &hmm.mesh,
        &hmm.trajectory,
        &fine.mesh,
        &fine.trajectory,
        &grid,
        &hmm.model,
        Tensor2::iso(3.0),
        &cfg.estimator.linear,
    )
    .unwrap();
    assert!(errors.combined() < 1e-14 && errors.saturation_l2 < 1e-14, "{errors:?}");
}

#[test]
fn fine_run_is_conservative() {
    let cfg = parse(DISPLACEMENT).unwrap();
    let coarse = CoarseMesh::build_structured(4, 4, Rect::UNIT).unwrap();
    let (mesh, _) = fine_mesh(&coarse, 0.25, 4.0, 100_000).unwrap();
    let model = cfg.model().unwrap();
    let traj =
        solve_fine(&mesh, &cfg.coefficient, &model, &cfg.flow_data(), &cfg.time_grid().unwrap(), &cfg.run).unwrap();
    let dual = DualMesh::build(&mesh).unwrap();
    let tensors = hmmflow::driver::triangle_tensors(&mesh, &cfg.coefficient).unwrap();
    let scheme = FvScheme::new(&mesh, &dual, &FaceTensors::from_triangles(&dual, &tensors).unwrap(), &model).unwrap();
    for w in traj.states.windows(2) {
        let r = scheme.scaled_residual(&w[1], &w[0]).unwrap();
        assert!(r[0] <= 1e-9 && r[1] <= 1e-9, "{r:?}");
    }
    assert!(traj.last().s.iter().any(|&s| s > 0.3));
}

#[test]
fn modeling_study_vanishes_for_aligned_layers_and_decays_otherwise() {
    let aligned = parse(&DISPLACEMENT.replace("m = 16", "m = 16\n[study]\nm_values = 8, 16, 32")).unwrap();
    for row in modeling_study(&aligned).unwrap() {
        assert!(row.max_error <= 1e-10, "{row:?}");
    }
    let rotated = parse(
        &DISPLACEMENT.replace("wave = 1, 0", "wave = 1, 2").replace("m = 16", "m = 16\n[study]\nm_values = 8, 16, 32"),
    )
    .unwrap();
    let rows = modeling_study(&rotated).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].max_error < w[0].max_error, "{rows:?}");
    }
    let raster = parse(&with("[study]\nm_values = 8\n")).unwrap();
    assert!(modeling_study(&raster).is_ok());
}

#[test]
fn exact_upscaling_uses_the_closed_form() {
    let cfg = parse(&DISPLACEMENT.replace("m = 16", "m = 16\nupscaling = exact")).unwrap();
    let source = cfg.tensor_source().unwrap();
    let field = source.tensor_field(&cfg.mesh().unwrap()).unwrap();
    assert!(field.tensors.iter().all(|k| *k == Tensor2::diag(1.6, 2.5)));
    assert_eq!(source.solves(), 0);
}
