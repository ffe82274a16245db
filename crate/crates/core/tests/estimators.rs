#![allow(clippy::needless_range_loop)]

use hmmflow::constitutive::{FluidModel, FluidParams};
use hmmflow::estimators::{
    coarse_residual_indicator, estimate, initial_term, step_indicators, CellIndicators, EstimatorOptions,
    EstimatorReport, MicroIndicators, StepIndicators,
};
use hmmflow::fluxrecon::reconstruct;
use hmmflow::macrofv::{run, FaceTensors, FlowData, Formulation, FvScheme, RunOptions, State, TimeGrid};
use hmmflow::mesh::{CoarseMesh, DualMesh, Rect};
use hmmflow::microcell::{Coefficient, MicroConfig, Upscaler};
use hmmflow::{Error, Tensor2};
use rand::{Rng, SeedableRng};

fn irregular_mesh() -> CoarseMesh {
    let m = CoarseMesh::build_structured(4, 4, Rect::UNIT).unwrap();
    m.refine(&[5, 6, 9].into_iter().collect()).unwrap()
}

fn upscaled(field: Coefficient, cfg: MicroConfig, oracle: Option<Tensor2>, mesh: &CoarseMesh) -> MicroIndicators {
    let up = Upscaler::new(field, cfg).unwrap().with_oracle(oracle);
    let tensors = up.tensor_field(mesh).unwrap();
    let disc = up.discrepancies(mesh, &tensors).unwrap();
    MicroIndicators::from_field(&tensors, &disc).unwrap()
}

fn linear_state(mesh: &CoarseMesh, t: f64, s: f64, grad: [f64; 2]) -> State {
    State {
        t,
        formulation: Formulation::Kirchhoff,
        s: vec![s; mesh.n_vertices()],
        p: mesh.vertices().iter().map(|x| grad[0] * x[0] + grad[1] * x[1]).collect(),
    }
}

#[test]
fn every_family_vanishes_at_equilibrium() {
    let mesh = irregular_mesh();
    let dual = DualMesh::build(&mesh).unwrap();
    let k = Tensor2::iso(3.0);
    let micro = upscaled(Coefficient::Constant(k), MicroConfig::new(0.1, 0.1, 4).unwrap(), Some(k), &mesh);
    let model = FluidModel::new(FluidParams::default()).unwrap();
    let scheme = FvScheme::new(&mesh, &dual, &FaceTensors::from_cells(&dual, &micro.tensors).unwrap(), &model).unwrap();
    let data = FlowData::equilibrium(0.4, 2.0);
    for form in [Formulation::Kirchhoff, Formulation::Phases] {
        let opts = RunOptions { formulation: form, ..Default::default() };
        let traj = run(&scheme, &data, &TimeGrid::uniform(0.0, 1.0, 3).unwrap(), &opts).unwrap();
        let report = estimate(&scheme, &micro, &data, &traj, &EstimatorOptions::default()).unwrap();
        assert_eq!(report.steps.len(), 3);
        for step in &report.steps {
            for c in &step.cells {
                assert_eq!([c.cr, c.cf, c.df, c.app], [[0.0; 2]; 4], "{form} cell {}", c.cell);
                assert_eq!(c.modeling, Some([0.0; 2]));
            }
        }
        assert_eq!(report.initial, 0.0);
        assert_eq!(report.aggregate().unwrap(), 0.0);
        assert_eq!(report.aggregate_with_modeling().unwrap(), Some(0.0));
    }
}

/// Layered `{1, 4}` medium with period 1 on a 2×2 mesh: every vertex sees the
/// layers aligned with the two-by-two torus.
fn layered_setup() -> (CoarseMesh, DualMesh, MicroIndicators) {
    let mesh = CoarseMesh::build_structured(2, 2, Rect::UNIT).unwrap();
    let dual = DualMesh::build(&mesh).unwrap();
    let field = Coefficient::Layered { wave: [1.0, 0.0], values: [1.0, 4.0], period: 1.0, fraction: 0.5 };
    let micro = upscaled(field, MicroConfig::new(1.0, 1.0, 2).unwrap(), None, &mesh);
    (mesh, dual, micro)
}

#[test]
fn fine_scale_and_approximation_indicators_match_hand_products() {
    let (mesh, dual, micro) = layered_setup();
    assert_eq!(micro.alpha, 1.0);
    let model = FluidModel::new(FluidParams::default()).unwrap();
    let scheme = FvScheme::new(&mesh, &dual, &FaceTensors::from_cells(&dual, &micro.tensors).unwrap(), &model).unwrap();
    let s0 = 0.3;
    let prev = linear_state(&mesh, 0.0, s0, [1.0, 0.0]);
    let state = linear_state(&mesh, 0.5, s0, [1.0, 0.0]);
    let rec = reconstruct(&scheme, &state, &prev, 1e-10).unwrap();
    let rows = step_indicators(&scheme, &micro, &prev, &state, &rec).unwrap();
    let centre = 4;
    assert_eq!(mesh.vertices()[centre], [0.5, 0.5]);
    let area = dual.cells[centre].area;
    assert!((area - 0.25).abs() < 1e-15);
    let mob = model.mobility(s0).unwrap();
    // ‖V‖_{L²(D)} = |V| |D|^{1/2}; α = α_D = 1, β_D = 4
    let v_norm = [mob.w * area.sqrt(), mob.total * area.sqrt()];
    let m = 3.0 * 5f64.powf(0.25);
    let sup = 21.24f64.sqrt();
    let row = &rows[centre];
    for a in 0..2 {
        let cf = 4.0 * v_norm[a] * m;
        let app = 4.0 * v_norm[a] * sup;
        assert!((row.cf[a] - cf).abs() < 1e-12 * cf, "{} vs {cf}", row.cf[a]);
        assert!((row.app[a] - app).abs() < 1e-12 * app, "{} vs {app}", row.app[a]);
    }
    assert_eq!(row.modeling, None);
}

#[test]
fn diffusive_flux_indicator_vanishes_for_linear_flow() {
    let mesh = irregular_mesh();
    let dual = DualMesh::build(&mesh).unwrap();
    let k = Tensor2::new(2.0, 0.3, 1.0);
    let micro = MicroIndicators::exact(vec![k; mesh.n_vertices()], Some(k));
    let model = FluidModel::new(FluidParams::default()).unwrap();
    let scheme = FvScheme::new(&mesh, &dual, &FaceTensors::uniform(&dual, k), &model).unwrap();
    let prev = linear_state(&mesh, 0.0, 0.6, [0.7, -1.2]);
    let state = linear_state(&mesh, 0.1, 0.6, [0.7, -1.2]);
    let rec = reconstruct(&scheme, &state, &prev, 1e-10).unwrap();
    for row in step_indicators(&scheme, &micro, &prev, &state, &rec).unwrap() {
        assert!(row.df.iter().all(|&d| d < 1e-12), "cell {}: {:?}", row.cell, row.df);
        assert!(row.cr[1] < 1e-10 && row.cf == [0.0; 2] && row.app == [0.0; 2]);
        assert_eq!(row.modeling, Some([0.0; 2]));
    }
}

#[test]
fn diffusive_flux_indicator_decays_linearly() {
    let model = FluidModel::new(FluidParams::default()).unwrap();
    let data = FlowData::new(|_| 0.5, |_, _| 0.5, |x, _| x[0].exp() * x[1].cos());
    let k = Tensor2::iso(1.0);
    let mut mesh = irregular_mesh();
    let mut totals = Vec::new();
    for _ in 0..3 {
        let dual = DualMesh::build(&mesh).unwrap();
        let scheme = FvScheme::new(&mesh, &dual, &FaceTensors::uniform(&dual, k), &model).unwrap();
        let micro = MicroIndicators::exact(vec![k; mesh.n_vertices()], None);
        let traj = run(&scheme, &data, &TimeGrid::uniform(0.0, 0.1, 1).unwrap(), &RunOptions::default()).unwrap();
        let rec = reconstruct(&scheme, &traj.states[1], &traj.states[0], 1e-9).unwrap();
        let rows = step_indicators(&scheme, &micro, &traj.states[0], &traj.states[1], &rec).unwrap();
        totals.push(rows.iter().map(|r| r.df[1] * r.df[1]).sum::<f64>().sqrt());
        mesh = mesh.refine_uniform().unwrap();
    }
    for w in totals.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!((0.8..1.3).contains(&rate), "{totals:?}");
    }
}

#[test]
fn coarse_residual_indicator_is_linear_in_h() {
    let residual = |x: [f64; 2]| 1.0 + (std::f64::consts::PI * x[0]).sin() * (2.0 * x[1]).cos();
    let mut totals = Vec::new();
    for n in [8, 16, 32] {
        let mesh = CoarseMesh::build_structured(n, n, Rect::UNIT).unwrap();
        let dual = DualMesh::build(&mesh).unwrap();
        let sum: f64 = (0..dual.n_cells()).map(|c| coarse_residual_indicator(&dual, c, 2.0, residual).powi(2)).sum();
        totals.push(sum.sqrt());
    }
    for w in totals.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio - 2.0).abs() < 0.1, "{totals:?}");
    }
}

#[test]
fn modeling_indicator_tracks_tensor_error() {
    let mesh = CoarseMesh::build_structured(4, 4, Rect::UNIT).unwrap();
    let dual = DualMesh::build(&mesh).unwrap();
    let model = FluidModel::new(FluidParams::default()).unwrap();
    let data = FlowData::new(|_| 0.5, |_, _| 0.5, |x, _| x[0] + x[1]);
    let oracle = Tensor2::diag(1.6, 2.5);
    let field = Coefficient::Layered { wave: [1.0, 0.0], values: [1.0, 4.0], period: 0.3, fraction: 0.5 };
    let mut values = Vec::new();
    for m in [8, 16, 32] {
        let micro = upscaled(field.clone(), MicroConfig::new(0.3, 0.3, m).unwrap(), Some(oracle), &mesh);
        let scheme =
            FvScheme::new(&mesh, &dual, &FaceTensors::from_cells(&dual, &micro.tensors).unwrap(), &model).unwrap();
        let traj = run(&scheme, &data, &TimeGrid::uniform(0.0, 0.1, 1).unwrap(), &RunOptions::default()).unwrap();
        let (prev, state) = (&traj.states[0], &traj.states[1]);
        let rec = reconstruct(&scheme, state, prev, 1e-8).unwrap();
        let rows = step_indicators(&scheme, &micro, prev, state, &rec).unwrap();
        values.push(rows.iter().map(|r| r.modeling.unwrap()[1].powi(2)).sum::<f64>().sqrt());
        // an oracle equal to the tensors gives exactly zero
        let own = MicroIndicators { oracle: Some(micro.tensors[5]), ..micro.clone() };
        let row = &step_indicators(&scheme, &own, prev, state, &rec).unwrap()[5];
        assert_eq!(row.modeling, Some([0.0; 2]));
    }
    assert!(values[0] > 0.0);
    assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
}

fn synthetic_report(rng: &mut rand::rngs::StdRng, steps: usize, cells: usize, modeling: bool) -> EstimatorReport {
    let mut t = 0.25;
    let mut out = Vec::new();
    for n in 1..=steps {
        t += rng.random_range(0.01..0.5);
        let cells = (0..cells)
            .map(|cell| {
                let mut v = || [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
                CellIndicators { cell, cr: v(), cf: v(), df: v(), app: v(), modeling: modeling.then(v) }
            })
            .collect();
        out.push(StepIndicators { n, t, cells });
    }
    EstimatorReport { t0: 0.25, alpha: 0.7, initial: rng.random_range(0.0..1.0), steps: out }
}

#[test]
fn aggregate_matches_brute_force_summation() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    for modeling in [false, true] {
        let report = synthetic_report(&mut rng, 4, 9, modeling);
        let mut expected = report.initial;
        let mut times = vec![report.t0];
        times.extend(report.steps.iter().map(|s| s.t));
        let mut mod_sum = 0.0;
        for (k, step) in report.steps.iter().enumerate() {
            let dt = times[k + 1] - times[k];
            for c in &step.cells {
                for a in 0..2 {
                    expected += dt * (c.cr[a] + c.cf[a] + c.df[a] + c.app[a]).powi(2);
                    if let Some(m) = c.modeling {
                        mod_sum += dt * m[a] * m[a];
                    }
                }
            }
        }
        let got = report.aggregate().unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected);
        match report.aggregate_with_modeling().unwrap() {
            Some(v) => assert!(modeling && (v - expected - mod_sum).abs() <= 1e-12 * v),
            None => assert!(!modeling),
        }
        let per_cell: f64 = report.cell_totals().unwrap().iter().sum();
        assert!((per_cell + report.initial - expected).abs() <= 1e-12 * expected);
    }
}

#[test]
fn single_indicator_gives_its_square() {
    let mut cell = CellIndicators::zero(0);
    cell.cr[0] = 0.3;
    let report = EstimatorReport {
        t0: 0.0,
        alpha: 1.0,
        initial: 0.0,
        steps: vec![StepIndicators { n: 1, t: 1.0, cells: vec![cell] }],
    };
    assert_eq!(report.aggregate().unwrap(), 0.3 * 0.3);
}

#[test]
fn csv_round_trip_reproduces_the_aggregate() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(11);
    for modeling in [false, true] {
        let report = synthetic_report(&mut rng, 3, 5, modeling);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let summary = report.summary().unwrap();
        let (t0, alpha, initial) = EstimatorReport::parse_summary(&summary).unwrap();
        let back = EstimatorReport::read_csv(buf.as_slice(), t0, alpha, initial).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.aggregate().unwrap().to_bits(), report.aggregate().unwrap().to_bits());
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 5 * 2);
        assert_eq!(text.lines().next().unwrap(), "n,t,cell,alpha_phase,eta_CR,eta_CF,eta_DF,eta_APP,eta_MOD_or_NA");
    }
}

#[test]
fn empty_report_writes_header_only() {
    let report = EstimatorReport { t0: 0.0, alpha: 1.0, initial: 0.0, steps: Vec::new() };
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    assert_eq!(report.aggregate().unwrap(), 0.0);
}

#[test]
fn missing_cells_are_reported() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(3);
    let mut report = synthetic_report(&mut rng, 2, 4, false);
    report.steps[1].cells.remove(2);
    assert!(matches!(report.aggregate(), Err(Error::MissingTensor(2))));
    report.steps[1].cells.clear();
    assert!(matches!(report.aggregate(), Err(Error::Dimension(_))));
}

#[test]
fn initial_term_is_bounded_by_the_data_mismatch() {
    let mesh = CoarseMesh::build_structured(4, 4, Rect::UNIT).unwrap();
    let k = Tensor2::iso(2.0);
    let micro = MicroIndicators::exact(vec![k; mesh.n_vertices()], None);
    let s0 = |x: [f64; 2]| 0.5 + 0.3 * (6.0 * x[0]).sin() * (5.0 * x[1]).sin();
    let data = FlowData::new(s0, move |x, _| s0(x), |_, _| 0.0);
    let initial = State {
        t: 0.0,
        formulation: Formulation::Kirchhoff,
        s: mesh.vertices().iter().map(|&x| s0(x)).collect(),
        p: vec![0.0; mesh.n_vertices()],
    };
    let opts = EstimatorOptions { initial_refinements: 2, ..Default::default() };
    let term = initial_term(&mesh, &micro, &data, &initial, &opts).unwrap();
    // brute-force ‖S_H − S₀‖² by a fine midpoint sum; Friedrichs on the unit square
    let n = 400;
    let locator = hmmflow::mesh::PointLocator::new(&mesh);
    let mut l2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
            let d = locator.eval(&initial.s, x).unwrap() - s0(x);
            l2 += d * d / (n * n) as f64;
        }
    }
    let bound = l2 / (2.0 * std::f64::consts::PI.powi(2) * 2.0);
    assert!(term > 0.0 && term <= bound, "{term} vs {bound}");
    let exact = State { s: vec![0.5; mesh.n_vertices()], ..initial };
    let flat = FlowData::equilibrium(0.5, 0.0);
    assert_eq!(initial_term(&mesh, &micro, &flat, &exact, &opts).unwrap(), 0.0);
}
