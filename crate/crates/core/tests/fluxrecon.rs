use std::collections::BTreeSet;

use hmmflow::constitutive::{FluidModel, FluidParams, RelPerm};
use hmmflow::fluxrecon::{reconstruct, FluxField, SubTriangle};
use hmmflow::geometry::{self, p1_gradients};
use hmmflow::macrofv::{run, FaceTensors, FlowData, Formulation, FvScheme, RunOptions, State, TimeGrid};
use hmmflow::mesh::{CoarseMesh, DualMesh, Rect};
use hmmflow::{Error, Tensor2};

fn irregular_mesh() -> CoarseMesh {
    let m = CoarseMesh::build_structured(4, 4, Rect::UNIT).unwrap();
    let marked: BTreeSet<usize> = [5, 6, 9].into_iter().collect();
    m.refine(&marked).unwrap()
}

#[test]
fn equilibrium_gives_zero_fluxes() {
    let mesh = irregular_mesh();
    let dual = DualMesh::build(&mesh).unwrap();
    let model = FluidModel::new(FluidParams::default()).unwrap();
    let scheme = FvScheme::new(&mesh, &dual, &FaceTensors::uniform(&dual, Tensor2::iso(1.0)), &model).unwrap();
    let n = mesh.n_vertices();
    let prev = State { t: 0.0, formulation: Formulation::Kirchhoff, s: vec![0.3; n], p: vec![1.0; n] };
    let state = State { t: 0.1, ..prev.clone() };
    let rec = reconstruct(&scheme, &state, &prev, 1e-9).unwrap();
    assert!(rec.wetting.pieces.iter().chain(&rec.total.pieces).all(|p| p.flux == [0.0; 3]));
}

#[test]
fn conservation_identities_hold_on_converged_steps() {
    let mesh = irregular_mesh();
    let dual = DualMesh::build(&mesh).unwrap();
    let model = FluidModel::new(FluidParams { gravity: [0.0, -1.0], rho_w: 1.5, ..Default::default() }).unwrap();
    let scheme =
        FvScheme::new(&mesh, &dual, &FaceTensors::uniform(&dual, Tensor2::new(1.0, 0.3, 2.0)), &model).unwrap();
    let data = FlowData::new(|_| 0.3, |x, _| if x[0] <= 0.0 { 0.8 } else { 0.3 }, |x, _| 2.0 * (1.0 - x[0]));
    for form in [Formulation::Kirchhoff, Formulation::Phases] {
        let opts = RunOptions { formulation: form, ..Default::default() };
        let traj = run(&scheme, &data, &TimeGrid::uniform(0.0, 0.1, 2).unwrap(), &opts).unwrap();
        for w in traj.states.windows(2) {
            let rec = reconstruct(&scheme, &w[1], &w[0], 1e-9).unwrap();
            let dt = w[1].t - w[0].t;
            let div_s = rec.wetting.cell_divergence(mesh.n_vertices());
            let div_p = rec.total.cell_divergence(mesh.n_vertices());
            let flux_scale = rec.wetting.pieces.iter().map(|p| p.flux[0].abs()).fold(0.0, f64::max);
            for c in dual.cells.iter().filter(|c| c.interior) {
                let storage = model.phi0() * c.area * (w[1].s[c.vertex] - w[0].s[c.vertex]) / dt;
                assert!((storage + div_s[c.vertex]).abs() < 1e-10 * flux_scale.max(1.0), "{form} cell {}", c.vertex);
                assert!(div_p[c.vertex].abs() < 1e-10 * flux_scale.max(1.0));
            }
            // piecewise divergence is the cell mean
            for field in [&rec.wetting, &rec.total] {
                let div = field.cell_divergence(mesh.n_vertices());
                for p in &field.pieces {
                    let mean = div[p.vertex] / dual.cells[p.vertex].area;
                    assert!((p.divergence() - mean).abs() < 1e-9 * flux_scale.max(1.0) / p.area.sqrt());
                }
            }
            // normal continuity: eval from both sides of each dual face
            let fl = scheme.face_fluxes(&w[1]);
            for (f, flux) in dual.faces.iter().zip(&fl.interior) {
                let mid = f.midpoint();
                let u = rec.wetting.eval(f.triangle, mid).unwrap();
                assert!((geometry::dot(u, f.normal) * f.length - flux[0]).abs() < 1e-9 * flux_scale.max(1.0));
            }
        }
    }
}

#[test]
fn central_vertex_uses_scheme_fluxes() {
    let mesh = CoarseMesh::build_structured(4, 4, Rect::UNIT).unwrap();
    let dual = DualMesh::build(&mesh).unwrap();
    let model = FluidModel::new(FluidParams::default()).unwrap();
    let scheme = FvScheme::new(&mesh, &dual, &FaceTensors::uniform(&dual, Tensor2::iso(1.0)), &model).unwrap();
    let data = FlowData::new(|x| 0.2 + 0.1 * x[1], |x, _| 0.2 + 0.1 * x[1], |x, _| x[0] * x[0] - x[1] * x[1]);
    let traj = run(&scheme, &data, &TimeGrid::uniform(0.0, 0.1, 1).unwrap(), &RunOptions::default()).unwrap();
    let rec = reconstruct(&scheme, &traj.states[1], &traj.states[0], 1e-9).unwrap();
    let fl = scheme.face_fluxes(&traj.states[1]);
    let centre = 2 * 5 + 2;
    let mut seen = 0;
    for (f, flux) in dual.faces.iter().zip(&fl.interior) {
        if f.a != centre && f.b != centre {
            continue;
        }
        let sign = if f.a == centre { 1.0 } else { -1.0 };
        let piece = rec
            .total
            .pieces
            .iter()
            .find(|p| p.vertex == centre && p.triangle == f.triangle && p.corners[1] == f.p)
            .unwrap();
        assert_eq!(piece.flux[0], sign * flux[1]);
        seen += 1;
    }
    assert_eq!(seen, 12);
    // the twelve pieces of the centre close up: internal fluxes cancel pairwise
    let total: f64 = rec.total.pieces.iter().filter(|p| p.vertex == centre).map(|p| p.flux[1] + p.flux[2]).sum();
    assert!(total.abs() < 1e-14);
}

#[test]
fn sub_triangle_reproduces_constants() {
    let corners = [[0.1, 0.2], [0.7, 0.25], [0.3, 0.9]];
    let v = [0.4, -1.3];
    let area = geometry::signed_area(&corners).abs();
    let centre = geometry::centroid(&corners);
    let mut flux = [0.0; 3];
    for i in 0..3 {
        let (p, q) = (corners[(i + 1) % 3], corners[(i + 2) % 3]);
        let e = geometry::sub(q, p);
        let mut n = [e[1], -e[0]];
        if geometry::dot(n, geometry::sub(p, centre)) < 0.0 {
            n = [-n[0], -n[1]];
        }
        flux[i] = geometry::dot(v, n);
    }
    let st = SubTriangle { triangle: 0, vertex: 0, corners, area, flux };
    let u = st.eval(centre);
    assert!((u[0] - v[0]).abs() < 1e-12 && (u[1] - v[1]).abs() < 1e-12);
    assert!(st.divergence().abs() < 1e-12);
    // divergence by central differences of the linear field
    let st = SubTriangle { flux: [0.3, -0.1, 0.5], ..st };
    let h = 1e-4;
    let dx = (st.eval([centre[0] + h, centre[1]])[0] - st.eval([centre[0] - h, centre[1]])[0]) / (2.0 * h);
    let dy = (st.eval([centre[0], centre[1] + h])[1] - st.eval([centre[0], centre[1] - h])[1]) / (2.0 * h);
    assert!((dx + dy - 0.7 / area).abs() < 1e-8);
}

#[test]
fn refuses_unconverged_states_and_foreign_points() {
    let mesh = CoarseMesh::build_structured(3, 3, Rect::UNIT).unwrap();
    let dual = DualMesh::build(&mesh).unwrap();
    let model = FluidModel::new(FluidParams::default()).unwrap();
    let scheme = FvScheme::new(&mesh, &dual, &FaceTensors::uniform(&dual, Tensor2::iso(1.0)), &model).unwrap();
    let n = mesh.n_vertices();
    let prev = State { t: 0.0, formulation: Formulation::Kirchhoff, s: vec![0.3; n], p: vec![0.0; n] };
    let mut state = State { t: 0.1, ..prev.clone() };
    state.s[5] = 0.6;
    assert!(matches!(reconstruct(&scheme, &state, &prev, 1e-9), Err(Error::UnconvergedState(_))));
    let zero = FluxField::zero(&mesh);
    assert_eq!(zero.eval(0, geometry::centroid(&mesh.triangle_points(0))).unwrap(), [0.0, 0.0]);
    assert!(matches!(zero.eval(0, [5.0, 5.0]), Err(Error::PointOutsideTriangle { .. })));
}

#[test]
fn single_phase_flux_error_decays_linearly() {
    // λ ≡ 1; harmonic boundary data
    let model =
        FluidModel::new(FluidParams { relperm: RelPerm::Corey { n_w: 1.0, n_n: 1.0 }, ..Default::default() }).unwrap();
    let data = FlowData::new(|_| 0.5, |_, _| 0.5, |x, _| (x[0]).exp() * (x[1]).cos());
    let k = Tensor2::iso(1.0);
    let mut errs = Vec::new();
    let mut mesh = irregular_mesh();
    for _ in 0..3 {
        let dual = DualMesh::build(&mesh).unwrap();
        let scheme = FvScheme::new(&mesh, &dual, &FaceTensors::uniform(&dual, k), &model).unwrap();
        let traj = run(&scheme, &data, &TimeGrid::uniform(0.0, 0.1, 1).unwrap(), &RunOptions::default()).unwrap();
        let rec = reconstruct(&scheme, &traj.states[1], &traj.states[0], 1e-9).unwrap();
        let p = &traj.states[1].p;
        let mut err2 = 0.0;
        for piece in &rec.total.pieces {
            let t = piece.triangle;
            let g = p1_gradients(&mesh.triangle_points(t));
            let tri = mesh.triangles()[t];
            let mut grad = [0.0; 2];
            for j in 0..3 {
                grad = geometry::add(grad, geometry::scale(g[j], p[tri[j]]));
            }
            let kg = k.apply(grad);
            for q in 0..3 {
                // edge-midpoint rule on the sub-triangle
                let x = geometry::midpoint(piece.corners[q], piece.corners[(q + 1) % 3]);
                let u = piece.eval(x);
                let d = geometry::add(kg, u);
                err2 += piece.area / 3.0 * geometry::dot(d, d);
            }
        }
        errs.push(err2.sqrt());
        mesh = mesh.refine_uniform().unwrap();
    }
    for w in errs.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(rate > 0.8, "{errs:?}");
    }
}

#[test]
fn linear_flow_is_reproduced_on_irregular_meshes() {
    let mesh = irregular_mesh().refine(&[0, 3, 17, 30].into_iter().collect()).unwrap();
    let dual = DualMesh::build(&mesh).unwrap();
    let model = FluidModel::new(FluidParams::default()).unwrap();
    let k = Tensor2::new(2.0, 0.4, 1.0);
    let scheme = FvScheme::new(&mesh, &dual, &FaceTensors::uniform(&dual, k), &model).unwrap();
    let data = FlowData::new(|_| 0.4, |_, _| 0.4, |x, _| 1.0 + 0.5 * x[0] - 2.0 * x[1]);
    let traj = run(&scheme, &data, &TimeGrid::uniform(0.0, 0.1, 1).unwrap(), &RunOptions::default()).unwrap();
    let rec = reconstruct(&scheme, &traj.states[1], &traj.states[0], 1e-9).unwrap();
    let mob = model.mobility(0.4).unwrap();
    let kg = k.apply([0.5, -2.0]);
    let expect = [geometry::scale(kg, -mob.w), geometry::scale(kg, -mob.total)];
    for (field, e) in [&rec.wetting, &rec.total].into_iter().zip(expect) {
        for p in &field.pieces {
            for x in p.corners {
                let u = p.eval(x);
                assert!(geometry::dist(u, e) < 1e-9, "piece at {:?}: {u:?} vs {e:?}", p.corners);
            }
        }
    }
}
