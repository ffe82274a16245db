use crate::constitutive::FluidModel;
use crate::error::{Error, Result};
use crate::geometry::{p1_gradients, Tensor2};
use crate::linalg::{solve_spd, LinearSolverOptions, SparseMatrix, Triplets};
use crate::macrofv::{run, FaceTensors, FlowData, Formulation, FvScheme, RunOptions, State, TimeGrid, Trajectory};
use crate::mesh::{CoarseMesh, DualMesh};
use crate::microcell::Coefficient;

use super::config::{OracleConfig, SimConfig};

pub const DEFAULT_RESOLUTION: f64 = 8.0;
pub const DEFAULT_DOF_BUDGET: usize = 250_000;

/// `√(2 max |T|)`, the leg length on a structured mesh.
pub fn mesh_width(mesh: &CoarseMesh) -> f64 {
    let largest = (0..mesh.n_triangles()).map(|t| mesh.triangle_area(t)).fold(0.0, f64::max);
    (2.0 * largest).sqrt()
}

/// Trajectory of the fine-scale problem on a uniform refinement of the
/// coarse mesh.
#[derive(Debug, Clone)]
pub struct FineReference {
    pub mesh: CoarseMesh,
    pub refinements: usize,
    pub trajectory: Trajectory,
}

/// Refine `coarse` uniformly until its width is at most `ε / resolution`,
/// refusing meshes with more than `budget` unknowns.
pub fn fine_mesh(coarse: &CoarseMesh, epsilon: f64, resolution: f64, budget: usize) -> Result<(CoarseMesh, usize)> {
    let target = epsilon / resolution;
    if !(target > 0.0) {
        return Err(Error::Config(format!("fine mesh width {target} must be positive")));
    }
    let mut mesh = coarse.clone();
    let mut refinements = 0;
    loop {
        let dofs = 2 * mesh.n_vertices();
        if dofs > budget {
            return Err(Error::DofBudget { dofs, budget });
        }
        if mesh_width(&mesh) <= target * (1.0 + 1e-12) {
            return Ok((mesh, refinements));
        }
        mesh = mesh.refine_uniform()?;
        refinements += 1;
    }
}

/// Per-triangle `K^ε` at the centroid.
pub fn triangle_tensors(mesh: &CoarseMesh, coefficient: &Coefficient) -> Result<Vec<Tensor2>> {
    (0..mesh.n_triangles()).map(|t| coefficient.eval(crate::geometry::centroid(&mesh.triangle_points(t)))).collect()
}

/// Solve the unhomogenized problem with the macro scheme on `fine`.
pub fn solve_fine(
    fine: &CoarseMesh,
    coefficient: &Coefficient,
    model: &FluidModel,
    data: &FlowData,
    grid: &TimeGrid,
    opts: &RunOptions,
) -> Result<Trajectory> {
    let dual = DualMesh::build(fine)?;
    let tensors = FaceTensors::from_triangles(&dual, &triangle_tensors(fine, coefficient)?)?;
    let scheme = FvScheme::new(fine, &dual, &tensors, model)?;
    run(&scheme, data, grid, opts)
}

#[allow(clippy::too_many_arguments)]
pub fn fine_reference_on(
    coarse: &CoarseMesh,
    coefficient: &Coefficient,
    model: &FluidModel,
    data: &FlowData,
    grid: &TimeGrid,
    opts: &RunOptions,
    epsilon: f64,
    resolution: f64,
    budget: usize,
) -> Result<FineReference> {
    let (mesh, refinements) = fine_mesh(coarse, epsilon, resolution, budget)?;
    log::info!("fine reference: {refinements} refinements, {} vertices", mesh.n_vertices());
    let trajectory = solve_fine(&mesh, coefficient, model, data, grid, opts)?;
    Ok(FineReference { mesh, refinements, trajectory })
}

pub fn fine_reference(cfg: &SimConfig) -> Result<FineReference> {
    let (resolution, budget) = match cfg.oracle {
        OracleConfig::Fine { resolution, dof_budget } => (resolution, dof_budget),
        _ => (DEFAULT_RESOLUTION, DEFAULT_DOF_BUDGET),
    };
    let epsilon = cfg.coefficient.period().unwrap_or(cfg.micro.epsilon);
    fine_reference_on(
        &cfg.mesh()?,
        &cfg.coefficient,
        &cfg.model()?,
        &cfg.flow_data(),
        &cfg.time_grid()?,
        &cfg.run,
        epsilon,
        resolution,
        budget,
    )
}

/// States at the levels of `grid`, skipping intermediate sub-steps.
pub fn grid_states<'a>(traj: &'a Trajectory, grid: &TimeGrid) -> Result<Vec<&'a State>> {
    let mut out = Vec::with_capacity(grid.times().len());
    let mut it = traj.states.iter();
    for &t in grid.times() {
        let tol = 1e-10 * grid.tau().max(t.abs());
        let state = it
            .find(|s| (s.t - t).abs() <= tol)
            .ok_or_else(|| Error::Dimension(format!("trajectory has no state at t = {t}")))?;
        out.push(state);
    }
    Ok(out)
}

/// P1 mass and `K`-stiffness matrices.
fn p1_matrices(mesh: &CoarseMesh, k: Tensor2) -> (SparseMatrix, SparseMatrix) {
    let n = mesh.n_vertices();
    let mut mass = Triplets::new(n, n);
    let mut stiff = Triplets::new(n, n);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(t);
        let g = p1_gradients(&mesh.triangle_points(t));
        for i in 0..3 {
            for j in 0..3 {
                mass.add(tri[i], tri[j], area / 12.0 * if i == j { 2.0 } else { 1.0 });
                stiff.add(tri[i], tri[j], area * k.quad(g[i], g[j]));
            }
        }
    }
    (mass.build(), stiff.build())
}

fn quad_form(a: &SparseMatrix, x: &[f64]) -> f64 {
    crate::linalg::dot(&a.mul_vec(x), x)
}

/// Squared space-time errors of a coarse trajectory against a fine one,
/// each a sum over levels `n ≥ 1` weighted by the step length.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorMeasures {
    /// `‖S_H − S‖²_{L²(Ω_T)}`.
    pub saturation_l2: f64,
    /// `|||S_H − S|||²` in the dual energy norm.
    pub saturation_dual: f64,
    /// `‖P_H − P‖²_E`.
    pub pressure_energy: f64,
    /// `‖Υ(S_H) − Υ(S)‖²_{L²(Ω_T)}`.
    pub kirchhoff_l2: f64,
}

impl ErrorMeasures {
    /// Sum of the dual, energy and Kirchhoff terms.
    pub fn combined(&self) -> f64 {
        self.saturation_dual + self.pressure_energy + self.kirchhoff_l2
    }
}

/// Compare a coarse trajectory with a reference on a nested refinement;
/// energy and dual norms use `k0`.
#[allow(clippy::too_many_arguments)]
pub fn compare(
    coarse: &CoarseMesh,
    coarse_traj: &Trajectory,
    fine: &CoarseMesh,
    fine_traj: &Trajectory,
    grid: &TimeGrid,
    model: &FluidModel,
    k0: Tensor2,
    linear: &LinearSolverOptions,
) -> Result<ErrorMeasures> {
    let a = grid_states(coarse_traj, grid)?;
    let b = grid_states(fine_traj, grid)?;
    let (mass, stiff) = p1_matrices(fine, k0);
    let n = fine.n_vertices();
    let interior: Vec<bool> = (0..n).map(|v| !fine.is_boundary(v)).collect();
    let mut dirichlet = Triplets::new(n, n);
    for i in 0..n {
        if !interior[i] {
            dirichlet.add(i, i, 1.0);
            continue;
        }
        let (cols, vals) = stiff.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if interior[j] {
                dirichlet.add(i, j, v);
            }
        }
    }
    let dirichlet = dirichlet.build();
    let mut out = ErrorMeasures::default();
    for k in 1..grid.times().len() {
        let dt = grid.dt(k);
        let sa = a[k].convert(model, Formulation::Kirchhoff);
        let sb = b[k].convert(model, Formulation::Kirchhoff);
        let s_h = coarse.prolongate(fine, &sa.s)?;
        let p_h = coarse.prolongate(fine, &sa.p)?;
        let es: Vec<f64> = s_h.iter().zip(&sb.s).map(|(x, y)| x - y).collect();
        let ep: Vec<f64> = p_h.iter().zip(&sb.p).map(|(x, y)| x - y).collect();
        let eu: Vec<f64> =
            s_h.iter().zip(&sb.s).map(|(&x, &y)| model.kirchhoff_extended(x) - model.kirchhoff_extended(y)).collect();
        out.saturation_l2 += dt * quad_form(&mass, &es);
        out.pressure_energy += dt * quad_form(&stiff, &ep);
        out.kirchhoff_l2 += dt * quad_form(&mass, &eu);
        let mut load = mass.mul_vec(&es);
        for (l, &inside) in load.iter_mut().zip(&interior) {
            if !inside {
                *l = 0.0;
            }
        }
        if load.iter().any(|&l| l != 0.0) {
            let z = solve_spd(&dirichlet, &load, linear)?;
            out.saturation_dual += dt * crate::linalg::dot(&load, &z).max(0.0);
        }
    }
    Ok(out)
}
