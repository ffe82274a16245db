//! A posteriori error indicators per dual cell and time step, and the
//! aggregate bound built from them.

mod report;

pub(crate) use report::fmt17;
pub use report::{CellIndicators, EstimatorReport, FamilyTotals, StepIndicators};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fluxrecon::{reconstruct, FluxField, Reconstruction};
use crate::geometry::{self, p1_gradients, Point, Tensor2};
use crate::linalg::{solve_spd, LinearSolverOptions, Triplets};
pub use crate::macrofv::FlowFunctions;
use crate::macrofv::{FlowData, FvScheme, State, Trajectory};
use crate::mesh::{CoarseMesh, DualMesh, PointLocator};
use crate::microcell::EffectiveTensorField;

/// Per-cell micro data entering the indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroIndicators {
    pub tensors: Vec<Tensor2>,
    /// Local spectral bounds `α_D`, `β_D` of the sampled coefficient.
    pub alpha_loc: Vec<f64>,
    pub beta_loc: Vec<f64>,
    /// Jump indicator `m(D, ε, κ, h)`.
    pub jump: Vec<f64>,
    /// Sampled sup-term of the approximation indicator.
    pub discrepancy: Vec<f64>,
    pub oracle: Option<Tensor2>,
    /// Global lower bound `α`.
    pub alpha: f64,
}

impl MicroIndicators {
    /// Exact tensors without micro error: `m = 0`, zero discrepancy.
    pub fn exact(tensors: Vec<Tensor2>, oracle: Option<Tensor2>) -> Self {
        let eig: Vec<[f64; 2]> = tensors.iter().map(Tensor2::eigenvalues).collect();
        let alpha = eig.iter().map(|e| e[0]).fold(f64::INFINITY, f64::min);
        let n = tensors.len();
        MicroIndicators {
            tensors,
            alpha_loc: eig.iter().map(|e| e[0]).collect(),
            beta_loc: eig.iter().map(|e| e[1]).collect(),
            jump: vec![0.0; n],
            discrepancy: vec![0.0; n],
            oracle,
            alpha,
        }
    }

    /// From an upscaled field and the per-cell discrepancies of the same
    /// vertices. Fields without cell solutions are treated as exact.
    pub fn from_field(field: &EffectiveTensorField, discrepancy: &[f64]) -> Result<Self> {
        if field.solutions.is_empty() {
            return Ok(Self::exact(field.tensors.clone(), field.oracle));
        }
        if discrepancy.len() != field.len() {
            return Err(Error::Dimension(format!("{} discrepancies for {} cells", discrepancy.len(), field.len())));
        }
        let n = field.len();
        let mut out = MicroIndicators {
            tensors: field.tensors.clone(),
            alpha_loc: Vec::with_capacity(n),
            beta_loc: Vec::with_capacity(n),
            jump: Vec::with_capacity(n),
            discrepancy: discrepancy.to_vec(),
            oracle: field.oracle,
            alpha: field.alpha,
        };
        for c in 0..n {
            let sol = field.solution(c)?;
            out.alpha_loc.push(sol.alpha);
            out.beta_loc.push(sol.beta);
            out.jump.push(sol.jump);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    fn contrast(&self, cell: usize) -> f64 {
        self.beta_loc[cell] / self.alpha_loc[cell]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    /// Residual tolerance passed to the flux reconstruction.
    pub recon_tol: f64,
    /// Uniform refinements of the coarse mesh for the initial-data solve.
    pub initial_refinements: usize,
    pub linear: LinearSolverOptions,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions { recon_tol: 1e-8, initial_refinements: 1, linear: LinearSolverOptions::with_tol(1e-12) }
    }
}

/// Edge-midpoint rule on a sub-triangle: points as barycentric coordinates
/// in the coarse triangle, equal weights `area / 3`.
fn quadrature(mesh: &CoarseMesh, t: usize, corners: &[Point; 3]) -> [(Point, [f64; 3]); 3] {
    let pts = mesh.triangle_points(t);
    std::array::from_fn(|q| {
        let x = geometry::midpoint(corners[q], corners[(q + 1) % 3]);
        (x, geometry::barycentric(&pts, x))
    })
}

fn pieces_by_cell(field: &FluxField, n_cells: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n_cells];
    for (i, p) in field.pieces.iter().enumerate() {
        out[p.vertex].push(i);
    }
    out
}

/// `η_CR` of one cell for a given residual `r`: `C_P H_D α^{-1/2} ‖r‖_{L²(D)}`
/// with the residual integrated on the cell fragments.
pub fn coarse_residual_indicator(dual: &DualMesh, cell: usize, alpha: f64, residual: impl Fn(Point) -> f64) -> f64 {
    let c = &dual.cells[cell];
    let mut norm2 = 0.0;
    for f in &c.fragments {
        for q in 0..3 {
            let r = residual(geometry::midpoint(f.corners[q], f.corners[(q + 1) % 3]));
            norm2 += f.area / 3.0 * r * r;
        }
    }
    c.poincare * c.diameter * norm2.sqrt() / alpha.sqrt()
}

/// Indicators of one time step `prev → state` from its reconstruction.
pub fn step_indicators(
    scheme: &FvScheme,
    micro: &MicroIndicators,
    prev: &State,
    state: &State,
    rec: &Reconstruction,
) -> Result<Vec<CellIndicators>> {
    let mesh = scheme.mesh();
    let dual = scheme.dual();
    let model = scheme.model();
    let n = mesh.n_vertices();
    if micro.len() != n {
        return Err(Error::MissingTensor(micro.len().min(n)));
    }
    let dt = state.t - prev.t;
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step {dt} must be positive")));
    }
    let flows = FlowFunctions::midpoint(mesh, model, prev, state);
    let by_cell = pieces_by_cell(&rec.wetting, n);
    let div_s = rec.wetting.cell_divergence(n);
    let div_p = rec.total.cell_divergence(n);
    let scale = micro.alpha.sqrt().recip();
    let phi0 = model.phi0();

    let rows = (0..n)
        .into_par_iter()
        .map(|cell| {
            let d = &dual.cells[cell];
            let k = micro.tensors[cell];
            let mut cr2 = [0.0; 2];
            let mut v2 = [0.0; 2];
            let mut df2 = [0.0; 2];
            let mut mod2 = [0.0; 2];
            let c = [div_s[cell] / d.area, div_p[cell] / d.area];
            for &i in &by_cell[cell] {
                let (ps, pp) = (&rec.wetting.pieces[i], &rec.total.pieces[i]);
                let tri = mesh.triangles()[ps.triangle];
                let w = ps.area / 3.0;
                for (x, lam) in quadrature(mesh, ps.triangle, &ps.corners) {
                    let ds: f64 = (0..3).map(|j| lam[j] * (state.s[tri[j]] - prev.s[tri[j]])).sum();
                    let r = [phi0 * ds / dt + c[0], c[1]];
                    let v = flows.eval(ps.triangle, lam);
                    let u = [ps.eval(x), pp.eval(x)];
                    for a in 0..2 {
                        cr2[a] += w * r[a] * r[a];
                        v2[a] += w * geometry::dot(v[a], v[a]);
                        let e = geometry::add(k.apply(v[a]), u[a]);
                        df2[a] += w * geometry::dot(e, e);
                        if let Some(k0) = micro.oracle {
                            let dk = Tensor2::new(k0.xx - k.xx, k0.xy - k.xy, k0.yy - k.yy);
                            let e = dk.apply(v[a]);
                            mod2[a] += w * geometry::dot(e, e);
                        }
                    }
                }
            }
            let hd = d.poincare * d.diameter;
            let contrast = micro.contrast(cell);
            CellIndicators {
                cell,
                cr: cr2.map(|x| hd * scale * x.sqrt()),
                cf: v2.map(|x| scale * contrast * x.sqrt() * micro.jump[cell]),
                df: df2.map(|x| scale * x.sqrt()),
                app: v2.map(|x| scale * contrast * x.sqrt() * micro.discrepancy[cell]),
                modeling: micro.oracle.map(|_| mod2.map(|x| scale * x.sqrt())),
            }
        })
        .collect();
    Ok(rows)
}

/// `|||S_H(·,0) − S₀|||²` in the dual energy norm, from one Poisson solve
/// with the cell tensors on a refined copy of the mesh.
pub fn initial_term(
    mesh: &CoarseMesh,
    micro: &MicroIndicators,
    data: &FlowData,
    initial: &State,
    opts: &EstimatorOptions,
) -> Result<f64> {
    let mut fine = mesh.clone();
    for _ in 0..opts.initial_refinements {
        fine = fine.refine_uniform()?;
    }
    let s_h = mesh.prolongate(&fine, &initial.s)?;
    let locator = PointLocator::new(mesh);
    let n = fine.n_vertices();
    let mut load = vec![0.0; n];
    let mut stiffness = Triplets::new(n, n);
    for (t, tri) in fine.triangles().iter().enumerate() {
        let pts = fine.triangle_points(t);
        let area = fine.triangle_area(t);
        let centre = geometry::centroid(&pts);
        let (ct, lam) = locator
            .locate(centre)
            .ok_or_else(|| Error::UnrelatedMeshes(format!("fine triangle {t} outside the coarse mesh")))?;
        let owner = (0..3).max_by(|&a, &b| lam[a].total_cmp(&lam[b])).expect("three vertices");
        let k = micro.tensors[mesh.triangles()[ct][owner]];
        let g = p1_gradients(&pts);
        for q in 0..3 {
            let x = geometry::midpoint(pts[q], pts[(q + 1) % 3]);
            let sh = 0.5 * (s_h[tri[q]] + s_h[tri[(q + 1) % 3]]);
            let f = sh - (data.initial_saturation)(x);
            load[tri[q]] += area / 3.0 * f * 0.5;
            load[tri[(q + 1) % 3]] += area / 3.0 * f * 0.5;
        }
        for i in 0..3 {
            for j in 0..3 {
                stiffness.add(tri[i], tri[j], area * k.quad(g[i], g[j]));
            }
        }
    }
    for v in (0..n).filter(|&v| fine.is_boundary(v)) {
        load[v] = 0.0;
    }
    if load.iter().all(|&b| b == 0.0) {
        return Ok(0.0);
    }
    // homogeneous Dirichlet rows
    let raw = stiffness.build();
    let mut a = Triplets::new(n, n);
    for i in 0..n {
        if fine.is_boundary(i) {
            a.add(i, i, 1.0);
            continue;
        }
        let (cols, vals) = raw.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if !fine.is_boundary(j) {
                a.add(i, j, v);
            }
        }
    }
    let z = solve_spd(&a.build(), &load, &opts.linear)?;
    Ok(load.iter().zip(&z).map(|(b, z)| b * z).sum::<f64>().max(0.0))
}

/// Indicators of every step of a trajectory and the initial-data term.
pub fn estimate(
    scheme: &FvScheme,
    micro: &MicroIndicators,
    data: &FlowData,
    traj: &Trajectory,
    opts: &EstimatorOptions,
) -> Result<EstimatorReport> {
    let first = traj.states.first().ok_or(Error::EmptyReport)?;
    let initial = initial_term(scheme.mesh(), micro, data, first, opts)?;
    let mut steps = Vec::with_capacity(traj.states.len() - 1);
    for (n, w) in traj.states.windows(2).enumerate() {
        let rec = reconstruct(scheme, &w[1], &w[0], opts.recon_tol)?;
        let cells = step_indicators(scheme, micro, &w[0], &w[1], &rec)?;
        steps.push(StepIndicators { n: n + 1, t: w[1].t, cells });
    }
    Ok(EstimatorReport { t0: first.t, alpha: micro.alpha, initial, steps })
}
