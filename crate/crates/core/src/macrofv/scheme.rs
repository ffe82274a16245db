use rayon::prelude::*;

use super::{Formulation, State};
use crate::constitutive::FluidModel;
use crate::error::{Error, Result};
use crate::geometry::{self, Tensor2};
use crate::linalg::{self, LinearSolverOptions, SparseMatrix, Triplets};
use crate::mesh::{CoarseMesh, DualMesh};
use crate::microcell::EffectiveTensorField;

const NO_CELL: usize = usize::MAX;

/// Permeability used on each dual face and boundary half-edge.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceTensors {
    pub faces: Vec<Tensor2>,
    pub boundary: Vec<Tensor2>,
}

impl FaceTensors {
    /// Mean of the two adjacent cell tensors on each dual face; the cell's
    /// own tensor on boundary half-edges.
    pub fn from_cells(dual: &DualMesh, cells: &[Tensor2]) -> Result<Self> {
        let get = |c: usize| cells.get(c).copied().ok_or(Error::MissingTensor(c));
        let faces = dual.faces.iter().map(|f| Ok((get(f.a)? + get(f.b)?) * 0.5)).collect::<Result<Vec<_>>>()?;
        let boundary = dual.boundary_faces.iter().map(|f| get(f.cell)).collect::<Result<Vec<_>>>()?;
        Ok(FaceTensors { faces, boundary })
    }

    pub fn from_field(dual: &DualMesh, field: &EffectiveTensorField) -> Result<Self> {
        Self::from_cells(dual, &field.tensors)
    }

    /// Tensor of the coarse triangle containing each face.
    pub fn from_triangles(dual: &DualMesh, triangles: &[Tensor2]) -> Result<Self> {
        let get =
            |t: usize| triangles.get(t).copied().ok_or_else(|| Error::Dimension(format!("no tensor for triangle {t}")));
        Ok(FaceTensors {
            faces: dual.faces.iter().map(|f| get(f.triangle)).collect::<Result<_>>()?,
            boundary: dual.boundary_faces.iter().map(|f| get(f.triangle)).collect::<Result<_>>()?,
        })
    }

    pub fn uniform(dual: &DualMesh, k: Tensor2) -> Self {
        FaceTensors { faces: vec![k; dual.faces.len()], boundary: vec![k; dual.boundary_faces.len()] }
    }
}

#[derive(Debug, Clone, Copy)]
struct FaceData {
    a: usize,
    b: usize,
    tri: [usize; 3],
    lam: [f64; 3],
    /// `|f| K∇φ_k · ν`
    kgrad: [f64; 3],
    /// `|f| K g · ν`
    kg: f64,
}

impl FaceData {
    /// `|f| K∇u · ν` for the P1 interpolant of nodal values; differences
    /// against the first vertex make constants exact.
    fn gradient(&self, u: impl Fn(usize) -> f64) -> f64 {
        let u0 = u(self.tri[0]);
        self.kgrad[1] * (u(self.tri[1]) - u0) + self.kgrad[2] * (u(self.tri[2]) - u0)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct FaceEval {
    flux: [f64; 2],
    /// Sum of the magnitudes of the terms making up each flux.
    mag: [f64; 2],
    /// Derivatives of both fluxes with respect to `(s_k, p_k)` at the three
    /// triangle vertices: columns `0..3` saturation, `3..6` pressure.
    d: [[f64; 6]; 2],
}

/// Integrated Darcy fluxes `(wetting, total)` through each dual face
/// (oriented from `a` to `b`) and each boundary half-edge (outward).
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFluxes {
    pub interior: Vec<[f64; 2]>,
    pub boundary: Vec<[f64; 2]>,
}

impl FaceFluxes {
    /// Net outward flux through `∂Ω`.
    pub fn boundary_total(&self) -> [f64; 2] {
        self.boundary.iter().fold([0.0; 2], |acc, f| [acc[0] + f[0], acc[1] + f[1]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Number of halvings in the Armijo damping ladder.
    pub max_damping: u32,
    pub linear: LinearSolverOptions,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-9, max_iter: 30, max_damping: 6, linear: LinearSolverOptions::with_tol(1e-11) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearSolveReport {
    pub iterations: usize,
    /// Final scaled residual ∞-norms of the two equation blocks.
    pub residual: [f64; 2],
    /// Accepted step length of every iteration.
    pub damping: Vec<f64>,
    pub converged: bool,
    pub failure: Option<String>,
}

/// Discrete operators on a fixed mesh and permeability.
pub struct FvScheme<'a> {
    mesh: &'a CoarseMesh,
    dual: &'a DualMesh,
    model: &'a FluidModel,
    tensors: FaceTensors,
    faces: Vec<FaceData>,
    boundary: Vec<FaceData>,
    /// `Φ⁰ |D|`
    storage: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn face_data(
    mesh: &CoarseMesh,
    k: Tensor2,
    g: [f64; 2],
    t: usize,
    (a, b): (usize, usize),
    lam: [f64; 3],
    normal: [f64; 2],
    length: f64,
) -> FaceData {
    let grads = geometry::p1_gradients(&mesh.triangle_points(t));
    let kn = k.apply(normal);
    FaceData {
        a,
        b,
        tri: mesh.triangles()[t],
        lam,
        kgrad: grads.map(|gr| length * geometry::dot(kn, gr)),
        kg: length * geometry::dot(kn, g),
    }
}

impl<'a> FvScheme<'a> {
    pub fn new(mesh: &'a CoarseMesh, dual: &'a DualMesh, tensors: &FaceTensors, model: &'a FluidModel) -> Result<Self> {
        if tensors.faces.len() != dual.faces.len() || tensors.boundary.len() != dual.boundary_faces.len() {
            return Err(Error::Dimension(format!(
                "{} face tensors for {} faces, {} for {} boundary faces",
                tensors.faces.len(),
                dual.faces.len(),
                tensors.boundary.len(),
                dual.boundary_faces.len()
            )));
        }
        if dual.n_cells() != mesh.n_vertices() {
            return Err(Error::Dimension("dual mesh does not match the coarse mesh".into()));
        }
        let g = model.gravity();
        let faces = dual
            .faces
            .iter()
            .zip(&tensors.faces)
            .map(|(f, &k)| face_data(mesh, k, g, f.triangle, (f.a, f.b), f.lambda, f.normal, f.length))
            .collect();
        let boundary = dual
            .boundary_faces
            .iter()
            .zip(&tensors.boundary)
            .map(|(f, &k)| face_data(mesh, k, g, f.triangle, (f.cell, NO_CELL), f.lambda, f.normal, f.length))
            .collect();
        let storage = dual.cells.iter().map(|c| model.phi0() * c.area).collect();
        Ok(FvScheme { mesh, dual, model, tensors: tensors.clone(), faces, boundary, storage })
    }

    pub fn mesh(&self) -> &CoarseMesh {
        self.mesh
    }

    pub fn dual(&self) -> &DualMesh {
        self.dual
    }

    pub fn model(&self) -> &FluidModel {
        self.model
    }

    pub fn face_tensors(&self) -> &FaceTensors {
        &self.tensors
    }

    fn n(&self) -> usize {
        self.mesh.n_vertices()
    }

    fn eval_kirchhoff(&self, f: &FaceData, s: &[f64], p: &[f64], jac: bool) -> FaceEval {
        let m = self.model;
        let (rw, rn) = (m.rho_w(), m.rho_n());
        let sf: f64 = (0..3).map(|k| f.lam[k] * s[f.tri[k]]).sum();
        let gp = f.gradient(|v| p[v]);
        let gu = f.gradient(|v| m.kirchhoff_extended(s[v]));
        let mob = m.mobility_clamped(sf);
        let mut out = FaceEval {
            flux: [-(mob.w * gp + gu - mob.w * rw * f.kg), -(mob.total * gp - (mob.w * rw + mob.n * rn) * f.kg)],
            mag: [
                (mob.w * gp).abs() + gu.abs() + (mob.w * rw * f.kg).abs(),
                (mob.total * gp).abs() + ((mob.w * rw + mob.n * rn) * f.kg).abs(),
            ],
            ..Default::default()
        };
        if jac {
            let (dw, dn) = m.mobility_derivative(sf);
            for k in 0..3 {
                let dup = m.kirchhoff_derivative(s[f.tri[k]]);
                out.d[0][k] = -(dw * f.lam[k] * (gp - rw * f.kg) + f.kgrad[k] * dup);
                out.d[0][3 + k] = -mob.w * f.kgrad[k];
                out.d[1][k] = -f.lam[k] * ((dw + dn) * gp - (dw * rw + dn * rn) * f.kg);
                out.d[1][3 + k] = -mob.total * f.kgrad[k];
            }
        }
        out
    }

    /// Upwind cell for a potential `ψ = |f| K(∇p − ρg)·ν`; ties go to the
    /// lower index.
    fn upwind(f: &FaceData, psi: f64) -> usize {
        if f.b == NO_CELL || psi < 0.0 {
            f.a
        } else if psi > 0.0 {
            f.b
        } else {
            f.a.min(f.b)
        }
    }

    fn eval_phases(&self, f: &FaceData, s: &[f64], p: &[f64], jac: bool) -> FaceEval {
        let m = self.model;
        let gp = f.gradient(|v| p[v]);
        let gc = f.gradient(|v| m.capillary_pressure(s[v]));
        let psi_w = gp - m.rho_w() * f.kg;
        let psi_n = gp + gc - m.rho_n() * f.kg;
        let up_w = Self::upwind(f, psi_w);
        let up_n = Self::upwind(f, psi_n);
        let lw = m.mobility_clamped(s[up_w]).w;
        let ln = m.mobility_clamped(s[up_n]).n;
        let mut out = FaceEval {
            flux: [-lw * psi_w, -ln * psi_n],
            mag: [lw * (gp.abs() + (m.rho_w() * f.kg).abs()), ln * (gp.abs() + gc.abs() + (m.rho_n() * f.kg).abs())],
            ..Default::default()
        };
        if jac {
            let local = |v: usize| f.tri.iter().position(|&x| x == v).expect("upwind node in triangle");
            for k in 0..3 {
                out.d[0][3 + k] = -lw * f.kgrad[k];
                out.d[1][3 + k] = -ln * f.kgrad[k];
                out.d[1][k] = -ln * m.capillary_derivative(s[f.tri[k]]) * f.kgrad[k];
            }
            out.d[0][local(up_w)] += -m.mobility_derivative(s[up_w]).0 * psi_w;
            out.d[1][local(up_n)] += -m.mobility_derivative(s[up_n]).1 * psi_n;
        }
        out
    }

    fn eval(&self, form: Formulation, f: &FaceData, s: &[f64], p: &[f64], jac: bool) -> FaceEval {
        match form {
            Formulation::Kirchhoff => self.eval_kirchhoff(f, s, p, jac),
            Formulation::Phases => self.eval_phases(f, s, p, jac),
        }
    }

    /// Scheme fluxes of a state.
    pub fn face_fluxes(&self, state: &State) -> FaceFluxes {
        let conv = |e: FaceEval| match state.formulation {
            Formulation::Kirchhoff => e.flux,
            Formulation::Phases => [e.flux[0], e.flux[0] + e.flux[1]],
        };
        let eval = |f: &FaceData| conv(self.eval(state.formulation, f, &state.s, &state.p, false));
        FaceFluxes {
            interior: self.faces.par_iter().map(eval).collect(),
            boundary: self.boundary.par_iter().map(eval).collect(),
        }
    }

    fn storage_terms(&self, form: Formulation, s: f64, s_old: f64, v: usize, dt: f64) -> [f64; 2] {
        let acc = self.storage[v] * (s - s_old) / dt;
        match form {
            Formulation::Kirchhoff => [acc, 0.0],
            Formulation::Phases => [acc, -acc],
        }
    }

    /// Balance of both equations on every control volume, closed only
    /// through dual faces: `(r_s, r_p)` in the Kirchhoff form, `(r_w, r_n)`
    /// in the phase form. Zero on interior cells for a converged step.
    pub fn residual(&self, state: &State, prev: &State) -> Result<Vec<[f64; 2]>> {
        self.check_pair(state, prev)?;
        let dt = state.t - prev.t;
        let mut r: Vec<[f64; 2]> =
            (0..self.n()).map(|v| self.storage_terms(state.formulation, state.s[v], prev.s[v], v, dt)).collect();
        let evals: Vec<FaceEval> =
            self.faces.par_iter().map(|f| self.eval(state.formulation, f, &state.s, &state.p, false)).collect();
        for (f, e) in self.faces.iter().zip(&evals) {
            for c in 0..2 {
                r[f.a][c] += e.flux[c];
                r[f.b][c] -= e.flux[c];
            }
        }
        Ok(r)
    }

    fn check_pair(&self, state: &State, prev: &State) -> Result<()> {
        let n = self.n();
        if state.s.len() != n || state.p.len() != n || prev.s.len() != n || prev.p.len() != n {
            return Err(Error::Dimension(format!("states do not match the {n}-vertex mesh")));
        }
        if state.formulation != prev.formulation {
            return Err(Error::Dimension("states use different formulations".into()));
        }
        if !(state.t > prev.t) {
            return Err(Error::Config(format!("time step from {} to {} is not positive", prev.t, state.t)));
        }
        Ok(())
    }

    /// Interleaved residual `(r_s, r_p)` per vertex with Dirichlet rows
    /// zeroed, the per-block scales and optionally the Jacobian.
    fn assemble(&self, state: &State, prev: &State, jac: bool) -> (Vec<f64>, [f64; 2], Option<SparseMatrix>) {
        let n = self.n();
        let form = state.formulation;
        let dt = state.t - prev.t;
        let interior = |v: usize| !self.mesh.is_boundary(v);
        let mut r = vec![0.0; 2 * n];
        let mut mag = vec![0.0; 2 * n];
        let mut t = jac.then(|| Triplets::with_capacity(2 * n, 2 * n, 24 * self.faces.len() + 4 * n));
        for v in 0..n {
            if !interior(v) {
                if let Some(t) = t.as_mut() {
                    t.add(2 * v, 2 * v, 1.0);
                    t.add(2 * v + 1, 2 * v + 1, 1.0);
                }
                continue;
            }
            let acc = self.storage_terms(form, state.s[v], prev.s[v], v, dt);
            let ds = self.storage[v] / dt;
            for c in 0..2 {
                r[2 * v + c] += acc[c];
                mag[2 * v + c] += acc[c].abs();
            }
            mag[2 * v] += ds;
            if let Some(t) = t.as_mut() {
                t.add(2 * v, 2 * v, ds);
                if form == Formulation::Phases {
                    t.add(2 * v + 1, 2 * v, -ds);
                }
            }
        }
        let evals: Vec<FaceEval> = self.faces.par_iter().map(|f| self.eval(form, f, &state.s, &state.p, jac)).collect();
        for (f, e) in self.faces.iter().zip(&evals) {
            for (cell, sign) in [(f.a, 1.0), (f.b, -1.0)] {
                if !interior(cell) {
                    continue;
                }
                for c in 0..2 {
                    r[2 * cell + c] += sign * e.flux[c];
                    mag[2 * cell + c] += e.mag[c];
                    if let Some(t) = t.as_mut() {
                        for k in 0..3 {
                            t.add(2 * cell + c, 2 * f.tri[k], sign * e.d[c][k]);
                            t.add(2 * cell + c, 2 * f.tri[k] + 1, sign * e.d[c][3 + k]);
                        }
                    }
                }
            }
        }
        let mut scale = [0.0f64; 2];
        for v in 0..n {
            for c in 0..2 {
                scale[c] = scale[c].max(mag[2 * v + c]);
            }
        }
        (r, scale.map(|s| if s > 0.0 { s } else { 1.0 }), t.map(Triplets::build))
    }

    /// Block-wise `‖r‖∞ / scale`.
    fn scaled_norm(r: &[f64], scale: [f64; 2]) -> [f64; 2] {
        let mut out = [0.0f64; 2];
        for (i, v) in r.iter().enumerate() {
            out[i % 2] = out[i % 2].max(v.abs() / scale[i % 2]);
        }
        out
    }

    fn merit(r: &[f64], scale: [f64; 2]) -> f64 {
        r.iter().enumerate().map(|(i, v)| (v / scale[i % 2]).powi(2)).sum::<f64>().sqrt()
    }

    /// Scaled residual norms of a state against its predecessor.
    pub fn scaled_residual(&self, state: &State, prev: &State) -> Result<[f64; 2]> {
        self.check_pair(state, prev)?;
        let (r, scale, _) = self.assemble(state, prev, false);
        Ok(Self::scaled_norm(&r, scale))
    }

    /// Damped Newton iteration for one implicit Euler step. `guess` carries
    /// the new time and the Dirichlet values on boundary vertices, which are
    /// kept fixed.
    pub fn solve_step(
        &self,
        guess: State,
        prev: &State,
        opts: &NewtonOptions,
    ) -> Result<(State, NonlinearSolveReport)> {
        self.check_pair(&guess, prev)?;
        let mut x = guess;
        let (mut r, mut scale, mut jac) = self.assemble(&x, prev, true);
        let frozen = scale;
        let mut report = NonlinearSolveReport {
            iterations: 0,
            residual: Self::scaled_norm(&r, scale),
            damping: Vec::new(),
            converged: false,
            failure: None,
        };
        loop {
            report.residual = Self::scaled_norm(&r, scale);
            if report.residual[0] <= opts.tol && report.residual[1] <= opts.tol {
                report.converged = true;
                return Ok((x, report));
            }
            if report.iterations >= opts.max_iter {
                report.failure = Some(format!("no convergence in {} iterations", opts.max_iter));
                return Ok((x, report));
            }
            report.iterations += 1;
            let a = jac.take().expect("jacobian assembled");
            let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            let delta = match linalg::solve_general(&a, &rhs, &opts.linear) {
                Ok(d) => d,
                Err(e) => {
                    report.failure = Some(format!("linear solve: {e}"));
                    return Ok((x, report));
                }
            };
            let m0 = Self::merit(&r, frozen);
            let mut accepted = None;
            for k in 0..=opts.max_damping {
                let alpha = 0.5f64.powi(k as i32);
                let mut trial = x.clone();
                for v in 0..trial.s.len() {
                    trial.s[v] += alpha * delta[2 * v];
                    trial.p[v] += alpha * delta[2 * v + 1];
                }
                let (rt, _, _) = self.assemble(&trial, prev, false);
                let mt = Self::merit(&rt, frozen);
                if mt.is_finite() && mt <= (1.0 - 1e-4 * alpha) * m0 {
                    accepted = Some((alpha, trial));
                    break;
                }
            }
            let Some((alpha, trial)) = accepted else {
                report.failure = Some("damping ladder exhausted".into());
                return Ok((x, report));
            };
            report.damping.push(alpha);
            x = trial;
            let (rn, sn, jn) = self.assemble(&x, prev, true);
            r = rn;
            scale = sn;
            jac = jn;
        }
    }

    /// Global pressure solving the pressure equation for the saturation
    /// `s`, with boundary values taken from `p`.
    pub fn initial_pressure(&self, s: &[f64], p: &[f64], opts: &LinearSolverOptions) -> Result<Vec<f64>> {
        let n = self.n();
        if s.len() != n || p.len() != n {
            return Err(Error::Dimension(format!("initial data does not match the {n}-vertex mesh")));
        }
        let base = (0..n).find(|&v| self.mesh.is_boundary(v)).map_or(0.0, |v| p[v]);
        let mut x: Vec<f64> = (0..n).map(|v| if self.mesh.is_boundary(v) { p[v] } else { base }).collect();
        let mut t = Triplets::with_capacity(n, n, 6 * self.faces.len() + n);
        let mut r = vec![0.0; n];
        for v in (0..n).filter(|&v| self.mesh.is_boundary(v)) {
            t.add(v, v, 1.0);
        }
        for f in &self.faces {
            let e = self.eval_kirchhoff(f, s, &x, true);
            for (cell, sign) in [(f.a, 1.0), (f.b, -1.0)] {
                if self.mesh.is_boundary(cell) {
                    continue;
                }
                r[cell] += sign * e.flux[1];
                for k in 0..3 {
                    t.add(cell, f.tri[k], sign * e.d[1][3 + k]);
                }
            }
        }
        if r.iter().all(|&v| v == 0.0) {
            return Ok(x);
        }
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = linalg::solve_general(&t.build(), &rhs, opts)?;
        for (xi, d) in x.iter_mut().zip(&delta) {
            *xi += d;
        }
        Ok(x)
    }

    /// Pressure-block matrix `∂r_p/∂P` on interior rows (no Dirichlet
    /// elimination), for a given saturation.
    pub fn pressure_matrix(&self, s: &[f64]) -> SparseMatrix {
        let n = self.n();
        let zeros = vec![0.0; n];
        let mut t = Triplets::with_capacity(n, n, 6 * self.faces.len());
        for f in &self.faces {
            let e = self.eval_kirchhoff(f, s, &zeros, true);
            for (cell, sign) in [(f.a, 1.0), (f.b, -1.0)] {
                for k in 0..3 {
                    t.add(cell, f.tri[k], sign * e.d[1][3 + k]);
                }
            }
        }
        t.build()
    }
}
