use super::{Formulation, State};
use crate::constitutive::FluidModel;
use crate::geometry::{self, p1_gradients, Point};
use crate::mesh::CoarseMesh;

/// Flow functions `V_s`, `V_p` of one state: P1 gradients per triangle and
/// mobilities of the P1 saturation.
#[derive(Debug, Clone)]
pub struct FlowFunctions<'a> {
    mesh: &'a CoarseMesh,
    model: &'a FluidModel,
    s: Vec<f64>,
    grad_p: Vec<Point>,
    grad_upsilon: Vec<Point>,
}

impl<'a> FlowFunctions<'a> {
    pub fn new(mesh: &'a CoarseMesh, model: &'a FluidModel, state: &State) -> Self {
        let kirchhoff = state.convert(model, Formulation::Kirchhoff);
        let upsilon: Vec<f64> = kirchhoff.s.iter().map(|&s| model.kirchhoff_extended(s)).collect();
        let mut grad_p = Vec::with_capacity(mesh.n_triangles());
        let mut grad_upsilon = Vec::with_capacity(mesh.n_triangles());
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let g = p1_gradients(&mesh.triangle_points(t));
            let combine = |u: &[f64]| {
                (0..3).fold([0.0; 2], |acc, k| geometry::add(acc, geometry::scale(g[k], u[tri[k]] - u[tri[0]])))
            };
            grad_p.push(combine(&kirchhoff.p));
            grad_upsilon.push(combine(&upsilon));
        }
        FlowFunctions { mesh, model, s: kirchhoff.s, grad_p, grad_upsilon }
    }

    /// Time average of two states in the Kirchhoff unknowns.
    pub fn midpoint(mesh: &'a CoarseMesh, model: &'a FluidModel, a: &State, b: &State) -> Self {
        let ka = a.convert(model, Formulation::Kirchhoff);
        let kb = b.convert(model, Formulation::Kirchhoff);
        let avg = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| 0.5 * (u + v)).collect();
        let mid = State {
            t: 0.5 * (a.t + b.t),
            formulation: Formulation::Kirchhoff,
            s: avg(&ka.s, &kb.s),
            p: avg(&ka.p, &kb.p),
        };
        Self::new(mesh, model, &mid)
    }

    /// `(V_s, V_p)` at barycentric coordinates `lam` of triangle `t`.
    pub fn eval(&self, t: usize, lam: [f64; 3]) -> [Point; 2] {
        let tri = self.mesh.triangles()[t];
        let s: f64 = (0..3).map(|k| lam[k] * self.s[tri[k]]).sum();
        let mob = self.model.mobility_clamped(s);
        let g = self.model.gravity();
        let (rw, rn) = (self.model.rho_w(), self.model.rho_n());
        let gp = self.grad_p[t];
        let vs = geometry::add(
            geometry::sub(geometry::scale(gp, mob.w), geometry::scale(g, mob.w * rw)),
            self.grad_upsilon[t],
        );
        let vp = geometry::sub(geometry::scale(gp, mob.total), geometry::scale(g, mob.w * rw + mob.n * rn));
        [vs, vp]
    }
}
