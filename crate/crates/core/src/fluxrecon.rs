//! Locally conservative flux fields built from the finite-volume fluxes.
//!
//! Each coarse triangle is split into six sub-triangles `[v, m, b]` (vertex,
//! edge midpoint, barycenter), so that every control volume is a union of
//! sub-triangles and every dual face is a sub-triangle edge. The fluxes are
//! lowest-order Raviart–Thomas fields on this split: dual-face degrees of
//! freedom are the scheme fluxes, the remaining ones are distributed around
//! each vertex so that the divergence is constant on every control volume.
//! Around interior vertices the one free circulation is fitted to the
//! continuous flux `−K V` of the discrete state.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{self, Point, Tensor2};
use crate::macrofv::{FlowFunctions, FvScheme, State};
use crate::mesh::CoarseMesh;

/// Sub-triangle `[v, m, b]` with outward fluxes through the edge opposite
/// each corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubTriangle {
    pub triangle: usize,
    pub vertex: usize,
    pub corners: [Point; 3],
    pub area: f64,
    pub flux: [f64; 3],
}

impl SubTriangle {
    /// `Σ_i Φ_i (x − corner_i) / (2|F|)`.
    pub fn eval(&self, x: Point) -> Point {
        let mut u = [0.0; 2];
        for i in 0..3 {
            u = geometry::add(u, geometry::scale(geometry::sub(x, self.corners[i]), self.flux[i]));
        }
        geometry::scale(u, 0.5 / self.area)
    }

    pub fn divergence(&self) -> f64 {
        self.flux.iter().sum::<f64>() / self.area
    }
}

/// Piecewise `RT₀` field on the six-fold split of a coarse mesh, constant on
/// each time interval.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField {
    /// `6 t + 2 k + side`, `k` the local vertex and `side` 0 for the edge
    /// towards the next vertex, 1 for the previous one.
    pub pieces: Vec<SubTriangle>,
}

const SLACK: f64 = 1e-12;

impl FluxField {
    pub fn zero(mesh: &CoarseMesh) -> Self {
        FluxField { pieces: split(mesh) }
    }

    pub fn piece(&self, triangle: usize, k: usize, side: usize) -> &SubTriangle {
        &self.pieces[6 * triangle + 2 * k + side]
    }

    /// Value at `x` inside coarse triangle `triangle`.
    pub fn eval(&self, triangle: usize, x: Point) -> Result<Point> {
        let pieces = self
            .pieces
            .get(6 * triangle..6 * triangle + 6)
            .ok_or_else(|| Error::Dimension(format!("no triangle {triangle} in flux field")))?;
        let mut best: Option<(f64, &SubTriangle)> = None;
        for p in pieces {
            let l = geometry::barycentric(&p.corners, x);
            let worst = l.iter().copied().fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(w, _)| worst > w) {
                best = Some((worst, p));
            }
        }
        let (worst, piece) = best.expect("six pieces");
        if worst < -SLACK {
            let tri_pts = [pieces[0].corners[0], pieces[2].corners[0], pieces[4].corners[0]];
            return Err(Error::PointOutsideTriangle { triangle, lambda: geometry::barycentric(&tri_pts, x) });
        }
        Ok(piece.eval(x))
    }

    /// `∫_D ∇·u` per control volume.
    pub fn cell_divergence(&self, n_cells: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_cells];
        for p in &self.pieces {
            out[p.vertex] += p.flux.iter().sum::<f64>();
        }
        out
    }
}

fn split(mesh: &CoarseMesh) -> Vec<SubTriangle> {
    let mut pieces = Vec::with_capacity(6 * mesh.n_triangles());
    for t in 0..mesh.n_triangles() {
        let pts = mesh.triangle_points(t);
        let b = geometry::centroid(&pts);
        let tri = mesh.triangles()[t];
        for k in 0..3 {
            for other in [(k + 1) % 3, (k + 2) % 3] {
                let corners = [pts[k], geometry::midpoint(pts[k], pts[other]), b];
                pieces.push(SubTriangle {
                    triangle: t,
                    vertex: tri[k],
                    corners,
                    area: geometry::signed_area(&corners).abs(),
                    flux: [0.0; 3],
                });
            }
        }
    }
    pieces
}

/// Wetting-phase flux `u_s` and total flux `u_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub wetting: FluxField,
    pub total: FluxField,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Internal {
    /// Half of coarse edge `(lo, hi)` at the vertex.
    HalfEdge(usize, usize),
    /// Vertex-to-barycenter segment of a triangle.
    Median(usize),
}

/// Internal edges of the piece `(t, k, side)` in the fan around its vertex:
/// index 1 is the median (opposite the midpoint), index 2 the half edge
/// (opposite the barycenter).
fn internal_keys(mesh: &CoarseMesh, t: usize, k: usize, side: usize) -> [Internal; 2] {
    let tri = mesh.triangles()[t];
    let other = tri[if side == 0 { (k + 1) % 3 } else { (k + 2) % 3 }];
    let v = tri[k];
    [Internal::Median(t), Internal::HalfEdge(v.min(other), v.max(other))]
}

/// Reconstruct `u_s`, `u_p` from a converged step `prev → state`; refuses
/// states whose scaled residual exceeds `tol`.
pub fn reconstruct(scheme: &FvScheme, state: &State, prev: &State, tol: f64) -> Result<Reconstruction> {
    let res = scheme.scaled_residual(state, prev)?;
    if !(res[0] <= tol && res[1] <= tol) {
        return Err(Error::UnconvergedState(format!("scaled residual {res:?} above {tol:e}")));
    }
    let mesh = scheme.mesh();
    let dual = scheme.dual();
    let fluxes = scheme.face_fluxes(state);
    let mut fields = [FluxField::zero(mesh), FluxField::zero(mesh)];
    let flows = FlowFunctions::new(mesh, scheme.model(), state);
    let mut piece_tensor = vec![Tensor2::iso(0.0); fields[0].pieces.len()];

    let mut face_of = HashMap::new();
    for (i, f) in dual.faces.iter().enumerate() {
        face_of.insert((f.triangle, f.a.min(f.b), f.a.max(f.b)), i);
    }
    let mut boundary_of = HashMap::new();
    for (i, f) in dual.boundary_faces.iter().enumerate() {
        boundary_of.insert((f.triangle, f.cell, f.q[0].to_bits(), f.q[1].to_bits()), i);
    }

    // fragments around each vertex, with their exterior flux
    let mut fans: Vec<Vec<usize>> = vec![Vec::new(); mesh.n_vertices()];
    let mut boundary_flux: Vec<Option<[f64; 2]>> = vec![None; fields[0].pieces.len()];
    let corners: Vec<Point> = fields[0].pieces.iter().map(|p| p.corners[1]).collect();
    for (idx, &m) in corners.iter().enumerate() {
        let (t, k, side) = (idx / 6, (idx % 6) / 2, idx % 2);
        let tri = mesh.triangles()[t];
        let v = tri[k];
        let w = tri[if side == 0 { (k + 1) % 3 } else { (k + 2) % 3 }];
        let fi = face_of[&(t, v.min(w), v.max(w))];
        let f = &dual.faces[fi];
        let sign = if f.a == v { 1.0 } else { -1.0 };
        piece_tensor[idx] = scheme.face_tensors().faces[fi];
        for c in 0..2 {
            fields[c].pieces[idx].flux[0] = sign * fluxes.interior[fi][c];
        }
        if let Some(&bi) = boundary_of.get(&(t, v, m[0].to_bits(), m[1].to_bits())) {
            boundary_flux[idx] = Some(fluxes.boundary[bi]);
        }
        fans[v].push(idx);
    }

    // `∫ −K V · ν` over the edge of piece `a` opposite corner `e`, shared with `b`
    let pieces = fields[0].pieces.clone();
    let target = |a: usize, b: usize, e: usize| -> [f64; 2] {
        let pa = &pieces[a];
        let (p, q) = (pa.corners[(e + 1) % 3], pa.corners[(e + 2) % 3]);
        let mid = geometry::midpoint(p, q);
        let edge = geometry::sub(q, p);
        let mut normal = [edge[1], -edge[0]];
        if geometry::dot(normal, geometry::sub(p, pa.corners[e])) < 0.0 {
            normal = [-normal[0], -normal[1]];
        }
        let k = (piece_tensor[a] + piece_tensor[b]) * 0.5;
        let mut out = [0.0; 2];
        for piece in [pa, &pieces[b]] {
            let lam = geometry::barycentric(&mesh.triangle_points(piece.triangle), mid);
            let v = flows.eval(piece.triangle, lam);
            for c in 0..2 {
                out[c] -= 0.5 * geometry::dot(k.apply(v[c]), normal);
            }
        }
        out
    };
    for (v, fan) in fans.iter().enumerate() {
        let order = fan_order(mesh, fan, &boundary_flux)?;
        let area: f64 = order.iter().map(|&i| fields[0].pieces[i].area).sum();
        for (c, field) in fields.iter_mut().enumerate() {
            distribute(field, &order, area, &boundary_flux, c, mesh.is_boundary(v), &|a, b, e| target(a, b, e)[c]);
        }
    }
    let [wetting, total] = fields;
    Ok(Reconstruction { wetting, total })
}

/// Fragments of one vertex in walking order; open fans start and end at a
/// boundary half edge.
fn fan_order(mesh: &CoarseMesh, fan: &[usize], boundary_flux: &[Option<[f64; 2]>]) -> Result<Vec<usize>> {
    let keys: Vec<[Internal; 2]> = fan.iter().map(|&i| internal_keys(mesh, i / 6, (i % 6) / 2, i % 2)).collect();
    let mut by_key: HashMap<Internal, Vec<usize>> = HashMap::new();
    for (pos, ks) in keys.iter().enumerate() {
        for k in ks {
            by_key.entry(*k).or_default().push(pos);
        }
    }
    // an open fan starts at a piece whose half edge lies on the boundary
    let start = fan.iter().position(|&i| boundary_flux[i].is_some()).unwrap_or(0);
    let mut order = vec![start];
    let mut visited = vec![false; fan.len()];
    visited[start] = true;
    let mut came_through = None;
    loop {
        let cur = *order.last().unwrap();
        let next_key = keys[cur].iter().find(|k| Some(**k) != came_through).copied();
        let Some(key) = next_key else { break };
        let next = by_key[&key].iter().copied().find(|&p| p != cur && !visited[p]);
        match next {
            Some(p) => {
                visited[p] = true;
                order.push(p);
                came_through = Some(key);
            }
            None => break,
        }
    }
    if order.len() != fan.len() {
        return Err(Error::NonConforming(format!("vertex fan of {} pieces is not connected", fan.len())));
    }
    Ok(order.into_iter().map(|p| fan[p]).collect())
}

fn shared_edge(field: &FluxField, a: usize, b: usize) -> usize {
    // pieces of one triangle share the median, otherwise the half edge
    if field.pieces[a].triangle == field.pieces[b].triangle {
        1
    } else {
        2
    }
}

/// Internal fluxes of a fan so that every piece has divergence `c`, the
/// cell mean; closed fans take the circulation closest to `target`.
fn distribute(
    field: &mut FluxField,
    order: &[usize],
    area: f64,
    boundary_flux: &[Option<[f64; 2]>],
    c: usize,
    open: bool,
    target: &dyn Fn(usize, usize, usize) -> f64,
) {
    let boundary_out = |i: usize| boundary_flux[i].map_or(0.0, |b| b[c]);
    let exterior: f64 = order.iter().map(|&i| field.pieces[i].flux[0] + boundary_out(i)).sum();
    let div = exterior / area;
    // y[j]: flux from piece j to piece j+1 across their shared edge
    let mut y = Vec::with_capacity(order.len());
    let mut inflow = 0.0;
    for &i in order {
        let p = &field.pieces[i];
        let out = div * p.area - p.flux[0] - boundary_out(i) + inflow;
        y.push(out);
        inflow = out;
    }
    let n = order.len();
    if !open {
        let shift = (0..n)
            .map(|j| {
                let (a, b) = (order[j], order[(j + 1) % n]);
                target(a, b, shared_edge(field, a, b)) - y[j]
            })
            .sum::<f64>()
            / n as f64;
        y.iter_mut().for_each(|v| *v += shift);
    } else if let Some(last) = y.last_mut() {
        *last = 0.0;
    }
    let links = if open { n - 1 } else { n };
    for (j, &flux) in y.iter().enumerate().take(links) {
        let (a, b) = (order[j], order[(j + 1) % n]);
        let e = shared_edge(field, a, b);
        field.pieces[a].flux[e] = flux;
        field.pieces[b].flux[e] = -flux;
    }
    for &i in order {
        if let Some(b) = boundary_flux[i] {
            field.pieces[i].flux[2] = b[c];
        }
    }
}
