use std::f64::consts::PI;

use super::CoarseMesh;
use crate::error::{Error, Result};
use crate::geometry::{self, Point};

/// Segment from an edge midpoint to the barycenter of one triangle,
/// separating the control volumes of the edge's endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualFace {
    pub a: usize,
    pub b: usize,
    pub triangle: usize,
    pub p: Point,
    pub q: Point,
    /// Unit normal pointing from cell `a` into cell `b`.
    pub normal: Point,
    pub length: f64,
    /// Barycentric coordinates of the segment midpoint in `triangle`,
    /// ordered like the triangle's vertices.
    pub lambda: [f64; 3],
}

impl DualFace {
    pub fn midpoint(&self) -> Point {
        geometry::midpoint(self.p, self.q)
    }
}

/// Half of a boundary edge, owned by the cell of its coarse vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub cell: usize,
    pub triangle: usize,
    pub p: Point,
    pub q: Point,
    pub normal: Point,
    pub length: f64,
    pub lambda: [f64; 3],
}

/// Sub-triangle `D ∩ T` piece of a control volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub triangle: usize,
    pub corners: [Point; 3],
    /// Barycentric coordinates of `corners` in `triangle`.
    pub lambda: [[f64; 3]; 3],
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualCell {
    pub vertex: usize,
    pub center: Point,
    pub polygon: Vec<Point>,
    pub area: f64,
    pub diameter: f64,
    pub poincare: f64,
    pub interior: bool,
    pub fragments: Vec<Fragment>,
}

/// Barycentric dual of a coarse triangulation: one control volume per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct DualMesh {
    pub cells: Vec<DualCell>,
    pub faces: Vec<DualFace>,
    pub boundary_faces: Vec<BoundaryFace>,
}

const THIRD: f64 = 1.0 / 3.0;

fn unit_vec(k: usize) -> [f64; 3] {
    let mut e = [0.0; 3];
    e[k] = 1.0;
    e
}

fn lerp3(a: [f64; 3], b: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2])]
}

impl DualMesh {
    pub fn build(mesh: &CoarseMesh) -> Result<DualMesh> {
        mesh.check_conforming()?;
        let nv = mesh.n_vertices();
        let mut faces = Vec::with_capacity(3 * mesh.n_triangles());
        let mut boundary_faces = Vec::new();
        let mut fragments: Vec<Vec<Fragment>> = vec![Vec::new(); nv];
        let mut edge_count = std::collections::HashMap::new();
        for tri in mesh.triangles() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *edge_count.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
            }
        }
        let bary_lambda = [THIRD; 3];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let pts = mesh.triangle_points(t);
            let bc = geometry::centroid(&pts);
            let area = geometry::signed_area(&pts);
            if area <= 0.0 {
                return Err(Error::NonConforming(format!("triangle {t} has non-positive area")));
            }
            for k in 0..3 {
                let (ka, kb) = (k, (k + 1) % 3);
                let (a, b) = (tri[ka], tri[kb]);
                let m = geometry::midpoint(pts[ka], pts[kb]);
                let m_lambda = lerp3(unit_vec(ka), unit_vec(kb), 0.5);
                let d = geometry::sub(bc, m);
                let length = geometry::norm(d);
                let mut normal = [d[1] / length, -d[0] / length];
                if geometry::dot(normal, geometry::sub(pts[kb], pts[ka])) < 0.0 {
                    normal = [-normal[0], -normal[1]];
                }
                faces.push(DualFace {
                    a,
                    b,
                    triangle: t,
                    p: m,
                    q: bc,
                    normal,
                    length,
                    lambda: lerp3(m_lambda, bary_lambda, 0.5),
                });
                if edge_count[&(a.min(b), a.max(b))] == 1 {
                    let e = geometry::sub(pts[kb], pts[ka]);
                    let el = geometry::norm(e);
                    // outward for a counter-clockwise triangle
                    let out = [e[1] / el, -e[0] / el];
                    for (cell, lo, hi) in [(a, ka, kb), (b, kb, ka)] {
                        let p = pts[lo];
                        boundary_faces.push(BoundaryFace {
                            cell,
                            triangle: t,
                            p,
                            q: m,
                            normal: out,
                            length: 0.5 * el,
                            lambda: lerp3(unit_vec(lo), unit_vec(hi), 0.25),
                        });
                    }
                }
            }
            for k in 0..3 {
                let (j, l) = ((k + 1) % 3, (k + 2) % 3);
                let v = pts[k];
                let mj = geometry::midpoint(v, pts[j]);
                let ml = geometry::midpoint(v, pts[l]);
                let ek = unit_vec(k);
                let lj = lerp3(ek, unit_vec(j), 0.5);
                let ll = lerp3(ek, unit_vec(l), 0.5);
                fragments[tri[k]].push(Fragment {
                    triangle: t,
                    corners: [v, mj, bc],
                    lambda: [ek, lj, bary_lambda],
                    area: area / 6.0,
                });
                fragments[tri[k]].push(Fragment {
                    triangle: t,
                    corners: [v, bc, ml],
                    lambda: [ek, bary_lambda, ll],
                    area: area / 6.0,
                });
            }
        }

        let star = mesh.vertex_triangles();
        let mut cells = Vec::with_capacity(nv);
        for v in 0..nv {
            let polygon = cell_polygon(mesh, v, &star[v])?;
            let interior = !mesh.is_boundary(v);
            let area = fragments[v].iter().map(|f| f.area).sum();
            let diameter = geometry::polygon_diameter(&polygon);
            let convex = geometry::polygon_is_convex(&polygon, 1e-12 * diameter * diameter);
            cells.push(DualCell {
                vertex: v,
                center: mesh.vertices()[v],
                polygon,
                area,
                diameter,
                poincare: if convex { 1.0 / PI } else { 1.0 },
                interior,
                fragments: std::mem::take(&mut fragments[v]),
            });
        }
        Ok(DualMesh { cells, faces, boundary_faces })
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn total_area(&self) -> f64 {
        self.cells.iter().map(|c| c.area).sum()
    }

    /// `Σ length · normal` over the boundary of each cell; zero for a closed polygon.
    pub fn closure_defect(&self) -> Vec<Point> {
        let mut acc = vec![[0.0; 2]; self.cells.len()];
        for f in &self.faces {
            let s = geometry::scale(f.normal, f.length);
            acc[f.a] = geometry::add(acc[f.a], s);
            acc[f.b] = geometry::sub(acc[f.b], s);
        }
        for f in &self.boundary_faces {
            acc[f.cell] = geometry::add(acc[f.cell], geometry::scale(f.normal, f.length));
        }
        acc
    }
}

/// Counter-clockwise corner list: edge midpoints and triangle barycenters
/// around the vertex, closed through the vertex itself on the boundary.
fn cell_polygon(mesh: &CoarseMesh, v: usize, star: &[usize]) -> Result<Vec<Point>> {
    // each incident triangle seen from v as (v, j, k) counter-clockwise
    let local: Vec<(usize, usize, usize)> = star
        .iter()
        .map(|&t| {
            let tri = mesh.triangles()[t];
            let r = tri.iter().position(|&w| w == v).unwrap_or(0);
            (t, tri[(r + 1) % 3], tri[(r + 2) % 3])
        })
        .collect();
    if local.is_empty() {
        return Err(Error::NonConforming(format!("vertex {v} has no incident triangle")));
    }
    let start = local.iter().position(|&(_, j, _)| !local.iter().any(|&(_, _, k)| k == j)).unwrap_or(0);
    let x = mesh.vertices()[v];
    let mut poly = Vec::with_capacity(2 * local.len() + 2);
    let on_boundary = mesh.is_boundary(v);
    if on_boundary {
        poly.push(x);
    }
    let mut used = vec![false; local.len()];
    let mut cur = start;
    for _ in 0..local.len() {
        used[cur] = true;
        let (t, j, k) = local[cur];
        let bc = geometry::centroid(&mesh.triangle_points(t));
        poly.push(geometry::midpoint(x, mesh.vertices()[j]));
        poly.push(bc);
        match local.iter().position(|&(_, jj, _)| jj == k) {
            Some(next) if !used[next] => cur = next,
            _ => {
                if on_boundary {
                    poly.push(geometry::midpoint(x, mesh.vertices()[k]));
                }
                break;
            }
        }
    }
    if used.iter().any(|u| !u) {
        return Err(Error::NonConforming(format!("star of vertex {v} is not edge-connected")));
    }
    Ok(poly)
}
