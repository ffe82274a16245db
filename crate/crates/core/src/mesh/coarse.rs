use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::geometry::{self, Point};

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };

    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        p[0] >= self.x0 - tol && p[0] <= self.x1 + tol && p[1] >= self.y0 - tol && p[1] <= self.y1 + tol
    }
}

/// Conforming triangulation of a rectangle.
///
/// Every triangle `[a, b, c]` is counter-clockwise; `(a, b)` is its
/// refinement edge and `c` its newest vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    generation: Vec<u32>,
    boundary: Vec<bool>,
    parents: Vec<Option<(usize, usize)>>,
    domain: Rect,
}

#[inline]
fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl CoarseMesh {
    /// `nx × ny` quads, each split along its south-west to north-east diagonal.
    pub fn build_structured(nx: usize, ny: usize, domain: Rect) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::MeshParameters(format!("subdivision counts must be positive, got {nx} x {ny}")));
        }
        if !(domain.x1 > domain.x0 && domain.y1 > domain.y0) {
            return Err(Error::MeshParameters(format!("degenerate domain {domain:?}")));
        }
        let hx = (domain.x1 - domain.x0) / nx as f64;
        let hy = (domain.y1 - domain.y0) / ny as f64;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let x = if i == nx { domain.x1 } else { domain.x0 + i as f64 * hx };
                let y = if j == ny { domain.y1 } else { domain.y0 + j as f64 * hy };
                vertices.push([x, y]);
            }
        }
        let idx = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
                triangles.push([v11, v00, v10]);
                triangles.push([v00, v11, v01]);
            }
        }
        let n_tri = triangles.len();
        let n_vert = vertices.len();
        let mut mesh = CoarseMesh {
            vertices,
            triangles,
            generation: vec![0; n_tri],
            boundary: vec![false; n_vert],
            parents: vec![None; n_vert],
            domain,
        };
        mesh.update_boundary();
        Ok(mesh)
    }

    /// Build from raw data; triangles are reoriented counter-clockwise and
    /// their longest edge becomes the refinement edge.
    pub fn from_raw(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mut tris = Vec::with_capacity(triangles.len());
        for t in triangles {
            if t.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::MeshParameters("triangle references missing vertex".into()));
            }
            let mut t = t;
            let p = [vertices[t[0]], vertices[t[1]], vertices[t[2]]];
            let area = geometry::signed_area(&p);
            if area == 0.0 {
                return Err(Error::MeshParameters("degenerate triangle".into()));
            }
            if area < 0.0 {
                t.swap(1, 2);
            }
            // rotate so the longest edge is (t0, t1)
            let len = |a: usize, b: usize| geometry::dist(vertices[t[a]], vertices[t[b]]);
            let edges = [len(0, 1), len(1, 2), len(2, 0)];
            let k = (0..3).max_by(|&a, &b| edges[a].total_cmp(&edges[b])).unwrap_or(0);
            tris.push([t[k], t[(k + 1) % 3], t[(k + 2) % 3]]);
        }
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for v in &vertices {
            x0 = x0.min(v[0]);
            x1 = x1.max(v[0]);
            y0 = y0.min(v[1]);
            y1 = y1.max(v[1]);
        }
        let n_tri = tris.len();
        let n_vert = vertices.len();
        let mut mesh = CoarseMesh {
            vertices,
            triangles: tris,
            generation: vec![0; n_tri],
            boundary: vec![false; n_vert],
            parents: vec![None; n_vert],
            domain: Rect::new(x0, x1, y0, y1),
        };
        mesh.check_conforming()?;
        mesh.update_boundary();
        Ok(mesh)
    }

    fn edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut count = HashMap::with_capacity(3 * self.triangles.len() / 2 + 8);
        for t in &self.triangles {
            for k in 0..3 {
                *count.entry(edge_key(t[k], t[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        count
    }

    fn update_boundary(&mut self) {
        self.boundary = vec![false; self.vertices.len()];
        for ((a, b), c) in self.edge_counts() {
            if c == 1 {
                self.boundary[a] = true;
                self.boundary[b] = true;
            }
        }
    }

    /// Every edge is shared by at most two triangles and no vertex lies in
    /// the interior of another triangle's edge.
    pub fn check_conforming(&self) -> Result<()> {
        let counts = self.edge_counts();
        if let Some(((a, b), c)) = counts.iter().find(|(_, &c)| c > 2) {
            return Err(Error::NonConforming(format!("edge ({a}, {b}) shared by {c} triangles")));
        }
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &v in t {
                used[v] = true;
            }
        }
        for (&(a, b), &c) in &counts {
            if c != 1 {
                continue;
            }
            let (pa, pb) = (self.vertices[a], self.vertices[b]);
            let d = geometry::sub(pb, pa);
            let len2 = geometry::dot(d, d);
            for (v, p) in self.vertices.iter().enumerate() {
                if v == a || v == b || !used[v] {
                    continue;
                }
                let w = geometry::sub(*p, pa);
                let s = geometry::dot(w, d) / len2;
                let off = geometry::cross(d, w).abs() / len2.sqrt();
                if s > 1e-12 && s < 1.0 - 1e-12 && off < 1e-12 * len2.sqrt() {
                    return Err(Error::NonConforming(format!("hanging vertex {v} on edge ({a}, {b})")));
                }
            }
        }
        Ok(())
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn generation(&self) -> &[u32] {
        &self.generation
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    /// Endpoints of the edge a vertex was created on, if it was created by
    /// bisection.
    pub fn parent_edge(&self, v: usize) -> Option<(usize, usize)> {
        self.parents[v]
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        geometry::signed_area(&self.triangle_points(t))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.triangle_area(t)).sum()
    }

    /// Longest edge over all triangles.
    pub fn max_edge(&self) -> f64 {
        (0..self.n_triangles())
            .map(|t| {
                let p = self.triangle_points(t);
                (0..3).map(|k| geometry::dist(p[k], p[(k + 1) % 3])).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Smallest interior angle in degrees.
    pub fn min_angle(&self) -> f64 {
        let mut min = f64::INFINITY;
        for t in 0..self.n_triangles() {
            let p = self.triangle_points(t);
            for k in 0..3 {
                let u = geometry::sub(p[(k + 1) % 3], p[k]);
                let v = geometry::sub(p[(k + 2) % 3], p[k]);
                let ang = geometry::cross(u, v).atan2(geometry::dot(u, v)).abs();
                min = min.min(ang.to_degrees());
            }
        }
        min
    }

    /// Triangles incident to each vertex.
    pub fn vertex_triangles(&self) -> Vec<Vec<usize>> {
        let mut star = vec![Vec::new(); self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                star[v].push(t);
            }
        }
        star
    }

    /// Newest-vertex bisection of the marked triangles, with closure.
    pub fn refine(&self, marked: &BTreeSet<usize>) -> Result<CoarseMesh> {
        if let Some(&t) = marked.iter().find(|&&t| t >= self.triangles.len()) {
            return Err(Error::MeshParameters(format!("marked triangle {t} does not exist")));
        }
        let mut out = self.clone();
        if marked.is_empty() {
            return Ok(out);
        }
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut flagged: Vec<bool> = (0..out.triangles.len()).map(|t| marked.contains(&t)).collect();
        loop {
            let mut next_tris = Vec::with_capacity(out.triangles.len() + 16);
            let mut next_gen = Vec::with_capacity(out.triangles.len() + 16);
            let mut changed = false;
            for (t, &[a, b, c]) in out.triangles.iter().enumerate() {
                let hanging = [(a, b), (b, c), (c, a)].iter().any(|&(p, q)| midpoints.contains_key(&edge_key(p, q)));
                if !(flagged[t] || hanging) {
                    next_tris.push([a, b, c]);
                    next_gen.push(out.generation[t]);
                    continue;
                }
                changed = true;
                let key = edge_key(a, b);
                let m = match midpoints.get(&key) {
                    Some(&m) => m,
                    None => {
                        let m = out.vertices.len();
                        out.vertices.push(geometry::midpoint(out.vertices[a], out.vertices[b]));
                        out.parents.push(Some(key));
                        midpoints.insert(key, m);
                        m
                    }
                };
                let g = out.generation[t] + 1;
                next_tris.push([c, a, m]);
                next_tris.push([b, c, m]);
                next_gen.push(g);
                next_gen.push(g);
            }
            out.triangles = next_tris;
            out.generation = next_gen;
            flagged = vec![false; out.triangles.len()];
            if !changed {
                break;
            }
        }
        out.update_boundary();
        Ok(out)
    }

    /// Uniform refinement: every triangle bisected twice.
    pub fn refine_uniform(&self) -> Result<CoarseMesh> {
        let all: BTreeSet<usize> = (0..self.n_triangles()).collect();
        let once = self.refine(&all)?;
        let all: BTreeSet<usize> = (0..once.n_triangles()).collect();
        once.refine(&all)
    }

    /// Interpolate a nodal P1 field onto a mesh obtained from `self` by
    /// refinement, using the recorded parent edges.
    pub fn prolongate(&self, fine: &CoarseMesh, values: &[f64]) -> Result<Vec<f64>> {
        if fine.n_vertices() < self.n_vertices() || fine.vertices[..self.n_vertices()] != self.vertices[..] {
            return Err(Error::UnrelatedMeshes(format!(
                "{} vertices cannot be prolongated to {}",
                self.n_vertices(),
                fine.n_vertices()
            )));
        }
        let mut out = Vec::with_capacity(fine.n_vertices());
        out.extend_from_slice(&values[..self.n_vertices()]);
        for v in self.n_vertices()..fine.n_vertices() {
            let Some((a, b)) = fine.parents[v] else {
                return Err(Error::UnrelatedMeshes(format!("vertex {v} has no parent edge")));
            };
            out.push(0.5 * (out[a] + out[b]));
        }
        Ok(out)
    }
}

/// Bucket grid for locating points in a triangulation.
#[derive(Debug, Clone)]
pub struct PointLocator<'a> {
    mesh: &'a CoarseMesh,
    n: usize,
    domain: Rect,
    buckets: Vec<Vec<usize>>,
}

impl<'a> PointLocator<'a> {
    pub fn new(mesh: &'a CoarseMesh) -> Self {
        let n = ((mesh.n_triangles() as f64).sqrt().ceil() as usize).max(1);
        let domain = mesh.domain();
        let mut buckets = vec![Vec::new(); n * n];
        let cell = |x: f64, lo: f64, hi: f64| -> usize {
            (((x - lo) / (hi - lo) * n as f64).floor().max(0.0) as usize).min(n - 1)
        };
        for t in 0..mesh.n_triangles() {
            let p = mesh.triangle_points(t);
            let (mut xa, mut xb, mut ya, mut yb) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
            for q in &p {
                xa = xa.min(q[0]);
                xb = xb.max(q[0]);
                ya = ya.min(q[1]);
                yb = yb.max(q[1]);
            }
            for j in cell(ya, domain.y0, domain.y1)..=cell(yb, domain.y0, domain.y1) {
                for i in cell(xa, domain.x0, domain.x1)..=cell(xb, domain.x0, domain.x1) {
                    buckets[j * n + i].push(t);
                }
            }
        }
        PointLocator { mesh, n, domain, buckets }
    }

    /// Containing triangle and barycentric coordinates.
    pub fn locate(&self, x: Point) -> Option<(usize, [f64; 3])> {
        let d = self.domain;
        if !d.contains(x, 1e-12) {
            return None;
        }
        let n = self.n;
        let i = (((x[0] - d.x0) / (d.x1 - d.x0) * n as f64).floor().max(0.0) as usize).min(n - 1);
        let j = (((x[1] - d.y0) / (d.y1 - d.y0) * n as f64).floor().max(0.0) as usize).min(n - 1);
        let mut best: Option<(usize, [f64; 3])> = None;
        let mut best_min = f64::NEG_INFINITY;
        for &t in &self.buckets[j * n + i] {
            let lam = geometry::barycentric(&self.mesh.triangle_points(t), x);
            let m = lam.iter().copied().fold(f64::INFINITY, f64::min);
            if m > best_min {
                best_min = m;
                best = Some((t, lam));
            }
        }
        best.filter(|_| best_min >= -1e-10)
    }

    /// P1 interpolant of nodal `values` at `x`.
    pub fn eval(&self, values: &[f64], x: Point) -> Option<f64> {
        let (t, lam) = self.locate(x)?;
        let tri = self.mesh.triangles[t];
        Some((0..3).map(|k| lam[k] * values[tri[k]]).sum())
    }
}
