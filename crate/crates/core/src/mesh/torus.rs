use crate::error::{Error, Result};
use crate::geometry::{self, Point};

/// Interior face of the periodic cell triangulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusEdge {
    pub triangles: [usize; 2],
    pub length: f64,
    /// Diameter of the union of the two incident triangles.
    pub h: f64,
}

/// Uniform `m × m` triangulation of `Y = [-1/2, 1/2)²` with opposite sides
/// identified.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusMesh {
    m: usize,
    raw: Vec<Point>,
    representative: Vec<usize>,
    /// Triangles in raw-vertex indices (unwrapped geometry).
    raw_triangles: Vec<[usize; 3]>,
    /// Triangles in periodic degree-of-freedom indices.
    dof_triangles: Vec<[usize; 3]>,
    edges: Vec<TorusEdge>,
}

impl TorusMesh {
    pub fn build(m: usize) -> Result<TorusMesh> {
        if m < 2 {
            return Err(Error::MeshParameters(format!("torus resolution must be at least 2, got {m}")));
        }
        let h = 1.0 / m as f64;
        let raw_idx = |i: usize, j: usize| j * (m + 1) + i;
        let dof = |i: usize, j: usize| (j % m) * m + (i % m);
        let mut raw = Vec::with_capacity((m + 1) * (m + 1));
        let mut representative = Vec::with_capacity((m + 1) * (m + 1));
        for j in 0..=m {
            for i in 0..=m {
                raw.push([-0.5 + i as f64 * h, -0.5 + j as f64 * h]);
                representative.push(dof(i, j));
            }
        }
        let mut raw_triangles = Vec::with_capacity(2 * m * m);
        let mut dof_triangles = Vec::with_capacity(2 * m * m);
        for j in 0..m {
            for i in 0..m {
                let r = [raw_idx(i, j), raw_idx(i + 1, j), raw_idx(i, j + 1), raw_idx(i + 1, j + 1)];
                let d = [dof(i, j), dof(i + 1, j), dof(i, j + 1), dof(i + 1, j + 1)];
                // lower-right and upper-left halves of the quad
                raw_triangles.push([r[0], r[1], r[3]]);
                dof_triangles.push([d[0], d[1], d[3]]);
                raw_triangles.push([r[0], r[3], r[2]]);
                dof_triangles.push([d[0], d[3], d[2]]);
            }
        }
        let lower = |i: usize, j: usize| 2 * (j * m + i);
        let upper = |i: usize, j: usize| 2 * (j * m + i) + 1;
        let mut edges = Vec::with_capacity(3 * m * m);
        let diag = h * std::f64::consts::SQRT_2;
        let long = h * 5f64.sqrt();
        for j in 0..m {
            for i in 0..m {
                let below = (j + m - 1) % m;
                let left = (i + m - 1) % m;
                edges.push(TorusEdge { triangles: [lower(i, j), upper(i, below)], length: h, h: long });
                edges.push(TorusEdge { triangles: [upper(i, j), lower(left, j)], length: h, h: long });
                edges.push(TorusEdge { triangles: [lower(i, j), upper(i, j)], length: diag, h: diag });
            }
        }
        Ok(TorusMesh { m, raw, representative, raw_triangles, dof_triangles, edges })
    }

    pub fn resolution(&self) -> usize {
        self.m
    }

    pub fn n_dofs(&self) -> usize {
        self.m * self.m
    }

    pub fn n_triangles(&self) -> usize {
        self.raw_triangles.len()
    }

    pub fn raw_vertices(&self) -> &[Point] {
        &self.raw
    }

    pub fn representative(&self, raw: usize) -> usize {
        self.representative[raw]
    }

    pub fn raw_triangles(&self) -> &[[usize; 3]] {
        &self.raw_triangles
    }

    pub fn dofs(&self, t: usize) -> [usize; 3] {
        self.dof_triangles[t]
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.raw_triangles[t];
        [self.raw[a], self.raw[b], self.raw[c]]
    }

    pub fn triangle_area(&self) -> f64 {
        0.5 / (self.m * self.m) as f64
    }

    pub fn edges(&self) -> &[TorusEdge] {
        &self.edges
    }

    /// Raw coordinates of each periodic vertex class, taken in `[-1/2, 1/2)²`.
    pub fn dof_points(&self) -> Vec<Point> {
        let h = 1.0 / self.m as f64;
        (0..self.n_dofs()).map(|d| [-0.5 + (d % self.m) as f64 * h, -0.5 + (d / self.m) as f64 * h]).collect()
    }

    /// Cache key.
    pub fn id(&self) -> u64 {
        self.m as u64
    }

    /// Triangle containing `y` (wrapped into the cell).
    pub fn locate(&self, y: Point) -> usize {
        let m = self.m as f64;
        let wrap = |v: f64| (v + 0.5).rem_euclid(1.0);
        let (u, v) = (wrap(y[0]) * m, wrap(y[1]) * m);
        let i = (u.floor() as usize).min(self.m - 1);
        let j = (v.floor() as usize).min(self.m - 1);
        let (fu, fv) = (u - i as f64, v - j as f64);
        let q = 2 * (j * self.m + i);
        if fv <= fu {
            q
        } else {
            q + 1
        }
    }

    pub fn total_edge_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    pub fn triangle_gradients(&self, t: usize) -> [Point; 3] {
        geometry::p1_gradients(&self.triangle_points(t))
    }
}
