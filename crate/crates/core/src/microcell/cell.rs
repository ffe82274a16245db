use super::{Coefficient, MicroConfig};
use crate::error::{Error, Result};
use crate::geometry::{self, Point, Tensor2};
use crate::linalg::{self, conjugate_gradient, reverse_cuthill_mckee, SkylineLdl, SolverKind, SparseMatrix, Triplets};
use crate::mesh::TorusMesh;

const UNIT: [Point; 2] = [[1.0, 0.0], [0.0, 1.0]];

/// Centroids of the `q²` congruent sub-triangles of a uniform subdivision.
pub fn subtriangle_centroids(p: &[Point; 3], q: usize) -> Vec<Point> {
    let e1 = geometry::sub(p[1], p[0]);
    let e2 = geometry::sub(p[2], p[0]);
    let at = |a: f64, b: f64| {
        let (a, b) = (a / q as f64, b / q as f64);
        [p[0][0] + a * e1[0] + b * e2[0], p[0][1] + a * e1[1] + b * e2[1]]
    };
    let mut pts = Vec::with_capacity(q * q);
    for i in 0..q {
        for j in 0..q - i {
            let (fi, fj) = (i as f64, j as f64);
            pts.push(at(fi + 1.0 / 3.0, fj + 1.0 / 3.0));
            if i + j + 1 < q {
                pts.push(at(fi + 2.0 / 3.0, fj + 2.0 / 3.0));
            }
        }
    }
    pts
}

/// Piecewise constant sample of `y ↦ K^ε(x_D + κ y)` on the torus mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCoefficient {
    pub values: Vec<Tensor2>,
    /// Extreme eigenvalues over all sample points.
    pub alpha: f64,
    pub beta: f64,
}

pub fn sample_coefficient(
    field: &Coefficient,
    x_d: Point,
    cfg: &MicroConfig,
    torus: &TorusMesh,
) -> Result<SampledCoefficient> {
    let q = cfg.subsamples;
    let mut values = Vec::with_capacity(torus.n_triangles());
    let (mut alpha, mut beta) = (f64::INFINITY, 0.0f64);
    for t in 0..torus.n_triangles() {
        let mut acc = Tensor2::ZERO;
        let pts = subtriangle_centroids(&torus.triangle_points(t), q);
        for y in &pts {
            let k = field.eval(geometry::add(x_d, geometry::scale(*y, cfg.kappa)))?;
            let e = k.eigenvalues();
            alpha = alpha.min(e[0]);
            beta = beta.max(e[1]);
            acc = acc + k;
        }
        values.push(acc * (1.0 / pts.len() as f64));
    }
    Ok(SampledCoefficient { values, alpha, beta })
}

/// Periodic P1 stiffness matrix and the right-hand sides of both cell problems.
pub fn assemble_cell_system(coeff: &[Tensor2], torus: &TorusMesh) -> (SparseMatrix, [Vec<f64>; 2]) {
    let n = torus.n_dofs();
    let area = torus.triangle_area();
    let mut t = Triplets::with_capacity(n, n, 9 * torus.n_triangles());
    let mut rhs = [vec![0.0; n], vec![0.0; n]];
    for tri in 0..torus.n_triangles() {
        let g = torus.triangle_gradients(tri);
        let dofs = torus.dofs(tri);
        let k = coeff[tri];
        for a in 0..3 {
            for b in 0..3 {
                t.add(dofs[a], dofs[b], area * k.quad(g[a], g[b]));
            }
            for (i, r) in rhs.iter_mut().enumerate() {
                r[dofs[a]] -= area * k.quad(g[a], UNIT[i]);
            }
        }
    }
    (t.build(), rhs)
}

/// Factorized zero-mean cell operator, reusable for both directions.
pub struct CellOperator {
    stiffness: SparseMatrix,
    bordered: SparseMatrix,
    weights: Vec<f64>,
    factor: Option<SkylineLdl>,
    kind: SolverKind,
    tol: f64,
}

impl CellOperator {
    pub fn new(stiffness: SparseMatrix, torus: &TorusMesh, kind: SolverKind, tol: f64) -> Result<Self> {
        let n = stiffness.n_rows();
        // ∫ φ_a = (number of incident triangles) · |T| / 3
        let mut weights = vec![0.0; n];
        for tri in 0..torus.n_triangles() {
            for d in torus.dofs(tri) {
                weights[d] += torus.triangle_area() / 3.0;
            }
        }
        let mut t = Triplets::with_capacity(n + 1, n + 1, stiffness.nnz() + 2 * n);
        for i in 0..n {
            let (cols, vals) = stiffness.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                t.add(i, j, v);
            }
            t.add(i, n, weights[i]);
            t.add(n, i, weights[i]);
        }
        let bordered = t.build();
        let factor = match kind {
            SolverKind::Direct => {
                // multiplier just before the last node keeps every pivot nonzero
                let mut order = reverse_cuthill_mckee(&stiffness);
                let last = order.pop().ok_or_else(|| Error::Dimension("empty cell system".into()))?;
                order.push(n);
                order.push(last);
                Some(SkylineLdl::factor(&bordered, &order)?)
            }
            SolverKind::Iterative => None,
        };
        Ok(CellOperator { stiffness, bordered, weights, factor, kind, tol })
    }

    /// Zero-mean solution of `A w = b`; `b` must have zero sum.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = b.len();
        if b.iter().all(|&v| v == 0.0) {
            return Ok(vec![0.0; n]);
        }
        match self.kind {
            SolverKind::Direct => {
                let f = self.factor.as_ref().ok_or_else(|| Error::Breakdown("missing factorization".into()))?;
                let mut rhs = b.to_vec();
                rhs.push(0.0);
                let x = f.solve(&rhs);
                let x = linalg::refine_and_check(&self.bordered, &rhs, x, self.tol, |r| f.solve(r))?;
                Ok(x[..n].to_vec())
            }
            SolverKind::Iterative => {
                let mean_free = |v: &mut [f64]| {
                    let m = v.iter().sum::<f64>() / v.len() as f64;
                    v.iter_mut().for_each(|x| *x -= m);
                };
                let mut w = conjugate_gradient(&self.stiffness, b, None, self.tol, 50 * n + 100, Some(&mean_free))?;
                let total: f64 = self.weights.iter().sum();
                let mean = self.weights.iter().zip(&w).map(|(c, x)| c * x).sum::<f64>() / total;
                w.iter_mut().for_each(|x| *x -= mean);
                Ok(w)
            }
        }
    }

    pub fn stiffness(&self) -> &SparseMatrix {
        &self.stiffness
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Single cell problem in direction `i ∈ {0, 1}`.
pub fn solve_cell(coeff: &[Tensor2], torus: &TorusMesh, i: usize, cfg: &MicroConfig) -> Result<Vec<f64>> {
    let (a, rhs) = assemble_cell_system(coeff, torus);
    let op = CellOperator::new(a, torus, cfg.solver, cfg.tol)?;
    op.solve(&rhs[i])
}

/// Per-triangle gradient of a nodal periodic field.
pub fn corrector_gradients(w: &[f64], torus: &TorusMesh) -> Vec<Point> {
    (0..torus.n_triangles())
        .map(|t| {
            let g = torus.triangle_gradients(t);
            let d = torus.dofs(t);
            let mut grad = [0.0; 2];
            for k in 0..3 {
                grad = geometry::add(grad, geometry::scale(g[k], w[d[k]]));
            }
            grad
        })
        .collect()
}

/// Solved cell problems at one sample point.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSolution {
    pub x_d: Point,
    pub coeff: Vec<Tensor2>,
    pub correctors: [Vec<f64>; 2],
    pub gradients: [Vec<Point>; 2],
    pub alpha: f64,
    pub beta: f64,
    /// Relative Galerkin residual of each corrector.
    pub residual: [f64; 2],
    /// Full-cell effective tensor.
    pub full_tensor: Tensor2,
    /// Effective tensor averaged over the oversampling sub-cube.
    pub tensor: Tensor2,
    pub jump: f64,
}

impl CellSolution {
    pub fn compute(field: &Coefficient, x_d: Point, cfg: &MicroConfig, torus: &TorusMesh) -> Result<Self> {
        let sample = sample_coefficient(field, x_d, cfg, torus)?;
        let (a, rhs) = assemble_cell_system(&sample.values, torus);
        let op = CellOperator::new(a, torus, cfg.solver, cfg.tol)?;
        let w0 = op.solve(&rhs[0])?;
        let w1 = op.solve(&rhs[1])?;
        let residual = [
            linalg::relative_residual(op.stiffness(), &w0, &rhs[0]),
            linalg::relative_residual(op.stiffness(), &w1, &rhs[1]),
        ];
        let gradients = [corrector_gradients(&w0, torus), corrector_gradients(&w1, torus)];
        let mut sol = CellSolution {
            x_d,
            coeff: sample.values,
            correctors: [w0, w1],
            gradients,
            alpha: sample.alpha,
            beta: sample.beta,
            residual,
            full_tensor: Tensor2::ZERO,
            tensor: Tensor2::ZERO,
            jump: 0.0,
        };
        sol.full_tensor = sol.effective_tensor(torus);
        sol.tensor = sol.oversampled_tensor(torus, cfg);
        sol.jump = sol.jump_indicator(torus);
        Ok(sol)
    }

    /// `K_T (e_i + ∇w^i_T)`.
    pub fn flux(&self, t: usize, i: usize) -> Point {
        self.coeff[t].apply(geometry::add(UNIT[i], self.gradients[i][t]))
    }

    fn weighted_tensor(&self, weights: &[f64]) -> Tensor2 {
        let mut k = [[0.0; 2]; 2];
        for (t, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for i in 0..2 {
                let gi = geometry::add(UNIT[i], self.gradients[i][t]);
                for j in i..2 {
                    let gj = geometry::add(UNIT[j], self.gradients[j][t]);
                    k[i][j] += w * self.coeff[t].quad(gi, gj);
                }
            }
        }
        Tensor2::new(k[0][0], k[0][1], k[1][1])
    }

    /// `∫_Y K (e_i + ∇w^i)·(e_j + ∇w^j)`.
    pub fn effective_tensor(&self, torus: &TorusMesh) -> Tensor2 {
        self.weighted_tensor(&vec![torus.triangle_area(); torus.n_triangles()])
    }

    /// `∫_Y K (e_i + ∇w^i)·e_j`, unsymmetrized.
    pub fn effective_tensor_nonsymmetric(&self, torus: &TorusMesh) -> [[f64; 2]; 2] {
        let mut k = [[0.0; 2]; 2];
        for t in 0..torus.n_triangles() {
            for (i, row) in k.iter_mut().enumerate() {
                let f = self.flux(t, i);
                for (j, v) in row.iter_mut().enumerate() {
                    *v += torus.triangle_area() * f[j];
                }
            }
        }
        k
    }

    /// Average over the centered sub-cube of relative edge `κ₀/κ`.
    pub fn oversampled_tensor(&self, torus: &TorusMesh, cfg: &MicroConfig) -> Tensor2 {
        if cfg.kappa0 >= cfg.kappa {
            return self.effective_tensor(torus);
        }
        let r = 0.5 * cfg.kappa0 / cfg.kappa;
        if 2.0 * r * (torus.resolution() as f64) < 2.0 {
            log::warn!(
                "oversampling sub-cube of relative size {} spans fewer than 2 cell mesh layers (m = {})",
                2.0 * r,
                torus.resolution()
            );
        }
        let box_area = 4.0 * r * r;
        let weights: Vec<f64> = (0..torus.n_triangles())
            .map(|t| {
                let clipped = geometry::clip_to_box(&torus.triangle_points(t), -r, r);
                if clipped.len() < 3 {
                    0.0
                } else {
                    geometry::polygon_area(&clipped) / box_area
                }
            })
            .collect();
        self.weighted_tensor(&weights)
    }

    /// `(Σ_E h_E Σ_i ‖[K(e_i + ∇w^i)]_E‖²_{L²(E)})^{1/2}`.
    pub fn jump_indicator(&self, torus: &TorusMesh) -> f64 {
        let mut acc = 0.0;
        for e in torus.edges() {
            let [t1, t2] = e.triangles;
            let mut s = 0.0;
            for i in 0..2 {
                let d = geometry::sub(self.flux(t1, i), self.flux(t2, i));
                s += geometry::dot(d, d);
            }
            acc += e.h * s * e.length;
        }
        acc.sqrt()
    }

    /// `‖(K_{ε,κ}(x,·) − K_{ε,κ,h}(x_D,·))(e_i + ∇w^i)‖_{L²(Y)}`, summed in
    /// squares over `i`.
    pub fn discrepancy_at(&self, field: &Coefficient, x: Point, cfg: &MicroConfig, torus: &TorusMesh) -> Result<f64> {
        let q = cfg.subsamples;
        let w = torus.triangle_area() / (q * q) as f64;
        let mut acc = 0.0;
        for t in 0..torus.n_triangles() {
            let g = [geometry::add(UNIT[0], self.gradients[0][t]), geometry::add(UNIT[1], self.gradients[1][t])];
            for y in subtriangle_centroids(&torus.triangle_points(t), q) {
                let diff = field.eval(geometry::add(x, geometry::scale(y, cfg.kappa)))? - self.coeff[t];
                if diff == Tensor2::ZERO {
                    continue;
                }
                for gi in &g {
                    let v = diff.apply(*gi);
                    acc += w * geometry::dot(v, v);
                }
            }
        }
        Ok(acc.sqrt())
    }

    /// Maximum of [`Self::discrepancy_at`] over the given sample points.
    pub fn discrepancy(
        &self,
        field: &Coefficient,
        points: &[Point],
        cfg: &MicroConfig,
        torus: &TorusMesh,
    ) -> Result<f64> {
        let mut sup: f64 = 0.0;
        for &x in points {
            sup = sup.max(self.discrepancy_at(field, x, cfg, torus)?);
        }
        Ok(sup)
    }
}
