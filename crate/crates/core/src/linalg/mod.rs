//! Sparse linear algebra: CSR storage, bandwidth-reducing ordering, direct
//! envelope/band factorizations and preconditioned Krylov solvers.

mod direct;
mod iterative;
mod ordering;
mod sparse;

pub use direct::{BandLu, SkylineLdl};
pub use iterative::{bicgstab, conjugate_gradient};
pub use ordering::{bandwidths, invert, rcm_excluding, reverse_cuthill_mckee};
pub use sparse::{dot, norm2, relative_residual, SparseMatrix, Triplets};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    #[default]
    Direct,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolverOptions {
    pub kind: SolverKind,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LinearSolverOptions {
    fn default() -> Self {
        LinearSolverOptions { kind: SolverKind::Direct, tol: 1e-10, max_iter: 20_000 }
    }
}

impl LinearSolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        LinearSolverOptions { tol, ..Default::default() }
    }
}

const REFINEMENT_STEPS: usize = 3;

fn check_square(a: &SparseMatrix, b: &[f64]) -> Result<()> {
    if a.n_rows() != a.n_cols() || a.n_rows() != b.len() {
        return Err(Error::Dimension(format!(
            "{}x{} system with right-hand side of length {}",
            a.n_rows(),
            a.n_cols(),
            b.len()
        )));
    }
    Ok(())
}

/// Iterative refinement with a fixed factorization, then the residual check.
pub(crate) fn refine_and_check(
    a: &SparseMatrix,
    b: &[f64],
    mut x: Vec<f64>,
    tol: f64,
    solve: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<Vec<f64>> {
    let mut res = relative_residual(a, &x, b);
    for _ in 0..REFINEMENT_STEPS {
        if res <= tol {
            break;
        }
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let dx = solve(&r);
        let trial: Vec<f64> = x.iter().zip(&dx).map(|(p, q)| p + q).collect();
        let trial_res = relative_residual(a, &trial, b);
        if trial_res >= res {
            break;
        }
        x = trial;
        res = trial_res;
    }
    if res <= tol && res.is_finite() {
        Ok(x)
    } else {
        Err(Error::NotConverged { residual: res, tol })
    }
}

/// Solve a symmetric positive definite system.
pub fn solve_spd(a: &SparseMatrix, b: &[f64], opts: &LinearSolverOptions) -> Result<Vec<f64>> {
    check_square(a, b)?;
    if b.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; b.len()]);
    }
    match opts.kind {
        SolverKind::Direct => {
            let ldl = SkylineLdl::factor(a, &reverse_cuthill_mckee(a))?;
            let x = ldl.solve(b);
            refine_and_check(a, b, x, opts.tol, |r| ldl.solve(r))
        }
        SolverKind::Iterative => {
            let x = conjugate_gradient(a, b, None, opts.tol, opts.max_iter, None)?;
            let res = relative_residual(a, &x, b);
            if res <= opts.tol {
                Ok(x)
            } else {
                Err(Error::NotConverged { residual: res, tol: opts.tol })
            }
        }
    }
}

/// Solve a general nonsingular system.
pub fn solve_general(a: &SparseMatrix, b: &[f64], opts: &LinearSolverOptions) -> Result<Vec<f64>> {
    check_square(a, b)?;
    if b.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; b.len()]);
    }
    match opts.kind {
        SolverKind::Direct => {
            let lu = BandLu::factor(a, &reverse_cuthill_mckee(a))?;
            let x = lu.solve(b);
            refine_and_check(a, b, x, opts.tol, |r| lu.solve(r))
        }
        SolverKind::Iterative => {
            let x = bicgstab(a, b, opts.tol, opts.max_iter)?;
            let res = relative_residual(a, &x, b);
            if res <= opts.tol {
                Ok(x)
            } else {
                Err(Error::NotConverged { residual: res, tol: opts.tol })
            }
        }
    }
}
