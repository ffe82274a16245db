use super::ordering::{bandwidths, invert};
use super::SparseMatrix;
use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-14;

/// Symmetric `L D Lᵀ` factorization on the variable-band (envelope) profile
/// of `P A Pᵀ`. No pivoting; indefinite matrices are fine as long as every
/// leading minor of the permuted matrix is nonsingular.
#[derive(Debug, Clone)]
pub struct SkylineLdl {
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    lower: Vec<f64>,
    diag: Vec<f64>,
}

impl SkylineLdl {
    pub fn factor(a: &SparseMatrix, perm: &[usize]) -> Result<Self> {
        let n = a.n_rows();
        if a.n_cols() != n || perm.len() != n {
            return Err(Error::Dimension(format!(
                "skyline factor of {}x{} with ordering of length {}",
                n,
                a.n_cols(),
                perm.len()
            )));
        }
        let inv = invert(perm);
        let mut first: Vec<usize> = (0..n).collect();
        for old_i in 0..n {
            let (cols, _) = a.row(old_i);
            let i = inv[old_i];
            for &old_j in cols {
                let j = inv[old_j];
                if j < i {
                    first[i] = first[i].min(j);
                } else if i < j {
                    first[j] = first[j].min(i);
                }
            }
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i]);
        }
        let mut lower = vec![0.0; start[n]];
        let mut diag = vec![0.0; n];
        let scale = a.diagonal().iter().fold(0.0f64, |m, d| m.max(d.abs())).max(1e-300);

        for old_i in 0..n {
            let (cols, vals) = a.row(old_i);
            let i = inv[old_i];
            for (&old_j, &v) in cols.iter().zip(vals) {
                let j = inv[old_j];
                if j < i {
                    lower[start[i] + j - first[i]] = v;
                } else if j == i {
                    diag[i] = v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let row_i = start[i];
            // lower[row_i..] temporarily holds g_ik = L_ik * D_k
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let mut s = lower[row_i + j - fi];
                let row_j = start[j];
                for k in k0..j {
                    s -= lower[row_i + k - fi] * lower[row_j + k - fj];
                }
                lower[row_i + j - fi] = s;
            }
            let mut d = diag[i];
            for k in fi..i {
                let g = lower[row_i + k - fi];
                let l = g / diag[k];
                d -= g * l;
                lower[row_i + k - fi] = l;
            }
            if !(d.abs() > PIVOT_TOL * scale) {
                return Err(Error::Breakdown(format!("zero pivot {d:e} at position {i}")));
            }
            diag[i] = d;
        }
        Ok(SkylineLdl { perm: perm.to_vec(), first, start, lower, diag })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Pivots of `D` in factorization order.
    pub fn pivots(&self) -> &[f64] {
        &self.diag
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut z: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.lower[self.start[i]..self.start[i + 1]];
            let s: f64 = row.iter().zip(&z[fi..i]).map(|(l, v)| l * v).sum();
            z[i] -= s;
        }
        for (zi, d) in z.iter_mut().zip(&self.diag) {
            *zi /= d;
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let xi = z[i];
            let row = &self.lower[self.start[i]..self.start[i + 1]];
            for (k, l) in (fi..i).zip(row) {
                z[k] -= l * xi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = z[new];
        }
        x
    }
}

/// Banded LU with partial pivoting on `P A Pᵀ`.
#[derive(Debug, Clone)]
pub struct BandLu {
    perm: Vec<usize>,
    kl: usize,
    width: usize,
    /// Row `i` of U, columns `i - kl ..= i + kl + ku` (only `>= i` is used).
    rows: Vec<f64>,
    /// Multipliers of step `i` for rows `i+1 ..= i+kl`.
    mult: Vec<f64>,
    pivot: Vec<usize>,
}

impl BandLu {
    pub fn factor(a: &SparseMatrix, perm: &[usize]) -> Result<Self> {
        let n = a.n_rows();
        if a.n_cols() != n || perm.len() != n {
            return Err(Error::Dimension(format!(
                "band factor of {}x{} with ordering of length {}",
                n,
                a.n_cols(),
                perm.len()
            )));
        }
        let (kl, ku) = bandwidths(a, perm);
        let width = 2 * kl + ku + 1;
        let inv = invert(perm);
        let mut rows = vec![0.0; n * width];
        let pos = |r: usize, c: usize| r * width + (c + kl - r);
        let mut scale: f64 = 0.0;
        for old_i in 0..n {
            let (cols, vals) = a.row(old_i);
            let i = inv[old_i];
            for (&old_j, &v) in cols.iter().zip(vals) {
                rows[pos(i, inv[old_j])] = v;
                scale = scale.max(v.abs());
            }
        }
        let mut mult = vec![0.0; n * kl];
        let mut pivot = vec![0usize; n];
        let mut tmp = vec![0.0; kl + ku + 1];
        for i in 0..n {
            let last_row = (i + kl).min(n - 1);
            let last_col = (i + kl + ku).min(n - 1);
            let mut p = i;
            let mut best = rows[pos(i, i)].abs();
            for r in i + 1..=last_row {
                let v = rows[pos(r, i)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > PIVOT_TOL * scale.max(1e-300)) {
                return Err(Error::Breakdown(format!("zero pivot at position {i}")));
            }
            pivot[i] = p;
            if p != i {
                for (t, c) in (i..=last_col).enumerate() {
                    tmp[t] = rows[pos(i, c)];
                    rows[pos(i, c)] = rows[pos(p, c)];
                    rows[pos(p, c)] = tmp[t];
                }
            }
            let d = rows[pos(i, i)];
            for r in i + 1..=last_row {
                let l = rows[pos(r, i)] / d;
                mult[i * kl + (r - i - 1)] = l;
                rows[pos(r, i)] = 0.0;
                if l != 0.0 {
                    for c in i + 1..=last_col {
                        rows[pos(r, c)] -= l * rows[pos(i, c)];
                    }
                }
            }
        }
        Ok(BandLu { perm: perm.to_vec(), kl, width, rows, mult, pivot })
    }

    pub fn dim(&self) -> usize {
        self.pivot.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let kl = self.kl;
        let ku = self.width - 2 * kl - 1;
        let pos = |r: usize, c: usize| r * self.width + (c + kl - r);
        let mut z: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            z.swap(i, self.pivot[i]);
            let zi = z[i];
            if zi != 0.0 {
                for r in i + 1..=(i + kl).min(n.saturating_sub(1)) {
                    z[r] -= self.mult[i * kl + (r - i - 1)] * zi;
                }
            }
        }
        for i in (0..n).rev() {
            let last_col = (i + kl + ku).min(n - 1);
            let mut s = z[i];
            for c in i + 1..=last_col {
                s -= self.rows[pos(i, c)] * z[c];
            }
            z[i] = s / self.rows[pos(i, i)];
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = z[new];
        }
        x
    }
}
