use crate::error::{Error, Result};

const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

fn gauss(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let mut s = 0.0;
    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
        let v = f(c + r * x);
        if !v.is_finite() {
            return Err(Error::Quadrature(format!("integrand not finite at {}", c + r * x)));
        }
        s += w * v;
    }
    Ok(s * r)
}

/// Adaptive Gauss–Legendre quadrature. Nodes are interior, so integrable
/// endpoint singularities are never evaluated; panels narrower than `cutoff`
/// that touch an endpoint are accepted unconverged.
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveQuadrature {
    pub tol: f64,
    pub cutoff: f64,
    pub max_depth: u32,
}

impl Default for AdaptiveQuadrature {
    fn default() -> Self {
        AdaptiveQuadrature { tol: 1e-14, cutoff: 1e-8, max_depth: 64 }
    }
}

impl AdaptiveQuadrature {
    pub fn integrate(&self, f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        if b < a {
            return Ok(-self.integrate(f, b, a)?);
        }
        let whole = gauss(f, a, b)?;
        self.recurse(f, a, b, whole, (a, b), 0)
    }

    fn recurse(&self, f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, ends: (f64, f64), depth: u32) -> Result<f64> {
        let m = 0.5 * (a + b);
        let left = gauss(f, a, m)?;
        let right = gauss(f, m, b)?;
        let halves = left + right;
        let width = b - a;
        if (halves - whole).abs() <= self.tol * (width + halves.abs()) {
            return Ok(halves);
        }
        let at_end = a == ends.0 || b == ends.1;
        if width <= self.cutoff && at_end {
            log::trace!("accepting unconverged endpoint panel [{a:e}, {b:e}]");
            return Ok(halves);
        }
        if depth >= self.max_depth {
            return Err(Error::Quadrature(format!(
                "no convergence on [{a:e}, {b:e}]: non-integrable singularity or discontinuity"
            )));
        }
        Ok(self.recurse(f, a, m, left, ends, depth + 1)? + self.recurse(f, m, b, right, ends, depth + 1)?)
    }
}

/// Piecewise cubic Hermite table on a uniform grid of `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteTable {
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl HermiteTable {
    /// Nodal values and derivatives; the slopes are limited (Fritsch–Carlson)
    /// so that monotone data stays monotone.
    pub fn new(values: Vec<f64>, mut slopes: Vec<f64>) -> Self {
        let n = values.len() - 1;
        let h = 1.0 / n as f64;
        for k in 0..n {
            let delta = (values[k + 1] - values[k]) / h;
            if !slopes[k].is_finite() {
                slopes[k] = 3.0 * delta;
            }
            if !slopes[k + 1].is_finite() {
                slopes[k + 1] = 3.0 * delta;
            }
        }
        for k in 0..n {
            let delta = (values[k + 1] - values[k]) / h;
            if delta == 0.0 {
                slopes[k] = 0.0;
                slopes[k + 1] = 0.0;
                continue;
            }
            if slopes[k] * delta < 0.0 {
                slopes[k] = 0.0;
            }
            if slopes[k + 1] * delta < 0.0 {
                slopes[k + 1] = 0.0;
            }
            let a = slopes[k] / delta;
            let b = slopes[k + 1] / delta;
            let r = a * a + b * b;
            if r > 9.0 {
                let t = 3.0 / r.sqrt();
                slopes[k] = t * a * delta;
                slopes[k + 1] = t * b * delta;
            }
        }
        HermiteTable { values, slopes }
    }

    fn segment(&self, s: f64) -> (usize, f64, f64) {
        let n = self.values.len() - 1;
        let x = s.clamp(0.0, 1.0) * n as f64;
        let k = (x.floor() as usize).min(n - 1);
        (k, x - k as f64, 1.0 / n as f64)
    }

    /// Value; constant-slope extension outside `[0, 1]`.
    pub fn eval(&self, s: f64) -> f64 {
        if s < 0.0 {
            return self.values[0] + self.slopes[0] * s;
        }
        if s > 1.0 {
            let n = self.values.len() - 1;
            return self.values[n] + self.slopes[n] * (s - 1.0);
        }
        let (k, t, h) = self.segment(s);
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.values[k] + h10 * h * self.slopes[k] + h01 * self.values[k + 1] + h11 * h * self.slopes[k + 1]
    }

    pub fn derivative(&self, s: f64) -> f64 {
        if s < 0.0 {
            return self.slopes[0];
        }
        if s > 1.0 {
            return self.slopes[self.slopes.len() - 1];
        }
        let (k, t, h) = self.segment(s);
        let t2 = t * t;
        let d00 = 6.0 * t2 - 6.0 * t;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = -6.0 * t2 + 6.0 * t;
        let d11 = 3.0 * t2 - 2.0 * t;
        (d00 * self.values[k] + d01 * self.values[k + 1]) / h + d10 * self.slopes[k] + d11 * self.slopes[k + 1]
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `s ∈ [0, 1]` with `eval(s) = u` for increasing data, by bisection.
    pub fn inverse_increasing(&self, u: f64) -> f64 {
        let n = self.values.len() - 1;
        // bracket on the grid first
        let k = self.values.partition_point(|&v| v < u).clamp(1, n);
        let (mut lo, mut hi) = ((k - 1) as f64 / n as f64, k as f64 / n as f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (flo, fhi) = (self.eval(lo), self.eval(hi));
        if (u - flo).abs() <= (fhi - u).abs() {
            lo
        } else {
            hi
        }
    }
}
