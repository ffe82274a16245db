use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{self, Point, Tensor2};

/// Scalar permeability on a regular grid over a rectangle, read from a CSV
/// matrix whose first row is the bottom of the box.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterField {
    pub origin: Point,
    pub extent: Point,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl RasterField {
    pub fn new(origin: Point, extent: Point, rows: Vec<Vec<f64>>) -> Result<Self> {
        let ny = rows.len();
        let nx = rows.first().map_or(0, Vec::len);
        if nx == 0 || rows.iter().any(|r| r.len() != nx) {
            return Err(Error::MicroConfig("raster rows must be non-empty and of equal length".into()));
        }
        if !(extent[0] > 0.0 && extent[1] > 0.0) {
            return Err(Error::MicroConfig(format!("raster extent {extent:?} must be positive")));
        }
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::MicroConfig(format!("raster value {v} is not a positive permeability")));
        }
        Ok(RasterField { origin, extent, nx, ny, values })
    }

    pub fn from_csv(path: &Path, origin: Point, extent: Point) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
            let row = rec
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::MicroConfig(format!("{}: {e}", path.display())))?;
            rows.push(row);
        }
        Self::new(origin, extent, rows)
    }

    fn eval(&self, x: Point) -> Result<f64> {
        let u = (x[0] - self.origin[0]) / self.extent[0];
        let v = (x[1] - self.origin[1]) / self.extent[1];
        let tol = 1e-12;
        if !(-tol..=1.0 + tol).contains(&u) || !(-tol..=1.0 + tol).contains(&v) {
            return Err(Error::OutsideCoefficientDomain(x[0], x[1]));
        }
        let i = ((u * self.nx as f64).floor().max(0.0) as usize).min(self.nx - 1);
        let j = ((v * self.ny as f64).floor().max(0.0) as usize).min(self.ny - 1);
        Ok(self.values[j * self.nx + i])
    }
}

/// Fine-scale permeability `K^ε`.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Constant(Tensor2),
    /// Isotropic layers: `values[0]` where `frac(wave · x / ε) < fraction`,
    /// `values[1]` elsewhere.
    Layered {
        wave: Point,
        values: [f64; 2],
        period: f64,
        fraction: f64,
    },
    /// Isotropic checkerboard of squares of side `ε/2`.
    Checkerboard {
        values: [f64; 2],
        period: f64,
    },
    /// `(2 + sin(2π x₁/ε)) I`.
    Smooth {
        period: f64,
    },
    Raster(RasterField),
}

impl Coefficient {
    pub fn eval(&self, x: Point) -> Result<Tensor2> {
        Ok(match self {
            Coefficient::Constant(k) => *k,
            Coefficient::Layered { wave, values, period, fraction } => {
                let t = geometry::dot(*wave, x) / period;
                let f = t - t.floor();
                Tensor2::iso(if f < *fraction { values[0] } else { values[1] })
            }
            Coefficient::Checkerboard { values, period } => {
                let i = (2.0 * x[0] / period).floor() as i64;
                let j = (2.0 * x[1] / period).floor() as i64;
                Tensor2::iso(if (i + j).rem_euclid(2) == 0 { values[0] } else { values[1] })
            }
            Coefficient::Smooth { period } => Tensor2::iso(2.0 + (2.0 * PI * x[0] / period).sin()),
            Coefficient::Raster(r) => Tensor2::iso(r.eval(x)?),
        })
    }

    /// Global spectral bounds `(α, β)`.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Coefficient::Constant(k) => {
                let e = k.eigenvalues();
                (e[0], e[1])
            }
            Coefficient::Layered { values, .. } | Coefficient::Checkerboard { values, .. } => {
                (values[0].min(values[1]), values[0].max(values[1]))
            }
            Coefficient::Smooth { .. } => (1.0, 3.0),
            Coefficient::Raster(r) => {
                (r.values.iter().copied().fold(f64::INFINITY, f64::min), r.values.iter().copied().fold(0.0, f64::max))
            }
        }
    }

    /// Fine length scale, if the field has one.
    pub fn period(&self) -> Option<f64> {
        match self {
            Coefficient::Layered { period, .. }
            | Coefficient::Checkerboard { period, .. }
            | Coefficient::Smooth { period } => Some(*period),
            _ => None,
        }
    }

    /// Closed-form homogenized tensor where one is known.
    pub fn homogenized(&self) -> Option<Tensor2> {
        match self {
            Coefficient::Constant(k) => Some(*k),
            Coefficient::Layered { wave, values, fraction, .. } => {
                let (a, b, f) = (values[0], values[1], *fraction);
                let harmonic = 1.0 / (f / a + (1.0 - f) / b);
                let arithmetic = f * a + (1.0 - f) * b;
                Some(Tensor2::laminate(*wave, harmonic, arithmetic))
            }
            Coefficient::Checkerboard { values, .. } => Some(Tensor2::iso((values[0] * values[1]).sqrt())),
            Coefficient::Smooth { .. } => Some(Tensor2::diag(3f64.sqrt(), 2.0)),
            Coefficient::Raster(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.bounds();
        if !(a > 0.0 && b.is_finite()) {
            return Err(Error::MicroConfig(format!("coefficient bounds ({a}, {b}) not uniformly elliptic")));
        }
        match self {
            Coefficient::Layered { wave, period, fraction, .. } => {
                if !(*period > 0.0) || !(*fraction > 0.0 && *fraction < 1.0) || geometry::norm(*wave) == 0.0 {
                    return Err(Error::MicroConfig(
                        "layered field needs period > 0, fraction in (0, 1) and a nonzero wave vector".into(),
                    ));
                }
            }
            Coefficient::Checkerboard { period, .. } | Coefficient::Smooth { period } if !(*period > 0.0) => {
                return Err(Error::MicroConfig(format!("period {period} must be positive")));
            }
            _ => {}
        }
        Ok(())
    }
}
