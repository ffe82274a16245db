//! Periodic cell problems and the upscaled permeability field.

mod cell;
mod coefficient;
mod upscale;

pub use cell::{
    assemble_cell_system, corrector_gradients, sample_coefficient, solve_cell, subtriangle_centroids, CellOperator,
    CellSolution, SampledCoefficient,
};
pub use coefficient::{Coefficient, RasterField};
pub use upscale::{EffectiveTensorField, TensorSource, Upscaler};

use crate::error::{Error, Result};
use crate::linalg::SolverKind;

/// Micro-scale parameters: fine scale `ε`, sampling cell `κ`, averaging
/// sub-cell `κ₀` and torus resolution `m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicroConfig {
    pub epsilon: f64,
    pub kappa: f64,
    pub kappa0: f64,
    pub m: usize,
    /// Sub-triangles per torus triangle edge for coefficient sampling.
    pub subsamples: usize,
    pub solver: SolverKind,
    pub tol: f64,
}

impl MicroConfig {
    /// Configuration without oversampling (`κ₀ = κ`).
    pub fn new(epsilon: f64, kappa: f64, m: usize) -> Result<Self> {
        Self::with_oversampling(epsilon, kappa, kappa, m)
    }

    pub fn with_oversampling(epsilon: f64, kappa: f64, kappa0: f64, m: usize) -> Result<Self> {
        let cfg = MicroConfig { epsilon, kappa, kappa0, m, subsamples: 4, solver: SolverKind::Direct, tol: 1e-12 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ok =
            self.epsilon > 0.0 && self.kappa0 >= self.epsilon && self.kappa >= self.kappa0 && self.kappa.is_finite();
        if !ok {
            return Err(Error::MicroConfig(format!(
                "need kappa >= kappa0 >= epsilon > 0, got kappa = {}, kappa0 = {}, epsilon = {}",
                self.kappa, self.kappa0, self.epsilon
            )));
        }
        if self.m < 2 {
            return Err(Error::MicroConfig(format!("torus resolution must be at least 2, got {}", self.m)));
        }
        if self.subsamples == 0 {
            return Err(Error::MicroConfig("at least one coefficient sample per triangle".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::MicroConfig(format!("solver tolerance {} must be positive", self.tol)));
        }
        Ok(())
    }
}
