use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use super::{CellSolution, Coefficient, MicroConfig};
use crate::error::{Error, Result};
use crate::geometry::{Point, Tensor2};
use crate::mesh::{CoarseMesh, TorusMesh};

/// Effective permeability per dual cell (one per coarse vertex).
#[derive(Debug, Clone)]
pub struct EffectiveTensorField {
    pub tensors: Vec<Tensor2>,
    /// Empty when the tensors were prescribed rather than upscaled.
    pub solutions: Vec<Arc<CellSolution>>,
    /// Exact homogenized tensor, when known.
    pub oracle: Option<Tensor2>,
    pub alpha: f64,
    pub beta: f64,
}

impl EffectiveTensorField {
    /// The same tensor in every cell.
    pub fn uniform(n: usize, k: Tensor2) -> Self {
        let e = k.eigenvalues();
        EffectiveTensorField { tensors: vec![k; n], solutions: Vec::new(), oracle: Some(k), alpha: e[0], beta: e[1] }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn solution(&self, cell: usize) -> Result<&CellSolution> {
        self.solutions.get(cell).map(Arc::as_ref).ok_or(Error::MissingCellSolution(cell))
    }

    pub fn tensor(&self, cell: usize) -> Result<Tensor2> {
        self.tensors.get(cell).copied().ok_or(Error::MissingTensor(cell))
    }
}

type CacheKey = [i64; 2];

fn cache_key(x: Point) -> CacheKey {
    [(x[0] * 1e12).round() as i64, (x[1] * 1e12).round() as i64]
}

/// Cell-problem driver with a cache keyed by sample point.
pub struct Upscaler {
    field: Coefficient,
    cfg: MicroConfig,
    torus: TorusMesh,
    oracle: Option<Tensor2>,
    cache: Mutex<HashMap<CacheKey, Arc<CellSolution>>>,
    solves: AtomicUsize,
}

impl Upscaler {
    pub fn new(field: Coefficient, cfg: MicroConfig) -> Result<Self> {
        cfg.validate()?;
        field.validate()?;
        let torus = TorusMesh::build(cfg.m)?;
        if cfg.kappa0 < cfg.kappa && cfg.kappa0 / cfg.kappa * (cfg.m as f64) < 2.0 {
            log::warn!(
                "oversampling sub-cube kappa0/kappa = {} is resolved by fewer than 2 torus layers",
                cfg.kappa0 / cfg.kappa
            );
        }
        Ok(Upscaler { field, cfg, torus, oracle: None, cache: Mutex::new(HashMap::new()), solves: AtomicUsize::new(0) })
    }

    /// Attach the exact homogenized tensor for modeling-error estimates.
    pub fn with_oracle(mut self, k: Option<Tensor2>) -> Self {
        self.oracle = k;
        self
    }

    pub fn coefficient(&self) -> &Coefficient {
        &self.field
    }

    pub fn config(&self) -> &MicroConfig {
        &self.cfg
    }

    pub fn torus(&self) -> &TorusMesh {
        &self.torus
    }

    pub fn oracle(&self) -> Option<Tensor2> {
        self.oracle
    }

    /// Number of cell problems solved so far (cache misses).
    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn cell(&self, x_d: Point) -> Result<Arc<CellSolution>> {
        let key = cache_key(x_d);
        if let Some(sol) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(Arc::clone(sol));
        }
        let sol = Arc::new(CellSolution::compute(&self.field, x_d, &self.cfg, &self.torus)?);
        self.solves.fetch_add(1, Ordering::Relaxed);
        let mut cache = self.cache.lock().expect("cache poisoned");
        Ok(Arc::clone(cache.entry(key).or_insert(sol)))
    }

    /// Upscaled tensor at every vertex of `mesh`.
    pub fn tensor_field(&self, mesh: &CoarseMesh) -> Result<EffectiveTensorField> {
        let solutions: Vec<Arc<CellSolution>> =
            mesh.vertices().par_iter().map(|&x| self.cell(x)).collect::<Result<_>>()?;
        let tensors = solutions.iter().map(|s| s.tensor).collect();
        let alpha = solutions.iter().map(|s| s.alpha).fold(f64::INFINITY, f64::min);
        let beta = solutions.iter().map(|s| s.beta).fold(0.0, f64::max);
        Ok(EffectiveTensorField { tensors, solutions, oracle: self.oracle, alpha, beta })
    }

    /// Sampled sup-term of the approximation estimator per dual cell: the
    /// vertex and the corners of every incident triangle.
    pub fn discrepancies(&self, mesh: &CoarseMesh, field: &EffectiveTensorField) -> Result<Vec<f64>> {
        let stars = mesh.vertex_triangles();
        (0..mesh.n_vertices())
            .into_par_iter()
            .map(|v| {
                let sol = field.solution(v)?;
                let mut points = vec![mesh.vertices()[v]];
                for &t in &stars[v] {
                    for c in mesh.triangles()[t] {
                        if c != v {
                            points.push(mesh.vertices()[c]);
                        }
                    }
                }
                points.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                points.dedup();
                sol.discrepancy(&self.field, &points, &self.cfg, &self.torus)
            })
            .collect()
    }
}

/// Where the macro permeability comes from.
pub enum TensorSource {
    /// Prescribed tensor, also taken as the exact homogenized one.
    Uniform(Tensor2),
    Upscaled(Box<Upscaler>),
}

impl TensorSource {
    pub fn tensor_field(&self, mesh: &CoarseMesh) -> Result<EffectiveTensorField> {
        match self {
            TensorSource::Uniform(k) => Ok(EffectiveTensorField::uniform(mesh.n_vertices(), *k)),
            TensorSource::Upscaled(up) => up.tensor_field(mesh),
        }
    }

    pub fn discrepancies(&self, mesh: &CoarseMesh, field: &EffectiveTensorField) -> Result<Vec<f64>> {
        match self {
            TensorSource::Uniform(_) => Ok(vec![0.0; mesh.n_vertices()]),
            TensorSource::Upscaled(up) => up.discrepancies(mesh, field),
        }
    }

    pub fn solves(&self) -> usize {
        match self {
            TensorSource::Uniform(_) => 0,
            TensorSource::Upscaled(up) => up.solves(),
        }
    }
}
