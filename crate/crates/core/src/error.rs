use std::path::PathBuf;

/// Errors raised anywhere in the multiscale pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid mesh parameters: {0}")]
    MeshParameters(String),

    #[error("mesh is not conforming: {0}")]
    NonConforming(String),

    #[error("saturation {0} outside [0, 1]")]
    SaturationOutOfRange(f64),

    #[error("transformed value {value} outside [{lo}, {hi}]")]
    TransformOutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("fluid model violates {assumption}: {detail}")]
    Assumption { assumption: &'static str, detail: String },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("coefficient evaluated outside its domain at ({0}, {1})")]
    OutsideCoefficientDomain(f64, f64),

    #[error("invalid micro configuration: {0}")]
    MicroConfig(String),

    #[error("linear solver breakdown: {0}")]
    Breakdown(String),

    #[error("linear solver did not reach tolerance: relative residual {residual:.3e} > {tol:.3e}")]
    NotConverged { residual: f64, tol: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("missing effective tensor for dual cell {0}")]
    MissingTensor(usize),

    #[error("missing cell solution for dual cell {0}")]
    MissingCellSolution(usize),

    #[error("nonlinear solve failed at t = {t}: {detail}")]
    NewtonDivergence { t: f64, detail: String },

    #[error("flux reconstruction refused: {0}")]
    UnconvergedState(String),

    #[error("point outside triangle {triangle} (barycentric {lambda:?})")]
    PointOutsideTriangle { triangle: usize, lambda: [f64; 3] },

    #[error("empty estimator report")]
    EmptyReport,

    #[error("meshes are unrelated: {0}")]
    UnrelatedMeshes(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("fine reference exceeds DOF budget: {dofs} > {budget}")]
    DofBudget { dofs: usize, budget: usize },

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    /// `true` for problems in user-supplied configuration or model data,
    /// `false` for numerical failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::MeshParameters(_)
                | Error::Assumption { .. }
                | Error::MicroConfig(_)
                | Error::Config(_)
                | Error::OutsideCoefficientDomain(..)
                | Error::DofBudget { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
