//! Configuration, output writers, the fine-scale reference and the studies
//! behind the command-line tool.

mod config;
mod output;
mod reference;
mod study;

pub use config::{
    DataConfig, DomainConfig, OracleConfig, OutputConfig, Side, SimConfig, StudyConfig, TimeConfig, Upscaling,
    OUTPUT_DIR_ENV,
};
pub use output::{
    tensor_rows, write_csv_table, write_file, write_run_log, write_tensor_csv, write_vtk_fluxes, write_vtk_state,
    write_vtk_tensors, TensorRow, RUN_LOG_HEADER, TENSOR_HEADER,
};
pub use reference::{
    compare, fine_mesh, fine_reference, fine_reference_on, grid_states, mesh_width, solve_fine, triangle_tensors,
    ErrorMeasures, FineReference, DEFAULT_DOF_BUDGET, DEFAULT_RESOLUTION,
};
pub use study::{fine_study, modeling_study, write_fine_study, write_modeling_study, FineStudyRow, ModelingRow};

use crate::constitutive::FluidModel;
use crate::error::Result;
use crate::estimators::{estimate, EstimatorReport, MicroIndicators};
use crate::macrofv::{run, FaceTensors, FlowData, FvScheme, TimeGrid, Trajectory};
use crate::mesh::{CoarseMesh, DualMesh};
use crate::microcell::{EffectiveTensorField, TensorSource};

/// An HMM run together with everything needed to post-process it.
pub struct HmmRun {
    pub mesh: CoarseMesh,
    pub dual: DualMesh,
    pub field: EffectiveTensorField,
    pub tensors: FaceTensors,
    pub model: FluidModel,
    pub data: FlowData,
    pub grid: TimeGrid,
    pub trajectory: Trajectory,
}

impl HmmRun {
    pub fn scheme(&self) -> Result<FvScheme<'_>> {
        FvScheme::new(&self.mesh, &self.dual, &self.tensors, &self.model)
    }

    pub fn micro_indicators(&self, source: &TensorSource) -> Result<MicroIndicators> {
        let discrepancy = source.discrepancies(&self.mesh, &self.field)?;
        MicroIndicators::from_field(&self.field, &discrepancy)
    }

    pub fn estimate(&self, source: &TensorSource, cfg: &SimConfig) -> Result<EstimatorReport> {
        let micro = self.micro_indicators(source)?;
        estimate(&self.scheme()?, &micro, &self.data, &self.trajectory, &cfg.estimator)
    }
}

/// Upscale on `mesh` and march the configured problem.
pub fn simulate_on(cfg: &SimConfig, source: &TensorSource, mesh: CoarseMesh) -> Result<HmmRun> {
    let dual = DualMesh::build(&mesh)?;
    let field = source.tensor_field(&mesh)?;
    let tensors = FaceTensors::from_field(&dual, &field)?;
    let model = cfg.model()?;
    let data = cfg.flow_data();
    let grid = cfg.time_grid()?;
    let trajectory = {
        let scheme = FvScheme::new(&mesh, &dual, &tensors, &model)?;
        run(&scheme, &data, &grid, &cfg.run)?
    };
    Ok(HmmRun { mesh, dual, field, tensors, model, data, grid, trajectory })
}

pub fn simulate(cfg: &SimConfig, source: &TensorSource) -> Result<HmmRun> {
    simulate_on(cfg, source, cfg.mesh()?)
}
