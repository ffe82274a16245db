use std::io::Write;

use crate::error::{Error, Result};
use crate::estimators::fmt17;
use crate::microcell::{MicroConfig, Upscaler};

use super::config::SimConfig;
use super::output::write_csv_table;
use super::reference::{compare, fine_reference};
use super::simulate;

/// Distance of the upscaled tensors to the closed-form one at one torus
/// resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelingRow {
    pub m: usize,
    /// `max_D ‖K⁰_h(x_D) − K⁰‖_F`.
    pub max_error: f64,
    pub mean_error: f64,
    /// `max_error / ‖K⁰‖_F`.
    pub relative: f64,
}

pub fn modeling_study(cfg: &SimConfig) -> Result<Vec<ModelingRow>> {
    let exact = cfg
        .coefficient
        .homogenized()
        .ok_or_else(|| Error::Config("modeling-error study needs a closed-form homogenized tensor".into()))?;
    let mesh = cfg.mesh()?;
    cfg.study
        .m_values
        .iter()
        .map(|&m| {
            let micro = MicroConfig { m, ..cfg.micro };
            micro.validate()?;
            let field = Upscaler::new(cfg.coefficient.clone(), micro)?.tensor_field(&mesh)?;
            let errors: Vec<f64> = field.tensors.iter().map(|&k| (k - exact).frobenius()).collect();
            let max_error = errors.iter().copied().fold(0.0, f64::max);
            let mean_error = errors.iter().sum::<f64>() / errors.len() as f64;
            log::info!("m = {m}: max error {max_error:.3e}");
            Ok(ModelingRow { m, max_error, mean_error, relative: max_error / exact.frobenius() })
        })
        .collect()
}

pub fn write_modeling_study<W: Write>(w: W, rows: &[ModelingRow]) -> std::io::Result<()> {
    write_csv_table(
        w,
        &["m", "max_frobenius_error", "mean_frobenius_error", "relative_error"],
        rows.iter().map(|r| vec![r.m.to_string(), fmt17(r.max_error), fmt17(r.mean_error), fmt17(r.relative)]),
    )
}

/// HMM run against the fine-scale reference at one `ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FineStudyRow {
    pub epsilon: f64,
    pub fine_vertices: usize,
    /// `‖S_HMM − S_fine‖_{L²(Ω_T)}`.
    pub saturation_l2: f64,
    /// Squared dual, energy and Kirchhoff errors combined.
    pub combined_error: f64,
    /// Estimator aggregate without the modeling term.
    pub aggregate: f64,
    /// `aggregate / combined_error`.
    pub effectivity: f64,
}

pub fn fine_study(cfg: &SimConfig) -> Result<Vec<FineStudyRow>> {
    let k0 = cfg
        .coefficient
        .homogenized()
        .ok_or_else(|| Error::Config("fine-reference study needs a closed-form homogenized tensor".into()))?;
    cfg.study
        .epsilons
        .iter()
        .map(|&epsilon| {
            let cfg = cfg.with_epsilon(epsilon)?;
            let source = cfg.tensor_source()?;
            let hmm = simulate(&cfg, &source)?;
            let aggregate = hmm.estimate(&source, &cfg)?.aggregate()?;
            let fine = fine_reference(&cfg)?;
            let errors = compare(
                &hmm.mesh,
                &hmm.trajectory,
                &fine.mesh,
                &fine.trajectory,
                &hmm.grid,
                &hmm.model,
                k0,
                &cfg.estimator.linear,
            )?;
            let combined_error = errors.combined();
            log::info!("epsilon = {epsilon}: L2 error {:.3e}, aggregate {aggregate:.3e}", errors.saturation_l2.sqrt());
            Ok(FineStudyRow {
                epsilon,
                fine_vertices: fine.mesh.n_vertices(),
                saturation_l2: errors.saturation_l2.sqrt(),
                combined_error,
                aggregate,
                effectivity: aggregate / combined_error,
            })
        })
        .collect()
}

pub fn write_fine_study<W: Write>(w: W, rows: &[FineStudyRow]) -> std::io::Result<()> {
    write_csv_table(
        w,
        &["epsilon", "fine_vertices", "saturation_l2_error", "combined_error", "aggregate", "effectivity"],
        rows.iter().map(|r| {
            vec![
                fmt17(r.epsilon),
                r.fine_vertices.to_string(),
                fmt17(r.saturation_l2),
                fmt17(r.combined_error),
                fmt17(r.aggregate),
                fmt17(r.effectivity),
            ]
        }),
    )
}
