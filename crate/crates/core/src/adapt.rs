//! Estimator-driven spatial adaptivity: bulk marking of dual cells,
//! refinement of their triangle stars and transfer of nodal states.

use std::collections::BTreeSet;
use std::io::Write;

use crate::constitutive::FluidModel;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate, initial_term, step_indicators, CellIndicators, EstimatorOptions, EstimatorReport, MicroIndicators,
    StepIndicators,
};
use crate::fluxrecon::reconstruct;
use crate::macrofv::{
    initial_state, run, run_from, FaceTensors, FlowData, Formulation, FvScheme, RunOptions, State, TimeGrid, Trajectory,
};
use crate::mesh::{CoarseMesh, DualMesh};
use crate::microcell::TensorSource;

/// Indicator families entering the marking functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Families {
    pub cr: bool,
    pub cf: bool,
    pub df: bool,
    pub app: bool,
}

impl Default for Families {
    fn default() -> Self {
        Families { cr: true, cf: true, df: true, app: true }
    }
}

impl Families {
    /// `Σ_α (Σ_included η)²` of one cell.
    pub fn value(&self, c: &CellIndicators) -> f64 {
        (0..2)
            .map(|a| {
                let mut e = 0.0;
                if self.cr {
                    e += c.cr[a];
                }
                if self.cf {
                    e += c.cf[a];
                }
                if self.df {
                    e += c.df[a];
                }
                if self.app {
                    e += c.app[a];
                }
                e * e
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cadence {
    /// Solve the whole run, refine, solve again.
    PerRun,
    /// Refine after every time step and carry the state over.
    PerStep,
}

impl std::str::FromStr for Cadence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "run" | "per-run" | "per_run" => Ok(Cadence::PerRun),
            "step" | "per-step" | "per_step" => Ok(Cadence::PerStep),
            other => Err(Error::Config(format!("unknown adapt cadence '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptPolicy {
    /// Dörfler fraction `θ ∈ (0, 1]`.
    pub theta: f64,
    pub max_generations: usize,
    pub cadence: Cadence,
    pub families: Families,
}

impl Default for AdaptPolicy {
    fn default() -> Self {
        AdaptPolicy { theta: 0.5, max_generations: 3, cadence: Cadence::PerRun, families: Families::default() }
    }
}

impl AdaptPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Config(format!("marking fraction {} outside (0, 1]", self.theta)));
        }
        let f = self.families;
        if !(f.cr || f.cf || f.df || f.app) {
            return Err(Error::Config("no indicator family selected for marking".into()));
        }
        Ok(())
    }
}

/// Smallest set of indices whose values sum to at least `θ` times the
/// total, taking the largest first; ties by index.
pub fn dorfler(values: &[f64], theta: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let total: f64 = order.iter().map(|&i| values[i]).sum();
    if !(total > 0.0) {
        return Vec::new();
    }
    let goal = theta * total;
    let mut acc = 0.0;
    let mut out = Vec::new();
    for i in order {
        if acc >= goal {
            break;
        }
        acc += values[i];
        out.push(i);
    }
    out.sort_unstable();
    out
}

/// Triangles in the stars of the Dörfler-marked cells, for step index
/// `step` or for the whole report.
pub fn mark(
    report: &EstimatorReport,
    mesh: &CoarseMesh,
    step: Option<usize>,
    policy: &AdaptPolicy,
) -> Result<BTreeSet<usize>> {
    policy.validate()?;
    if report.is_empty() {
        return Err(Error::EmptyReport);
    }
    let steps: Vec<usize> = match step {
        Some(k) if k < report.steps.len() => vec![k],
        Some(k) => return Err(Error::Dimension(format!("report has no step index {k}"))),
        None => (0..report.steps.len()).collect(),
    };
    let n = mesh.n_vertices();
    let mut values = vec![0.0; n];
    for k in steps {
        let cells = &report.steps[k].cells;
        if cells.len() != n {
            return Err(Error::Dimension(format!(
                "step {} has {} cells for {n} vertices",
                report.steps[k].n,
                cells.len()
            )));
        }
        let dt = report.dt(k);
        for (v, c) in values.iter_mut().zip(cells) {
            *v += dt * policy.families.value(c);
        }
    }
    let stars = mesh.vertex_triangles();
    Ok(dorfler(&values, policy.theta).into_iter().flat_map(|c| stars[c].iter().copied()).collect())
}

/// Interpolate a state onto a refinement of its mesh and reset the boundary
/// nodes to the Dirichlet data.
pub fn transfer(
    state: &State,
    old: &CoarseMesh,
    new: &CoarseMesh,
    data: &FlowData,
    model: &FluidModel,
) -> Result<State> {
    if state.len() != old.n_vertices() {
        return Err(Error::Dimension(format!("state of {} nodes on a {}-vertex mesh", state.len(), old.n_vertices())));
    }
    let mut s = old.prolongate(new, &state.s)?;
    let mut p = old.prolongate(new, &state.p)?;
    for v in (0..new.n_vertices()).filter(|&v| new.is_boundary(v)) {
        let x = new.vertices()[v];
        s[v] = (data.boundary_saturation)(x, state.t);
        let global = (data.boundary_pressure)(x, state.t);
        p[v] = match state.formulation {
            Formulation::Kirchhoff => global,
            Formulation::Phases => global - model.pressure_shift(s[v].clamp(0.0, 1.0)),
        };
    }
    Ok(State { t: state.t, formulation: state.formulation, s, p })
}

/// One line of the adapt trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptTraceRow {
    pub cycle: usize,
    pub n_triangles: usize,
    pub n_cellsolves_new: usize,
    pub aggregate_before: f64,
    /// `None` when the refined mesh is not solved again on the same data.
    pub aggregate_after: Option<f64>,
}

pub fn write_trace<W: Write>(rows: &[AdaptTraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |source| Error::Csv { path: "<adapt trace>".into(), source };
    w.write_record(["cycle", "n_triangles", "n_cellsolves_new", "aggregate_before", "aggregate_after"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.cycle.to_string(),
            r.n_triangles.to_string(),
            r.n_cellsolves_new.to_string(),
            format!("{:.16e}", r.aggregate_before),
            r.aggregate_after.map_or_else(|| "NA".to_string(), |a| format!("{a:.16e}")),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|source| Error::Io { path: "<adapt trace>".into(), source })
}

/// Everything except the mesh that an adaptive run needs.
pub struct AdaptProblem<'a> {
    pub source: &'a TensorSource,
    pub model: &'a FluidModel,
    pub data: &'a FlowData,
    pub grid: &'a TimeGrid,
    pub run: RunOptions,
    pub estimator: EstimatorOptions,
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    /// One mesh per generation; the last one is the finest.
    pub meshes: Vec<CoarseMesh>,
    pub trajectory: Trajectory,
    /// Generation of the mesh carrying each state of `trajectory`.
    pub mesh_of_state: Vec<usize>,
    pub report: EstimatorReport,
    pub trace: Vec<AdaptTraceRow>,
}

struct Solved {
    trajectory: Trajectory,
    report: EstimatorReport,
}

fn micro_on(problem: &AdaptProblem, mesh: &CoarseMesh) -> Result<MicroIndicators> {
    let field = problem.source.tensor_field(mesh)?;
    let disc = problem.source.discrepancies(mesh, &field)?;
    MicroIndicators::from_field(&field, &disc)
}

fn solve_on(problem: &AdaptProblem, mesh: &CoarseMesh) -> Result<Solved> {
    let dual = DualMesh::build(mesh)?;
    let micro = micro_on(problem, mesh)?;
    let scheme = FvScheme::new(mesh, &dual, &FaceTensors::from_cells(&dual, &micro.tensors)?, problem.model)?;
    let trajectory = run(&scheme, problem.data, problem.grid, &problem.run)?;
    let report = estimate(&scheme, &micro, problem.data, &trajectory, &problem.estimator)?;
    Ok(Solved { trajectory, report })
}

/// Adaptive loop from `mesh` under `policy`.
pub fn adapt_run(problem: &AdaptProblem, mesh: CoarseMesh, policy: &AdaptPolicy) -> Result<AdaptOutcome> {
    policy.validate()?;
    match policy.cadence {
        Cadence::PerRun => adapt_per_run(problem, mesh, policy),
        Cadence::PerStep => adapt_per_step(problem, mesh, policy),
    }
}

fn adapt_per_run(problem: &AdaptProblem, mesh: CoarseMesh, policy: &AdaptPolicy) -> Result<AdaptOutcome> {
    let mut solved = solve_on(problem, &mesh)?;
    let mut before = solved.report.aggregate()?;
    let mut meshes = vec![mesh];
    let mut trace = Vec::new();
    for cycle in 1..=policy.max_generations {
        let current = meshes.last().expect("at least one mesh");
        let marked = mark(&solved.report, current, None, policy)?;
        if marked.is_empty() {
            break;
        }
        let refined = current.refine(&marked)?;
        let solves = problem.source.solves();
        solved = solve_on(problem, &refined)?;
        let after = solved.report.aggregate()?;
        log::info!("adapt cycle {cycle}: {} triangles, aggregate {before:.6e} -> {after:.6e}", refined.n_triangles());
        trace.push(AdaptTraceRow {
            cycle,
            n_triangles: refined.n_triangles(),
            n_cellsolves_new: problem.source.solves() - solves,
            aggregate_before: before,
            aggregate_after: Some(after),
        });
        before = after;
        meshes.push(refined);
    }
    let generation = meshes.len() - 1;
    let mesh_of_state = vec![generation; solved.trajectory.states.len()];
    Ok(AdaptOutcome { meshes, trajectory: solved.trajectory, mesh_of_state, report: solved.report, trace })
}

fn adapt_per_step(problem: &AdaptProblem, mesh: CoarseMesh, policy: &AdaptPolicy) -> Result<AdaptOutcome> {
    let times = problem.grid.times();
    let mut meshes = vec![mesh];
    let mut micro = micro_on(problem, &meshes[0])?;
    let mut dual = DualMesh::build(&meshes[0])?;
    let first = {
        let scheme = FvScheme::new(&meshes[0], &dual, &FaceTensors::from_cells(&dual, &micro.tensors)?, problem.model)?;
        initial_state(&scheme, problem.data, times[0], problem.run.formulation, &problem.run.newton)?
    };
    let initial = initial_term(&meshes[0], &micro, problem.data, &first, &problem.estimator)?;
    let mut trajectory = Trajectory { states: vec![first], log: Vec::new() };
    let mut mesh_of_state = vec![0];
    let mut steps: Vec<StepIndicators> = Vec::new();
    let mut trace = Vec::new();
    let mut alpha = micro.alpha;

    for n in 1..times.len() {
        let generation = meshes.len() - 1;
        let mesh = &meshes[generation];
        let scheme = FvScheme::new(mesh, &dual, &FaceTensors::from_cells(&dual, &micro.tensors)?, problem.model)?;
        let start = trajectory.last().clone();
        let piece =
            run_from(&scheme, problem.data, start, &TimeGrid::new(vec![times[n - 1], times[n]])?, &problem.run)?;
        let first_new = steps.len();
        for w in piece.states.windows(2) {
            let rec = reconstruct(&scheme, &w[1], &w[0], problem.estimator.recon_tol)?;
            let cells = step_indicators(&scheme, &micro, &w[0], &w[1], &rec)?;
            steps.push(StepIndicators { n: steps.len() + 1, t: w[1].t, cells });
        }
        for mut rec in piece.log {
            rec.step = trajectory.log.len() + 1;
            trajectory.log.push(rec);
        }
        trajectory.states.extend(piece.states.into_iter().skip(1));
        mesh_of_state.resize(trajectory.states.len(), generation);

        if generation >= policy.max_generations || n + 1 == times.len() {
            continue;
        }
        let partial = EstimatorReport { t0: times[0], alpha: micro.alpha, initial: 0.0, steps: steps.clone() };
        let mut values = vec![0.0; mesh.n_vertices()];
        for k in first_new..steps.len() {
            let dt = partial.dt(k);
            for (v, c) in values.iter_mut().zip(&steps[k].cells) {
                *v += dt * policy.families.value(c);
            }
        }
        let before: f64 = values.iter().sum();
        let stars = mesh.vertex_triangles();
        let marked: BTreeSet<usize> =
            dorfler(&values, policy.theta).into_iter().flat_map(|c| stars[c].iter().copied()).collect();
        if marked.is_empty() {
            continue;
        }
        let refined = mesh.refine(&marked)?;
        let moved = transfer(trajectory.last(), mesh, &refined, problem.data, problem.model)?;
        let solves = problem.source.solves();
        micro = micro_on(problem, &refined)?;
        alpha = alpha.min(micro.alpha);
        dual = DualMesh::build(&refined)?;
        trace.push(AdaptTraceRow {
            cycle: generation + 1,
            n_triangles: refined.n_triangles(),
            n_cellsolves_new: problem.source.solves() - solves,
            aggregate_before: before,
            aggregate_after: None,
        });
        log::info!("step {n}: refined to {} triangles", refined.n_triangles());
        // the transferred state replaces the last one as the start of the next step
        *trajectory.states.last_mut().expect("non-empty") = moved;
        *mesh_of_state.last_mut().expect("non-empty") = generation + 1;
        meshes.push(refined);
    }
    Ok(AdaptOutcome {
        meshes,
        trajectory,
        mesh_of_state,
        report: EstimatorReport { t0: times[0], alpha, initial, steps },
        trace,
    })
}
