use super::scheme::{FvScheme, NewtonOptions, NonlinearSolveReport};
use super::{FlowData, Formulation, State, TimeGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub formulation: Formulation,
    pub newton: NewtonOptions,
    /// Maximum number of successive time-step halvings.
    pub max_halvings: u32,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { formulation: Formulation::Kirchhoff, newton: NewtonOptions::default(), max_halvings: 10 }
    }
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub newton_iters: usize,
    pub residual: [f64; 2],
    pub clip_extent: f64,
    pub halvings: u32,
}

/// Accepted time levels (including any sub-steps) and the run log.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub log: Vec<StepRecord>,
}

impl Trajectory {
    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }
}

fn boundary_values(scheme: &FvScheme, data: &FlowData, form: Formulation, v: usize, t: f64) -> (f64, f64) {
    let x = scheme.mesh().vertices()[v];
    let s = (data.boundary_saturation)(x, t);
    let p = (data.boundary_pressure)(x, t);
    match form {
        Formulation::Kirchhoff => (s, p),
        Formulation::Phases => (s, p - scheme.model().pressure_shift(s.clamp(0.0, 1.0))),
    }
}

/// Previous state with the Dirichlet values of time `t` on the boundary.
pub fn dirichlet_guess(scheme: &FvScheme, data: &FlowData, prev: &State, t: f64) -> State {
    let mut next = State { t, ..prev.clone() };
    for v in (0..next.len()).filter(|&v| scheme.mesh().is_boundary(v)) {
        let (s, p) = boundary_values(scheme, data, prev.formulation, v, t);
        next.s[v] = s;
        next.p[v] = p;
    }
    next
}

/// `S⁰` from the data and `P⁰` from the pressure equation.
pub fn initial_state(
    scheme: &FvScheme,
    data: &FlowData,
    t0: f64,
    form: Formulation,
    newton: &NewtonOptions,
) -> Result<State> {
    let mesh = scheme.mesh();
    let n = mesh.n_vertices();
    let mut s = vec![0.0; n];
    let mut p_bc = vec![0.0; n];
    for v in 0..n {
        let x = mesh.vertices()[v];
        if mesh.is_boundary(v) {
            s[v] = (data.boundary_saturation)(x, t0);
            p_bc[v] = (data.boundary_pressure)(x, t0);
        } else {
            s[v] = (data.initial_saturation)(x);
        }
        if !(-1e-12..=1.0 + 1e-12).contains(&s[v]) {
            return Err(Error::SaturationOutOfRange(s[v]));
        }
    }
    let p = scheme.initial_pressure(&s, &p_bc, &newton.linear)?;
    let state = State { t: t0, formulation: Formulation::Kirchhoff, s, p };
    Ok(state.convert(scheme.model(), form))
}

/// One implicit Euler step to time `t`, without step-size control.
pub fn step(
    scheme: &FvScheme,
    data: &FlowData,
    prev: &State,
    t: f64,
    newton: &NewtonOptions,
) -> Result<(State, NonlinearSolveReport)> {
    scheme.solve_step(dirichlet_guess(scheme, data, prev, t), prev, newton)
}

/// March over the time grid, halving a step that fails to converge.
pub fn run(scheme: &FvScheme, data: &FlowData, grid: &TimeGrid, opts: &RunOptions) -> Result<Trajectory> {
    let t0 = grid.times()[0];
    let first = initial_state(scheme, data, t0, opts.formulation, &opts.newton)?;
    run_from(scheme, data, first, grid, opts)
}

/// March from a given state at the first level of `grid`.
pub fn run_from(
    scheme: &FvScheme,
    data: &FlowData,
    first: State,
    grid: &TimeGrid,
    opts: &RunOptions,
) -> Result<Trajectory> {
    if first.len() != scheme.mesh().n_vertices() {
        return Err(Error::Dimension(format!(
            "state of {} nodes on a {}-vertex mesh",
            first.len(),
            scheme.mesh().n_vertices()
        )));
    }
    let mut traj = Trajectory { states: vec![first], log: Vec::new() };
    for n in 1..=grid.steps() {
        let target = grid.times()[n];
        let base = grid.dt(n);
        let mut level = 0u32;
        loop {
            let prev = traj.last();
            let remaining = target - prev.t;
            if remaining <= 1e-12 * base {
                break;
            }
            let dt = base / f64::from(1u32 << level);
            let t = if dt >= remaining * (1.0 - 1e-9) { target } else { prev.t + dt };
            let (state, report) = step(scheme, data, prev, t, &opts.newton)?;
            if report.converged {
                log::debug!(
                    "step {n}: t = {t:.6e}, {} Newton iterations, residual {:?}",
                    report.iterations,
                    report.residual
                );
                traj.log.push(StepRecord {
                    step: traj.log.len() + 1,
                    t,
                    dt: t - prev.t,
                    newton_iters: report.iterations,
                    residual: report.residual,
                    clip_extent: state.clip_extent(),
                    halvings: level,
                });
                traj.states.push(State { t, ..state });
            } else {
                level += 1;
                let detail = report.failure.unwrap_or_default();
                if level > opts.max_halvings {
                    return Err(Error::NewtonDivergence {
                        t,
                        detail: format!("{detail} after {} time-step halvings", opts.max_halvings),
                    });
                }
                log::warn!("step {n} to t = {t:.6e} rejected ({detail}); halving the time step");
            }
        }
    }
    Ok(traj)
}
