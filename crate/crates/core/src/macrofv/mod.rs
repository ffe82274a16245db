//! Vertex-centered finite volumes for the upscaled two-phase system, in the
//! Kirchhoff/global-pressure form and in the phase form with upwinding.

mod flow;
mod run;
mod scheme;

use std::fmt;
use std::sync::Arc;

pub use flow::FlowFunctions;
pub use run::{dirichlet_guess, initial_state, run, run_from, step, RunOptions, StepRecord, Trajectory};
pub use scheme::{FaceFluxes, FaceTensors, FvScheme, NewtonOptions, NonlinearSolveReport};

use crate::constitutive::FluidModel;
use crate::error::{Error, Result};
use crate::geometry::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Formulation {
    /// Unknowns `(S, P)`: saturation and global pressure.
    Kirchhoff,
    /// Unknowns `(s_w, p_w)` with upwind mobilities.
    Phases,
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Formulation::Kirchhoff => "kirchhoff",
            Formulation::Phases => "phases",
        })
    }
}

impl std::str::FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kirchhoff" | "global" => Ok(Formulation::Kirchhoff),
            "phases" | "phase" | "upwind" => Ok(Formulation::Phases),
            other => Err(Error::Config(format!("unknown formulation '{other}'"))),
        }
    }
}

/// Time levels `t⁰ < t¹ < … < t^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Config("time grid needs at least two levels".into()));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::Config(format!("time levels not strictly increasing: {} then {}", w[0], w[1])));
        }
        Ok(TimeGrid { times })
    }

    pub fn uniform(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(t_end > t0) {
            return Err(Error::Config(format!("invalid time interval [{t0}, {t_end}] with {steps} steps")));
        }
        let dt = (t_end - t0) / steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|n| t0 + n as f64 * dt).collect();
        times[steps] = t_end;
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self, n: usize) -> f64 {
        self.times[n] - self.times[n - 1]
    }

    /// `τ = max Δtⁿ`.
    pub fn tau(&self) -> f64 {
        (1..self.times.len()).map(|n| self.dt(n)).fold(0.0, f64::max)
    }
}

/// Nodal unknowns at one time level. `p` is the global pressure in the
/// Kirchhoff form and the wetting pressure in the phase form.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub formulation: Formulation,
    pub s: Vec<f64>,
    pub p: Vec<f64>,
}

impl State {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Largest excursion of the saturation outside `[0, 1]`.
    pub fn clip_extent(&self) -> f64 {
        self.s.iter().map(|&s| (-s).max(s - 1.0).max(0.0)).fold(0.0, f64::max)
    }

    pub fn global_pressure(&self, model: &FluidModel) -> Vec<f64> {
        match self.formulation {
            Formulation::Kirchhoff => self.p.clone(),
            Formulation::Phases => {
                self.p.iter().zip(&self.s).map(|(&p, &s)| p + model.pressure_shift(s.clamp(0.0, 1.0))).collect()
            }
        }
    }

    pub fn wetting_pressure(&self, model: &FluidModel) -> Vec<f64> {
        match self.formulation {
            Formulation::Phases => self.p.clone(),
            Formulation::Kirchhoff => {
                self.p.iter().zip(&self.s).map(|(&p, &s)| p - model.pressure_shift(s.clamp(0.0, 1.0))).collect()
            }
        }
    }

    /// `(s_n, p_n)` with `s_n = 1 - s_w` and `p_n = p_w + P_c(s_w)`.
    pub fn nonwetting(&self, model: &FluidModel) -> (Vec<f64>, Vec<f64>) {
        let p_w = self.wetting_pressure(model);
        let s_n = self.s.iter().map(|s| 1.0 - s).collect();
        let p_n = p_w.iter().zip(&self.s).map(|(p, &s)| p + model.capillary_pressure(s)).collect();
        (s_n, p_n)
    }

    /// The same physical state in the other set of unknowns.
    pub fn convert(&self, model: &FluidModel, to: Formulation) -> State {
        let p = match to {
            Formulation::Kirchhoff => self.global_pressure(model),
            Formulation::Phases => self.wetting_pressure(model),
        };
        State { t: self.t, formulation: to, s: self.s.clone(), p }
    }
}

pub type SpaceTimeFn = Arc<dyn Fn(Point, f64) -> f64 + Send + Sync>;

/// Initial saturation and Dirichlet data `S̄`, `P̄` (global pressure).
#[derive(Clone)]
pub struct FlowData {
    pub initial_saturation: Arc<dyn Fn(Point) -> f64 + Send + Sync>,
    pub boundary_saturation: SpaceTimeFn,
    pub boundary_pressure: SpaceTimeFn,
}

impl FlowData {
    pub fn new(
        initial_saturation: impl Fn(Point) -> f64 + Send + Sync + 'static,
        boundary_saturation: impl Fn(Point, f64) -> f64 + Send + Sync + 'static,
        boundary_pressure: impl Fn(Point, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        FlowData {
            initial_saturation: Arc::new(initial_saturation),
            boundary_saturation: Arc::new(boundary_saturation),
            boundary_pressure: Arc::new(boundary_pressure),
        }
    }

    /// Uniform saturation and pressure everywhere.
    pub fn equilibrium(s: f64, p: f64) -> Self {
        Self::new(move |_| s, move |_, _| s, move |_, _| p)
    }
}

impl fmt::Debug for FlowData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FlowData { .. }")
    }
}
