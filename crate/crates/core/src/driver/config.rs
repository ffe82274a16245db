use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ini::Ini;

use crate::adapt::{AdaptPolicy, Cadence, Families};
use crate::constitutive::{CapillaryPressure, FluidModel, FluidParams, RelPerm};
use crate::error::{Error, Result};
use crate::estimators::EstimatorOptions;
use crate::geometry::{Point, Tensor2};
use crate::linalg::SolverKind;
use crate::macrofv::{FlowData, RunOptions, TimeGrid};
use crate::mesh::{CoarseMesh, Rect};
use crate::microcell::{Coefficient, MicroConfig, RasterField, TensorSource, Upscaler};

/// Environment variable that replaces the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "HMMFLOW_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainConfig {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
}

/// How the macro solver obtains its permeability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upscaling {
    /// Periodic cell problems at every dual cell.
    Cells,
    /// The closed-form homogenized tensor.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    fn parse(s: &str) -> Result<Option<Side>> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "none" | "" => None,
            "left" => Some(Side::Left),
            "right" => Some(Side::Right),
            "bottom" => Some(Side::Bottom),
            "top" => Some(Side::Top),
            other => return Err(Error::Config(format!("unknown boundary side '{other}'"))),
        })
    }

    fn contains(&self, rect: &Rect, x: Point) -> bool {
        let tol = 1e-12 * (rect.x1 - rect.x0).max(rect.y1 - rect.y0);
        match self {
            Side::Left => (x[0] - rect.x0).abs() <= tol,
            Side::Right => (x[0] - rect.x1).abs() <= tol,
            Side::Bottom => (x[1] - rect.y0).abs() <= tol,
            Side::Top => (x[1] - rect.y1).abs() <= tol,
        }
    }
}

/// Initial and Dirichlet data: uniform saturations with an optional inflow
/// side, and a linear global pressure `p0 + px x + py y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataConfig {
    pub initial_saturation: f64,
    pub boundary_saturation: f64,
    pub inflow: Option<(Side, f64)>,
    pub pressure: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeConfig {
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write a snapshot every this many accepted steps (0 for final only).
    pub snapshot_every: usize,
    pub vtk: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleConfig {
    None,
    /// Closed-form homogenized tensor of the coefficient.
    Analytic,
    /// Fine-scale run with mesh width at most `ε / resolution`.
    Fine {
        resolution: f64,
        dof_budget: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub m_values: Vec<usize>,
    pub epsilons: Vec<f64>,
}

/// Complete simulation setup read from a sectioned `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub domain: DomainConfig,
    pub coefficient: Coefficient,
    pub micro: MicroConfig,
    pub upscaling: Upscaling,
    pub fluid: FluidParams,
    pub data: DataConfig,
    pub time: TimeConfig,
    pub run: RunOptions,
    pub estimator: EstimatorOptions,
    pub adapt: AdaptPolicy,
    pub output: OutputConfig,
    pub oracle: OracleConfig,
    pub study: StudyConfig,
}

/// Key store that reports keys nobody asked for.
struct Entries {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Entries {
    fn new(ini: &Ini) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (name, props) in ini.iter() {
            let name = name.unwrap_or("").trim().to_ascii_lowercase();
            let entry = sections.entry(name.clone()).or_default();
            for (k, v) in props.iter() {
                let key = k.trim().to_ascii_lowercase();
                if entry.insert(key.clone(), v.trim().to_string()).is_some() {
                    return Err(Error::Config(format!("duplicate key '{key}' in [{name}]")));
                }
            }
        }
        sections.retain(|_, v| !v.is_empty());
        Ok(Entries { sections })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<String> {
        self.sections.get_mut(section).and_then(|s| s.remove(key))
    }

    fn parse<T: std::str::FromStr>(&mut self, section: &str, key: &str, default: Option<T>) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(section, key) {
            Some(v) => v.parse().map_err(|e| Error::Config(format!("[{section}] {key} = '{v}': {e}"))),
            None => default.ok_or_else(|| Error::Config(format!("missing required key '{key}' in [{section}]"))),
        }
    }

    fn float(&mut self, section: &str, key: &str, default: Option<f64>) -> Result<f64> {
        let v: f64 = self.parse(section, key, default)?;
        if !v.is_finite() {
            return Err(Error::Config(format!("[{section}] {key} must be finite")));
        }
        Ok(v)
    }

    fn list<T: std::str::FromStr>(&mut self, section: &str, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(section, key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|f| f.trim().parse().map_err(|e| Error::Config(format!("[{section}] {key} = '{v}': {e}"))))
                .collect(),
        }
    }

    fn pair(&mut self, section: &str, key: &str, default: [f64; 2]) -> Result<[f64; 2]> {
        let v: Vec<f64> = self.list(section, key, default.to_vec())?;
        <[f64; 2]>::try_from(v.as_slice())
            .map_err(|_| Error::Config(format!("[{section}] {key} needs exactly two values")))
    }

    fn finish(self) -> Result<()> {
        for (name, keys) in &self.sections {
            if let Some(k) = keys.keys().next() {
                return Err(Error::Config(format!("unknown key '{k}' in [{name}]")));
            }
        }
        Ok(())
    }
}

fn tensor(values: &[f64]) -> Result<Tensor2> {
    match *values {
        [k] => Ok(Tensor2::iso(k)),
        [xx, yy] => Ok(Tensor2::diag(xx, yy)),
        [xx, xy, yy] => Ok(Tensor2::new(xx, xy, yy)),
        _ => Err(Error::Config(format!("a tensor needs 1, 2 or 3 entries, got {}", values.len()))),
    }
}

fn solver_kind(s: &str) -> Result<SolverKind> {
    match s.trim().to_ascii_lowercase().as_str() {
        "direct" => Ok(SolverKind::Direct),
        "iterative" => Ok(SolverKind::Iterative),
        other => Err(Error::Config(format!("unknown linear solver '{other}'"))),
    }
}

fn flag(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(Error::Config(format!("expected a boolean, got '{other}'"))),
    }
}

impl SimConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, path.parent())
    }

    /// Parse configuration text; relative file names resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(format!("malformed configuration: {e}")))?;
        let mut e = Entries::new(&ini)?;
        let known = [
            "domain",
            "coefficient",
            "micro",
            "fluids",
            "data",
            "time",
            "solver",
            "estimator",
            "adapt",
            "output",
            "oracle",
            "study",
        ];
        if let Some(name) = e.sections.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown section [{name}]")));
        }

        let rect = Rect::new(
            e.float("domain", "x0", Some(0.0))?,
            e.float("domain", "x1", Some(1.0))?,
            e.float("domain", "y0", Some(0.0))?,
            e.float("domain", "y1", Some(1.0))?,
        );
        let domain =
            DomainConfig { rect, nx: e.parse("domain", "nx", Some(8))?, ny: e.parse("domain", "ny", Some(8))? };

        let epsilon = e.float("micro", "epsilon", None)?;
        let kappa = e.float("micro", "kappa", Some(epsilon))?;
        let mut micro = MicroConfig {
            epsilon,
            kappa,
            kappa0: e.float("micro", "kappa0", Some(kappa))?,
            m: e.parse("micro", "m", Some(16))?,
            subsamples: e.parse("micro", "subsamples", Some(4))?,
            solver: SolverKind::Direct,
            tol: e.float("micro", "tol", Some(1e-12))?,
        };
        if let Some(s) = e.take("micro", "solver") {
            micro.solver = solver_kind(&s)?;
        }
        let upscaling = match e.take("micro", "upscaling").as_deref().map(str::to_ascii_lowercase).as_deref() {
            None | Some("cells") => Upscaling::Cells,
            Some("exact") => Upscaling::Exact,
            Some(other) => return Err(Error::Config(format!("unknown upscaling '{other}'"))),
        };

        let kind = e.take("coefficient", "kind").unwrap_or_else(|| "constant".into()).to_ascii_lowercase();
        let coefficient = match kind.as_str() {
            "constant" => Coefficient::Constant(tensor(&e.list("coefficient", "value", vec![1.0])?)?),
            "layered" => Coefficient::Layered {
                wave: e.pair("coefficient", "wave", [1.0, 0.0])?,
                values: e.pair("coefficient", "values", [1.0, 4.0])?,
                period: epsilon,
                fraction: e.float("coefficient", "fraction", Some(0.5))?,
            },
            "checkerboard" => {
                Coefficient::Checkerboard { values: e.pair("coefficient", "values", [1.0, 4.0])?, period: epsilon }
            }
            "smooth" => Coefficient::Smooth { period: epsilon },
            "raster" => {
                let file = PathBuf::from(e.parse::<String>("coefficient", "file", None)?);
                let file = match base {
                    Some(b) if file.is_relative() => b.join(file),
                    _ => file,
                };
                Coefficient::Raster(RasterField::from_csv(
                    &file,
                    [rect.x0, rect.y0],
                    [rect.x1 - rect.x0, rect.y1 - rect.y0],
                )?)
            }
            other => return Err(Error::Config(format!("unknown coefficient kind '{other}'"))),
        };

        let defaults = FluidParams::default();
        let capillary =
            match e.take("fluids", "capillary").unwrap_or_else(|| "linear".into()).to_ascii_lowercase().as_str() {
                "linear" => CapillaryPressure::Linear { entry: e.float("fluids", "entry", Some(1.0))? },
                "brooks-corey" | "brooks_corey" => CapillaryPressure::BrooksCorey {
                    entry: e.float("fluids", "entry", Some(1.0))?,
                    lambda: e.float("fluids", "lambda", Some(2.0))?,
                },
                "van-genuchten" | "van_genuchten" => CapillaryPressure::VanGenuchten {
                    alpha: e.float("fluids", "vg_alpha", Some(1.0))?,
                    n: e.float("fluids", "vg_n", Some(2.0))?,
                },
                other => return Err(Error::Config(format!("unknown capillary pressure model '{other}'"))),
            };
        if let Some(r) = e.take("fluids", "relperm") {
            if !r.eq_ignore_ascii_case("corey") {
                return Err(Error::Config(format!("unknown relative permeability model '{r}'")));
            }
        }
        let fluid = FluidParams {
            mu_w: e.float("fluids", "mu_w", Some(defaults.mu_w))?,
            mu_n: e.float("fluids", "mu_n", Some(defaults.mu_n))?,
            rho_w: e.float("fluids", "rho_w", Some(defaults.rho_w))?,
            rho_n: e.float("fluids", "rho_n", Some(defaults.rho_n))?,
            gravity: e.pair("fluids", "gravity", defaults.gravity)?,
            relperm: RelPerm::Corey {
                n_w: e.float("fluids", "n_w", Some(2.0))?,
                n_n: e.float("fluids", "n_n", Some(2.0))?,
            },
            capillary,
            phi0: e.float("fluids", "phi0", Some(defaults.phi0))?,
            mobility_floor: e.float("fluids", "mobility_floor", Some(0.0))?,
            cutoff: e.float("fluids", "cutoff", Some(defaults.cutoff))?,
        };

        let initial_saturation = e.float("data", "initial_saturation", None)?;
        let boundary_saturation = e.float("data", "boundary_saturation", Some(initial_saturation))?;
        let inflow = match Side::parse(&e.take("data", "inflow_side").unwrap_or_default())? {
            Some(side) => Some((side, e.float("data", "inflow_saturation", None)?)),
            None => None,
        };
        let pressure: Vec<f64> = e.list("data", "pressure", vec![0.0, 0.0, 0.0])?;
        let pressure = <[f64; 3]>::try_from(pressure.as_slice())
            .map_err(|_| Error::Config("[data] pressure needs three coefficients p0, px, py".into()))?;
        let data = DataConfig { initial_saturation, boundary_saturation, inflow, pressure };

        let time = TimeConfig {
            t0: e.float("time", "t0", Some(0.0))?,
            t_end: e.float("time", "t_end", None)?,
            steps: e.parse("time", "steps", None)?,
        };

        let mut run = RunOptions::default();
        if let Some(f) = e.take("solver", "formulation") {
            run.formulation = f.parse()?;
        }
        run.newton.tol = e.float("solver", "newton_tol", Some(run.newton.tol))?;
        run.newton.max_iter = e.parse("solver", "newton_max_iter", Some(run.newton.max_iter))?;
        run.newton.max_damping = e.parse("solver", "max_damping", Some(run.newton.max_damping))?;
        if let Some(s) = e.take("solver", "linear") {
            run.newton.linear.kind = solver_kind(&s)?;
        }
        run.newton.linear.tol = e.float("solver", "linear_tol", Some(run.newton.linear.tol))?;
        run.newton.linear.max_iter = e.parse("solver", "linear_max_iter", Some(run.newton.linear.max_iter))?;
        run.max_halvings = e.parse("solver", "max_halvings", Some(run.max_halvings))?;

        let mut estimator = EstimatorOptions::default();
        estimator.recon_tol = e.float("estimator", "recon_tol", Some(estimator.recon_tol))?;
        estimator.initial_refinements =
            e.parse("estimator", "initial_refinements", Some(estimator.initial_refinements))?;
        estimator.linear.kind = run.newton.linear.kind;

        let mut adapt = AdaptPolicy::default();
        adapt.theta = e.float("adapt", "theta", Some(adapt.theta))?;
        adapt.max_generations = e.parse("adapt", "max_generations", Some(adapt.max_generations))?;
        adapt.cadence = e.parse::<Cadence>("adapt", "cadence", Some(adapt.cadence))?;
        if let Some(list) = e.take("adapt", "families") {
            let mut f = Families { cr: false, cf: false, df: false, app: false };
            for name in list.split(',').map(|s| s.trim().to_ascii_lowercase()) {
                match name.as_str() {
                    "cr" => f.cr = true,
                    "cf" => f.cf = true,
                    "df" => f.df = true,
                    "app" => f.app = true,
                    other => return Err(Error::Config(format!("unknown indicator family '{other}'"))),
                }
            }
            adapt.families = f;
        }

        let output = OutputConfig {
            dir: PathBuf::from(e.take("output", "dir").unwrap_or_else(|| "output".into())),
            snapshot_every: e.parse("output", "snapshot_every", Some(1))?,
            vtk: flag(&e.take("output", "vtk").unwrap_or_else(|| "true".into()))?,
        };

        let oracle = match e.take("oracle", "kind").unwrap_or_else(|| "none".into()).to_ascii_lowercase().as_str() {
            "none" => OracleConfig::None,
            "analytic" => OracleConfig::Analytic,
            "fine" => OracleConfig::Fine {
                resolution: e.float("oracle", "resolution", Some(8.0))?,
                dof_budget: e.parse("oracle", "dof_budget", Some(250_000))?,
            },
            other => return Err(Error::Config(format!("unknown oracle kind '{other}'"))),
        };

        let study = StudyConfig {
            m_values: e.list("study", "m_values", vec![8, 16, 32])?,
            epsilons: e.list("study", "epsilons", vec![epsilon])?,
        };

        e.finish()?;
        let cfg = SimConfig {
            domain,
            coefficient,
            micro,
            upscaling,
            fluid,
            data,
            time,
            run,
            estimator,
            adapt,
            output,
            oracle,
            study,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field checks; model assumptions are named in the message.
    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        if !(d.rect.x1 > d.rect.x0 && d.rect.y1 > d.rect.y0) {
            return Err(Error::MeshParameters(format!("empty domain {:?}", d.rect)));
        }
        if d.nx == 0 || d.ny == 0 {
            return Err(Error::MeshParameters(format!(
                "mesh needs at least one cell per direction, got {}x{}",
                d.nx, d.ny
            )));
        }
        self.micro.validate()?;
        self.coefficient.validate().map_err(|e| Error::Assumption { assumption: "(A2)", detail: e.to_string() })?;
        if self.upscaling == Upscaling::Exact && self.coefficient.homogenized().is_none() {
            return Err(Error::Config(
                "exact upscaling needs a coefficient with a closed-form homogenized tensor".into(),
            ));
        }
        if self.oracle == OracleConfig::Analytic && self.coefficient.homogenized().is_none() {
            return Err(Error::Config(
                "analytic oracle needs a coefficient with a closed-form homogenized tensor".into(),
            ));
        }
        if let OracleConfig::Fine { resolution, dof_budget } = self.oracle {
            if !(resolution >= 1.0) || dof_budget == 0 {
                return Err(Error::Config(format!(
                    "fine oracle needs resolution >= 1 and a positive budget, got {resolution}, {dof_budget}"
                )));
            }
        }
        self.model()?;
        let data = &self.data;
        if !(0.0..=1.0).contains(&data.initial_saturation) {
            return Err(Error::Assumption {
                assumption: "(A7)",
                detail: format!("initial saturation {} outside [0, 1]", data.initial_saturation),
            });
        }
        let inflow = data.inflow.map(|(_, s)| s);
        for s in std::iter::once(data.boundary_saturation).chain(inflow) {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Assumption {
                    assumption: "(A6)",
                    detail: format!("boundary saturation {s} outside [0, 1]"),
                });
            }
        }
        self.time_grid()?;
        self.adapt.validate()?;
        if self.study.m_values.iter().any(|&m| m < 2) || self.study.epsilons.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Config("study needs m >= 2 and positive epsilons".into()));
        }
        if self.estimator.recon_tol <= 0.0 || self.run.newton.tol <= 0.0 || self.run.newton.linear.tol <= 0.0 {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        Ok(())
    }

    /// The same setup at another fine scale; `κ` and `κ₀` keep their ratio
    /// to `ε`.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<SimConfig> {
        let mut out = self.clone();
        let ratio = epsilon / self.micro.epsilon;
        out.micro.epsilon = epsilon;
        out.micro.kappa *= ratio;
        out.micro.kappa0 *= ratio;
        match &mut out.coefficient {
            Coefficient::Layered { period, .. }
            | Coefficient::Checkerboard { period, .. }
            | Coefficient::Smooth { period } => {
                *period = epsilon;
            }
            Coefficient::Constant(_) | Coefficient::Raster(_) => {}
        }
        out.validate()?;
        Ok(out)
    }

    pub fn mesh(&self) -> Result<CoarseMesh> {
        CoarseMesh::build_structured(self.domain.nx, self.domain.ny, self.domain.rect)
    }

    pub fn model(&self) -> Result<FluidModel> {
        FluidModel::new(self.fluid)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.time.t0, self.time.t_end, self.time.steps)
    }

    pub fn flow_data(&self) -> FlowData {
        let DataConfig { initial_saturation, boundary_saturation, inflow, pressure } = self.data;
        let rect = self.domain.rect;
        FlowData::new(
            move |_| initial_saturation,
            move |x, _| match inflow {
                Some((side, s)) if side.contains(&rect, x) => s,
                _ => boundary_saturation,
            },
            move |x, _| pressure[0] + pressure[1] * x[0] + pressure[2] * x[1],
        )
    }

    /// Closed-form homogenized tensor, when the oracle section asks for it.
    pub fn oracle_tensor(&self) -> Option<Tensor2> {
        match self.oracle {
            OracleConfig::Analytic => self.coefficient.homogenized(),
            _ => None,
        }
    }

    pub fn upscaler(&self) -> Result<Upscaler> {
        Ok(Upscaler::new(self.coefficient.clone(), self.micro)?.with_oracle(self.oracle_tensor()))
    }

    pub fn tensor_source(&self) -> Result<TensorSource> {
        match self.upscaling {
            Upscaling::Cells => Ok(TensorSource::Upscaled(Box::new(self.upscaler()?))),
            Upscaling::Exact => self
                .coefficient
                .homogenized()
                .map(TensorSource::Uniform)
                .ok_or_else(|| Error::Config("coefficient has no closed-form homogenized tensor".into())),
        }
    }

    /// Configured output directory unless the environment overrides it.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output.dir.clone(),
        }
    }
}
