use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hmmflow::adapt::{adapt_run, write_trace, AdaptProblem, Cadence};
use hmmflow::driver::{self, SimConfig};
use hmmflow::fluxrecon::reconstruct;
use hmmflow::macrofv::Formulation;

#[derive(Parser)]
#[command(name = "hmmflow", version, about = "Multiscale two-phase Darcy flow with a posteriori error control")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Simulation configuration file.
    #[arg(short, long)]
    config: PathBuf,

    /// Output directory, overriding the configuration and the environment.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormulationArg {
    Kirchhoff,
    Phases,
}

#[derive(Clone, Copy, ValueEnum)]
enum CadenceArg {
    PerRun,
    PerStep,
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyMode {
    /// Upscaled against closed-form tensors over the configured `m` values.
    ModelingError,
    /// HMM runs against fine-scale references over the configured `ε`.
    FineReference,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cell problems and write the effective tensor field.
    Upscale {
        #[command(flatten)]
        common: Common,
    },
    /// March the macro problem and write snapshots and the run log.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        formulation: Option<FormulationArg>,
        /// Also write the reconstructed fluxes of the last step.
        #[arg(long)]
        fluxes: bool,
    },
    /// Run and evaluate the error indicators.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        formulation: Option<FormulationArg>,
    },
    /// Adaptive refinement driven by the indicators.
    AdaptRun {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        generations: Option<usize>,
        #[arg(long, value_enum)]
        cadence: Option<CadenceArg>,
    },
    /// Convergence studies against closed-form or fine-scale references.
    Study {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: StudyMode,
    },
}

/// Marks failures to read or validate the configuration.
#[derive(Debug)]
struct BadConfig(PathBuf);

impl fmt::Display for BadConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration {}", self.0.display())
    }
}

fn load(common: &Common) -> Result<(SimConfig, PathBuf)> {
    let cfg = SimConfig::load(&common.config).with_context(|| BadConfig(common.config.clone()))?;
    let dir = common.output.clone().unwrap_or_else(|| cfg.output_dir());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok((cfg, dir))
}

fn apply_formulation(cfg: &mut SimConfig, arg: Option<FormulationArg>) {
    if let Some(f) = arg {
        cfg.run.formulation = match f {
            FormulationArg::Kirchhoff => Formulation::Kirchhoff,
            FormulationArg::Phases => Formulation::Phases,
        };
    }
}

fn upscale(common: &Common) -> Result<()> {
    let (cfg, dir) = load(common)?;
    let mesh = cfg.mesh()?;
    let dual = hmmflow::mesh::DualMesh::build(&mesh)?;
    let source = cfg.tensor_source()?;
    let field = source.tensor_field(&mesh)?;
    let rows = driver::tensor_rows(&mesh, &field);
    driver::write_file(&dir.join("tensors.csv"), |w| driver::write_tensor_csv(w, &rows))?;
    if cfg.output.vtk {
        driver::write_file(&dir.join("tensors.vtk"), |w| driver::write_vtk_tensors(w, &dual, &rows))?;
    }
    println!("upscaled {} cells with {} cell solves, alpha = {:.6e}", rows.len(), source.solves(), field.alpha);
    Ok(())
}

fn snapshot_indices(n_states: usize, every: usize) -> Vec<usize> {
    let last = n_states - 1;
    let mut out: Vec<usize> = if every == 0 { Vec::new() } else { (0..last).step_by(every).collect() };
    out.push(last);
    out
}

fn run(common: &Common, formulation: Option<FormulationArg>, fluxes: bool) -> Result<()> {
    let (mut cfg, dir) = load(common)?;
    apply_formulation(&mut cfg, formulation);
    let source = cfg.tensor_source()?;
    let sim = driver::simulate(&cfg, &source)?;
    let traj = &sim.trajectory;
    if cfg.output.vtk {
        for k in snapshot_indices(traj.states.len(), cfg.output.snapshot_every) {
            let path = dir.join(format!("state_{k:04}.vtk"));
            driver::write_file(&path, |w| driver::write_vtk_state(w, &sim.mesh, &sim.model, &traj.states[k]))?;
        }
    }
    driver::write_file(&dir.join("run_log.csv"), |w| driver::write_run_log(w, &traj.log))?;
    if fluxes && traj.states.len() > 1 {
        let n = traj.states.len();
        let rec = reconstruct(&sim.scheme()?, &traj.states[n - 1], &traj.states[n - 2], cfg.estimator.recon_tol)?;
        driver::write_file(&dir.join("fluxes.vtk"), |w| driver::write_vtk_fluxes(w, &sim.mesh, &rec))?;
    }
    let iterations: usize = traj.log.iter().map(|r| r.newton_iters).sum();
    println!(
        "{} formulation: {} steps to t = {:.6e}, {iterations} Newton iterations, clip extent {:.3e}",
        cfg.run.formulation,
        traj.log.len(),
        traj.last().t,
        traj.states.iter().map(|s| s.clip_extent()).fold(0.0, f64::max)
    );
    Ok(())
}

fn estimate(common: &Common, formulation: Option<FormulationArg>) -> Result<()> {
    let (mut cfg, dir) = load(common)?;
    apply_formulation(&mut cfg, formulation);
    let source = cfg.tensor_source()?;
    let sim = driver::simulate(&cfg, &source)?;
    let report = sim.estimate(&source, &cfg)?;
    report.save_csv(&dir.join("estimators.csv"))?;
    let summary = report.summary()?;
    let path = dir.join("estimator_summary.txt");
    std::fs::write(&path, &summary).with_context(|| format!("writing {}", path.display()))?;
    print!("{summary}");
    Ok(())
}

fn adapt(common: &Common, theta: Option<f64>, generations: Option<usize>, cadence: Option<CadenceArg>) -> Result<()> {
    let (mut cfg, dir) = load(common)?;
    if let Some(t) = theta {
        cfg.adapt.theta = t;
    }
    if let Some(g) = generations {
        cfg.adapt.max_generations = g;
    }
    if let Some(c) = cadence {
        cfg.adapt.cadence = match c {
            CadenceArg::PerRun => Cadence::PerRun,
            CadenceArg::PerStep => Cadence::PerStep,
        };
    }
    cfg.adapt.validate().with_context(|| BadConfig(common.config.clone()))?;
    let source = cfg.tensor_source()?;
    let (model, data, grid) = (cfg.model()?, cfg.flow_data(), cfg.time_grid()?);
    let problem = AdaptProblem {
        source: &source,
        model: &model,
        data: &data,
        grid: &grid,
        run: cfg.run,
        estimator: cfg.estimator,
    };
    let out = adapt_run(&problem, cfg.mesh()?, &cfg.adapt)?;
    let trace_path = dir.join("adapt_trace.csv");
    let file = std::fs::File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?;
    write_trace(&out.trace, std::io::BufWriter::new(file))?;
    out.report.save_csv(&dir.join("estimators.csv"))?;
    if cfg.output.vtk {
        let last = out.trajectory.last();
        let mesh = &out.meshes[*out.mesh_of_state.last().expect("non-empty trajectory")];
        driver::write_file(&dir.join("adapted_state.vtk"), |w| driver::write_vtk_state(w, mesh, &model, last))?;
    }
    for row in &out.trace {
        let after = row.aggregate_after.map_or_else(|| "NA".to_string(), |a| format!("{a:.6e}"));
        println!(
            "cycle {}: {} triangles, {} new cell solves, aggregate {:.6e} -> {after}",
            row.cycle, row.n_triangles, row.n_cellsolves_new, row.aggregate_before
        );
    }
    Ok(())
}

fn study(common: &Common, mode: StudyMode) -> Result<()> {
    let (cfg, dir) = load(common)?;
    match mode {
        StudyMode::ModelingError => {
            let rows = driver::modeling_study(&cfg)?;
            driver::write_file(&dir.join("modeling_error.csv"), |w| driver::write_modeling_study(w, &rows))?;
            println!("{:>6}  {:>24}  {:>24}", "m", "max ||K0_h - K0||_F", "relative");
            for r in &rows {
                println!("{:>6}  {:>24.16e}  {:>24.16e}", r.m, r.max_error, r.relative);
            }
        }
        StudyMode::FineReference => {
            let rows = driver::fine_study(&cfg)?;
            driver::write_file(&dir.join("fine_reference.csv"), |w| driver::write_fine_study(w, &rows))?;
            println!(
                "{:>10}  {:>14}  {:>14}  {:>14}  {:>12}",
                "epsilon", "L2 error", "combined", "aggregate", "effectivity"
            );
            for r in &rows {
                println!(
                    "{:>10.4e}  {:>14.6e}  {:>14.6e}  {:>14.6e}  {:>12.4}",
                    r.epsilon, r.saturation_l2, r.combined_error, r.aggregate, r.effectivity
                );
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<BadConfig>().is_some() {
        return 2;
    }
    match err.downcast_ref::<hmmflow::Error>() {
        Some(e) if e.is_config() => 2,
        _ => 3,
    }
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Upscale { common } => upscale(common),
        Command::Run { common, formulation, fluxes } => run(common, *formulation, *fluxes),
        Command::Estimate { common, formulation } => estimate(common, *formulation),
        Command::AdaptRun { common, theta, generations, cadence } => adapt(common, *theta, *generations, *cadence),
        Command::Study { common, mode } => study(common, *mode),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
