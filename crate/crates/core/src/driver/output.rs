use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::constitutive::FluidModel;
use crate::error::{Error, Result};
use crate::estimators::fmt17;
use crate::fluxrecon::Reconstruction;
use crate::geometry::{self, Point};
use crate::macrofv::{Formulation, State, StepRecord};
use crate::mesh::{CoarseMesh, DualMesh};
use crate::microcell::EffectiveTensorField;

const VTK_TRIANGLE: u8 = 5;
const VTK_POLYGON: u8 = 7;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Create `path` (and its parent directories) and run `body` on a buffered
/// writer, attaching the path to any I/O failure.
pub fn write_file(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn header(w: &mut dyn Write, title: &str, points: &[Point]) -> std::io::Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", points.len())?;
    for p in points {
        writeln!(w, "{} {} 0", fmt17(p[0]), fmt17(p[1]))?;
    }
    Ok(())
}

fn cells(w: &mut dyn Write, cells: &[Vec<usize>], kind: u8) -> std::io::Result<()> {
    let size: usize = cells.iter().map(|c| c.len() + 1).sum();
    writeln!(w, "CELLS {} {size}", cells.len())?;
    for c in cells {
        write!(w, "{}", c.len())?;
        for v in c {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "CELL_TYPES {}", cells.len())?;
    for _ in cells {
        writeln!(w, "{kind}")?;
    }
    Ok(())
}

fn scalars(w: &mut dyn Write, name: &str, values: &[f64]) -> std::io::Result<()> {
    writeln!(w, "SCALARS {name} double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for v in values {
        writeln!(w, "{}", fmt17(*v))?;
    }
    Ok(())
}

fn vectors(w: &mut dyn Write, name: &str, values: &[Point]) -> std::io::Result<()> {
    writeln!(w, "VECTORS {name} double")?;
    for v in values {
        writeln!(w, "{} {} 0", fmt17(v[0]), fmt17(v[1]))?;
    }
    Ok(())
}

fn triangle_cells(mesh: &CoarseMesh) -> Vec<Vec<usize>> {
    mesh.triangles().iter().map(|t| t.to_vec()).collect()
}

/// Nodal snapshot: the primary unknowns plus `s_n` and `p_n`.
pub fn write_vtk_state(w: &mut dyn Write, mesh: &CoarseMesh, model: &FluidModel, state: &State) -> std::io::Result<()> {
    header(w, &format!("hmmflow state t = {}", fmt17(state.t)), mesh.vertices())?;
    cells(w, &triangle_cells(mesh), VTK_TRIANGLE)?;
    writeln!(w, "POINT_DATA {}", mesh.n_vertices())?;
    let (s_name, p_name) = match state.formulation {
        Formulation::Kirchhoff => ("S", "P"),
        Formulation::Phases => ("s_w", "p_w"),
    };
    scalars(w, s_name, &state.s)?;
    scalars(w, p_name, &state.p)?;
    let (s_n, p_n) = state.nonwetting(model);
    scalars(w, "s_n", &s_n)?;
    scalars(w, "p_n", &p_n)
}

/// Dual cells as polygons carrying the effective tensor and its local data.
pub fn write_vtk_tensors(w: &mut dyn Write, dual: &DualMesh, rows: &[TensorRow]) -> std::io::Result<()> {
    let mut points = Vec::new();
    let mut polys = Vec::with_capacity(dual.cells.len());
    for cell in &dual.cells {
        let start = points.len();
        points.extend_from_slice(&cell.polygon);
        polys.push((start..points.len()).collect());
    }
    header(w, "hmmflow effective tensors", &points)?;
    cells(w, &polys, VTK_POLYGON)?;
    writeln!(w, "CELL_DATA {}", rows.len())?;
    let column = |f: fn(&TensorRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    scalars(w, "K11", &column(|r| r.k.xx))?;
    scalars(w, "K12", &column(|r| r.k.xy))?;
    scalars(w, "K22", &column(|r| r.k.yy))?;
    scalars(w, "alpha_loc", &column(|r| r.alpha_loc))?;
    scalars(w, "beta_loc", &column(|r| r.beta_loc))?;
    scalars(w, "m_indicator", &column(|r| r.m_indicator))
}

/// Reconstructed `u_s`, `u_p` at triangle barycenters.
pub fn write_vtk_fluxes(w: &mut dyn Write, mesh: &CoarseMesh, rec: &Reconstruction) -> std::io::Result<()> {
    header(w, "hmmflow reconstructed fluxes", mesh.vertices())?;
    cells(w, &triangle_cells(mesh), VTK_TRIANGLE)?;
    let at_barycenters = |field: &crate::fluxrecon::FluxField| -> Vec<Point> {
        (0..mesh.n_triangles())
            .map(|t| {
                let b = geometry::centroid(&mesh.triangle_points(t));
                let sum = (0..6).fold([0.0; 2], |acc, i| geometry::add(acc, field.pieces[6 * t + i].eval(b)));
                geometry::scale(sum, 1.0 / 6.0)
            })
            .collect()
    };
    writeln!(w, "CELL_DATA {}", mesh.n_triangles())?;
    vectors(w, "u_s", &at_barycenters(&rec.wetting))?;
    vectors(w, "u_p", &at_barycenters(&rec.total))
}

/// One row of the upscaled tensor table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorRow {
    pub x: Point,
    pub k: crate::geometry::Tensor2,
    pub alpha_loc: f64,
    pub beta_loc: f64,
    pub m_indicator: f64,
}

pub const TENSOR_HEADER: [&str; 8] = ["x", "y", "K11", "K12", "K22", "alpha_loc", "beta_loc", "m_indicator"];

/// Tensor table of a field on `mesh`; uniform fields report their
/// eigenvalues and a zero `m` term.
pub fn tensor_rows(mesh: &CoarseMesh, field: &EffectiveTensorField) -> Vec<TensorRow> {
    mesh.vertices()
        .iter()
        .zip(&field.tensors)
        .enumerate()
        .map(|(i, (&x, &k))| match field.solutions.get(i) {
            Some(sol) => TensorRow { x, k, alpha_loc: sol.alpha, beta_loc: sol.beta, m_indicator: sol.jump },
            None => {
                let e = k.eigenvalues();
                TensorRow { x, k, alpha_loc: e[0], beta_loc: e[1], m_indicator: 0.0 }
            }
        })
        .collect()
}

fn csv_err(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

/// CSV with a header row and 17 significant digits.
pub fn write_csv_table<W: Write>(
    w: W,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(csv_err)?;
    for row in rows {
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()
}

pub fn write_tensor_csv<W: Write>(w: W, rows: &[TensorRow]) -> std::io::Result<()> {
    write_csv_table(
        w,
        &TENSOR_HEADER,
        rows.iter().map(|r| {
            [r.x[0], r.x[1], r.k.xx, r.k.xy, r.k.yy, r.alpha_loc, r.beta_loc, r.m_indicator]
                .iter()
                .map(|v| fmt17(*v))
                .collect()
        }),
    )
}

pub const RUN_LOG_HEADER: [&str; 8] =
    ["step", "t", "dt", "newton_iters", "residual_s", "residual_p", "clip_extent", "halvings"];

pub fn write_run_log<W: Write>(w: W, log: &[StepRecord]) -> std::io::Result<()> {
    write_csv_table(
        w,
        &RUN_LOG_HEADER,
        log.iter().map(|r| {
            vec![
                r.step.to_string(),
                fmt17(r.t),
                fmt17(r.dt),
                r.newton_iters.to_string(),
                fmt17(r.residual[0]),
                fmt17(r.residual[1]),
                fmt17(r.clip_extent),
                r.halvings.to_string(),
            ]
        }),
    )
}
