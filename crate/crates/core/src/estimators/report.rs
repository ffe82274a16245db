use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Indicators of one dual cell on one time interval, `[s, p]` per family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellIndicators {
    pub cell: usize,
    pub cr: [f64; 2],
    pub cf: [f64; 2],
    pub df: [f64; 2],
    pub app: [f64; 2],
    /// Unavailable without an exact homogenized tensor.
    pub modeling: Option<[f64; 2]>,
}

impl CellIndicators {
    pub fn zero(cell: usize) -> Self {
        CellIndicators { cell, cr: [0.0; 2], cf: [0.0; 2], df: [0.0; 2], app: [0.0; 2], modeling: None }
    }

    /// `Σ_α (η_CR + η_CF + η_DF + η_APP)²`.
    pub fn combined(&self) -> f64 {
        (0..2)
            .map(|a| {
                let e = self.cr[a] + self.cf[a] + self.df[a] + self.app[a];
                e * e
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepIndicators {
    pub n: usize,
    pub t: f64,
    pub cells: Vec<CellIndicators>,
}

/// `Σ_α Σ_n Σ_D Δtⁿ η²` per family.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FamilyTotals {
    pub cr: f64,
    pub cf: f64,
    pub df: f64,
    pub app: f64,
    pub modeling: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorReport {
    pub t0: f64,
    pub alpha: f64,
    /// Squared initial-data term.
    pub initial: f64,
    pub steps: Vec<StepIndicators>,
}

pub const CSV_HEADER: [&str; 9] =
    ["n", "t", "cell", "alpha_phase", "eta_CR", "eta_CF", "eta_DF", "eta_APP", "eta_MOD_or_NA"];

pub(crate) fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse<T: std::str::FromStr>(field: &str, what: &str) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Config(format!("cannot parse {what} from '{field}'")))
}

impl EstimatorReport {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn n_cells(&self) -> usize {
        self.steps.first().map_or(0, |s| s.cells.len())
    }

    pub fn dt(&self, k: usize) -> f64 {
        let prev = if k == 0 { self.t0 } else { self.steps[k - 1].t };
        self.steps[k].t - prev
    }

    /// Steps may live on different meshes, but each must list its cells in
    /// order.
    fn check(&self) -> Result<()> {
        for step in &self.steps {
            if step.cells.is_empty() {
                return Err(Error::Dimension(format!("step {} has no cells", step.n)));
            }
            if let Some((i, _)) = step.cells.iter().enumerate().find(|(i, c)| c.cell != *i) {
                return Err(Error::MissingTensor(i));
            }
        }
        Ok(())
    }

    /// Initial term plus `Σ_α Σ_n Σ_D Δtⁿ (η_CR + η_CF + η_DF + η_APP)²`,
    /// time integrals by the midpoint rule.
    pub fn aggregate(&self) -> Result<f64> {
        self.check()?;
        let mut total = self.initial;
        for (k, step) in self.steps.iter().enumerate() {
            let dt = self.dt(k);
            for c in &step.cells {
                total += dt * c.combined();
            }
        }
        Ok(total)
    }

    /// The aggregate plus the modeling terms, when every cell has them.
    pub fn aggregate_with_modeling(&self) -> Result<Option<f64>> {
        let base = self.aggregate()?;
        Ok(self.totals().modeling.map(|m| base + m))
    }

    /// Per-cell `Σ_α Δtⁿ (…)²` of step index `k`, used for marking.
    pub fn cell_contributions(&self, k: usize) -> Vec<f64> {
        let dt = self.dt(k);
        self.steps[k].cells.iter().map(|c| dt * c.combined()).collect()
    }

    /// Per-cell sum of the contributions over all steps on one mesh.
    pub fn cell_totals(&self) -> Result<Vec<f64>> {
        self.check()?;
        let n = self.n_cells();
        if let Some(step) = self.steps.iter().find(|s| s.cells.len() != n) {
            return Err(Error::Dimension(format!("step {} has {} cells, expected {n}", step.n, step.cells.len())));
        }
        let mut out = vec![0.0; n];
        for k in 0..self.steps.len() {
            for (o, c) in out.iter_mut().zip(self.cell_contributions(k)) {
                *o += c;
            }
        }
        Ok(out)
    }

    pub fn totals(&self) -> FamilyTotals {
        let mut out = FamilyTotals { modeling: Some(0.0), ..Default::default() };
        for (k, step) in self.steps.iter().enumerate() {
            let dt = self.dt(k);
            for c in &step.cells {
                for a in 0..2 {
                    out.cr += dt * c.cr[a] * c.cr[a];
                    out.cf += dt * c.cf[a] * c.cf[a];
                    out.df += dt * c.df[a] * c.df[a];
                    out.app += dt * c.app[a] * c.app[a];
                }
                out.modeling = match (out.modeling, c.modeling) {
                    (Some(m), Some(e)) => Some(m + dt * (e[0] * e[0] + e[1] * e[1])),
                    _ => None,
                };
            }
        }
        if self.steps.is_empty() {
            out.modeling = None;
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |source| Error::Csv { path: "<estimator report>".into(), source };
        w.write_record(CSV_HEADER).map_err(io)?;
        for step in &self.steps {
            for c in &step.cells {
                for (a, phase) in ["s", "p"].into_iter().enumerate() {
                    let modeling = c.modeling.map_or_else(|| "NA".to_string(), |m| fmt17(m[a]));
                    w.write_record([
                        step.n.to_string(),
                        fmt17(step.t),
                        c.cell.to_string(),
                        phase.to_string(),
                        fmt17(c.cr[a]),
                        fmt17(c.cf[a]),
                        fmt17(c.df[a]),
                        fmt17(c.app[a]),
                        modeling,
                    ])
                    .map_err(io)?;
                }
            }
        }
        w.flush().map_err(|source| Error::Io { path: "<estimator report>".into(), source })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| match e {
            Error::Csv { source, .. } => Error::Csv { path: path.to_path_buf(), source },
            Error::Io { source, .. } => Error::Io { path: path.to_path_buf(), source },
            other => other,
        })
    }

    /// Rebuild a report from its CSV rows; `t0`, `alpha` and the initial
    /// term come from the summary block.
    pub fn read_csv<R: Read>(input: R, t0: f64, alpha: f64, initial: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let io = |source| Error::Csv { path: "<estimator report>".into(), source };
        let header = r.headers().map_err(io)?.clone();
        if header.iter().ne(CSV_HEADER) {
            return Err(Error::Config(format!("unexpected estimator CSV header {header:?}")));
        }
        let mut steps: Vec<StepIndicators> = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(io)?;
            let n: usize = parse(&rec[0], "n")?;
            let t: f64 = parse(&rec[1], "t")?;
            let cell: usize = parse(&rec[2], "cell")?;
            let a = match &rec[3] {
                "s" => 0,
                "p" => 1,
                other => return Err(Error::Config(format!("unknown phase '{other}'"))),
            };
            if steps.last().is_none_or(|s| s.n != n) {
                steps.push(StepIndicators { n, t, cells: Vec::new() });
            }
            let step = steps.last_mut().expect("pushed above");
            if step.cells.last().is_none_or(|c| c.cell != cell) {
                let mut c = CellIndicators::zero(cell);
                if &rec[8] != "NA" {
                    c.modeling = Some([0.0; 2]);
                }
                step.cells.push(c);
            }
            let c = step.cells.last_mut().expect("pushed above");
            c.cr[a] = parse(&rec[4], "eta_CR")?;
            c.cf[a] = parse(&rec[5], "eta_CF")?;
            c.df[a] = parse(&rec[6], "eta_DF")?;
            c.app[a] = parse(&rec[7], "eta_APP")?;
            if let Some(m) = c.modeling.as_mut() {
                m[a] = parse(&rec[8], "eta_MOD")?;
            }
        }
        Ok(EstimatorReport { t0, alpha, initial, steps })
    }

    /// Plain-text summary block with the aggregate and the family totals.
    pub fn summary(&self) -> Result<String> {
        let totals = self.totals();
        let na = |x: Option<f64>| x.map_or_else(|| "\"NA\"".to_string(), fmt17);
        let mut s = String::from("{\n");
        let mut line = |k: &str, v: String| writeln!(s, "  \"{k}\": {v},").expect("write to string");
        line("aggregate", fmt17(self.aggregate()?));
        line("aggregate_with_modeling", na(self.aggregate_with_modeling()?));
        line("initial", fmt17(self.initial));
        line("t0", fmt17(self.t0));
        line("alpha", fmt17(self.alpha));
        line("steps", self.steps.len().to_string());
        line("cells", self.n_cells().to_string());
        line("eta_CR", fmt17(totals.cr));
        line("eta_CF", fmt17(totals.cf));
        line("eta_DF", fmt17(totals.df));
        line("eta_APP", fmt17(totals.app));
        line("eta_MOD", na(totals.modeling));
        s.truncate(s.len() - 2);
        s.push_str("\n}\n");
        Ok(s)
    }

    /// Read `(t0, alpha, initial)` back from a summary block.
    pub fn parse_summary(text: &str) -> Result<(f64, f64, f64)> {
        let get = |key: &str| -> Result<f64> {
            let line = text
                .lines()
                .find(|l| l.trim_start().starts_with(&format!("\"{key}\"")))
                .ok_or_else(|| Error::Config(format!("summary has no '{key}' entry")))?;
            let value = line.split_once(':').map_or("", |(_, v)| v).trim().trim_end_matches(',');
            parse(value, key)
        };
        Ok((get("t0")?, get("alpha")?, get("initial")?))
    }
}
