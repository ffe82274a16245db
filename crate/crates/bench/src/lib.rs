//! Fixtures shared by the benchmarks.

use hmmflow::driver::SimConfig;
use hmmflow::Result;

/// Layered `{1, 4}` medium normal to `x` with a left inflow, on an
/// `nx × nx` grid with `m × m` cell meshes.
pub fn layered(nx: usize, m: usize, steps: usize) -> Result<SimConfig> {
    let text = format!(
        "[domain]\nnx = {nx}\nny = {nx}\n\
         [coefficient]\nkind = layered\nvalues = 1, 4\nwave = 1, 0\n\
         [micro]\nepsilon = 0.125\nm = {m}\n\
         [fluids]\ncapillary = brooks-corey\nentry = 0.5\nlambda = 2.0\n\
         [data]\ninitial_saturation = 0.2\ninflow_side = left\ninflow_saturation = 0.85\npressure = 2.0, -2.0, 0.0\n\
         [time]\nt_end = {}\nsteps = {steps}\n",
        0.01 * steps as f64
    );
    SimConfig::parse(&text, None)
}

/// Two-scale checkerboard with contrast 9.
pub fn checkerboard(nx: usize, m: usize) -> Result<SimConfig> {
    let text = format!(
        "[domain]\nnx = {nx}\nny = {nx}\n\
         [coefficient]\nkind = checkerboard\nvalues = 1, 9\n\
         [micro]\nepsilon = 0.0625\nm = {m}\n\
         [data]\ninitial_saturation = 0.3\n\
         [time]\nt_end = 0.01\nsteps = 1\n"
    );
    SimConfig::parse(&text, None)
}
