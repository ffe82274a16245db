//! Fluid closures: mobilities, capillary pressure, the Kirchhoff transform
//! and the global pressure, with numerical checks of the structural
//! assumptions on them.

mod quadrature;

use std::fmt;

pub use quadrature::{AdaptiveQuadrature, HermiteTable};

use crate::error::{Error, Result};
use crate::geometry::Point;

const TABLE_SIZE: usize = 2049;
const VALIDATION_POINTS: usize = 1001;
const CLAMP_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelPerm {
    /// `k_rw = s^n_w`, `k_rn = (1 - s)^n_n`.
    Corey { n_w: f64, n_n: f64 },
}

impl RelPerm {
    fn k_rw(&self, s: f64) -> f64 {
        match *self {
            RelPerm::Corey { n_w, .. } => s.powf(n_w),
        }
    }

    fn k_rn(&self, s: f64) -> f64 {
        match *self {
            RelPerm::Corey { n_n, .. } => (1.0 - s).powf(n_n),
        }
    }

    fn dk_rw(&self, s: f64) -> f64 {
        match *self {
            RelPerm::Corey { n_w, .. } if s > 0.0 => n_w * s.powf(n_w - 1.0),
            RelPerm::Corey { n_w, .. } => {
                if n_w == 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn dk_rn(&self, s: f64) -> f64 {
        match *self {
            RelPerm::Corey { n_n, .. } if s < 1.0 => -n_n * (1.0 - s).powf(n_n - 1.0),
            RelPerm::Corey { n_n, .. } => {
                if n_n == 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CapillaryPressure {
    /// `P_c = entry · (1 - s)`.
    Linear { entry: f64 },
    /// `P_c = entry · s^(-1/lambda)`.
    BrooksCorey { entry: f64, lambda: f64 },
    /// `P_c = (s^(-1/m) - 1)^(1/n) / alpha`, `m = 1 - 1/n`.
    VanGenuchten { alpha: f64, n: f64 },
}

impl CapillaryPressure {
    pub fn value(&self, s: f64) -> f64 {
        match *self {
            CapillaryPressure::Linear { entry } => entry * (1.0 - s),
            CapillaryPressure::BrooksCorey { entry, lambda } => entry * s.powf(-1.0 / lambda),
            CapillaryPressure::VanGenuchten { alpha, n } => {
                let m = 1.0 - 1.0 / n;
                (s.powf(-1.0 / m) - 1.0).max(0.0).powf(1.0 / n) / alpha
            }
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match *self {
            CapillaryPressure::Linear { entry } => -entry,
            CapillaryPressure::BrooksCorey { entry, lambda } => -entry / lambda * s.powf(-1.0 / lambda - 1.0),
            CapillaryPressure::VanGenuchten { alpha, n } => {
                let m = 1.0 - 1.0 / n;
                let inner = s.powf(-1.0 / m) - 1.0;
                if inner <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                -(1.0 / (alpha * n * m)) * inner.powf(1.0 / n - 1.0) * s.powf(-1.0 / m - 1.0)
            }
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::Assumption { assumption: "(A4)", detail });
        match *self {
            CapillaryPressure::Linear { entry } if !(entry >= 0.0) => bad(format!("linear entry pressure {entry} < 0")),
            CapillaryPressure::BrooksCorey { entry, lambda } if !(entry > 0.0 && lambda > 0.0) => {
                bad(format!("Brooks-Corey parameters entry={entry}, lambda={lambda} must be positive"))
            }
            CapillaryPressure::VanGenuchten { alpha, n } if !(alpha > 0.0 && n > 1.0) => {
                bad(format!("van Genuchten parameters alpha={alpha} > 0, n={n} > 1 required"))
            }
            _ => Ok(()),
        }
    }
}

/// Plain parameter set of a fluid/medium model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidParams {
    pub mu_w: f64,
    pub mu_n: f64,
    pub rho_w: f64,
    pub rho_n: f64,
    pub gravity: Point,
    pub relperm: RelPerm,
    pub capillary: CapillaryPressure,
    pub phi0: f64,
    /// Lower bound applied to both phase mobilities (0 disables it).
    pub mobility_floor: f64,
    pub cutoff: f64,
}

impl Default for FluidParams {
    fn default() -> Self {
        FluidParams {
            mu_w: 1.0,
            mu_n: 1.0,
            rho_w: 1.0,
            rho_n: 1.0,
            gravity: [0.0, 0.0],
            relperm: RelPerm::Corey { n_w: 2.0, n_n: 2.0 },
            capillary: CapillaryPressure::Linear { entry: 1.0 },
            phi0: 0.2,
            mobility_floor: 0.0,
            cutoff: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mobility {
    pub w: f64,
    pub n: f64,
    pub total: f64,
}

/// Result of checking the model on the validation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub c_lambda: f64,
    pub big_c_lambda: f64,
    pub upsilon_max: f64,
    pub upsilon_lipschitz: f64,
    pub shift_range: (f64, f64),
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "total mobility bounds: [{:.6e}, {:.6e}]", self.c_lambda, self.big_c_lambda)?;
        writeln!(f, "kirchhoff range: [0, {:.6e}]", self.upsilon_max)?;
        writeln!(f, "kirchhoff lipschitz bound: {:.6e}", self.upsilon_lipschitz)?;
        write!(f, "global pressure shift range: [{:.6e}, {:.6e}]", self.shift_range.0, self.shift_range.1)
    }
}

/// Fluid model with cached Kirchhoff and global-pressure tables.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidModel {
    params: FluidParams,
    upsilon: HermiteTable,
    shift: HermiteTable,
    report: ValidationReport,
}

fn clamp_checked(s: f64) -> Result<f64> {
    if !(-CLAMP_SLACK..=1.0 + CLAMP_SLACK).contains(&s) {
        return Err(Error::SaturationOutOfRange(s));
    }
    if !(0.0..=1.0).contains(&s) {
        log::warn!("saturation {s:e} clamped to [0, 1]");
    }
    Ok(s.clamp(0.0, 1.0))
}

impl FluidModel {
    /// Build and validate; violations of the mobility and capillarity
    /// assumptions are reported as errors naming the assumption.
    pub fn new(params: FluidParams) -> Result<Self> {
        let model = Self::build(params)?;
        model.validate()?;
        Ok(model)
    }

    /// Build without the structural checks, for degenerate test models such
    /// as vanishing capillarity.
    pub fn new_unvalidated(params: FluidParams) -> Result<Self> {
        Self::build(params)
    }

    fn build(params: FluidParams) -> Result<Self> {
        if !(params.mu_w > 0.0 && params.mu_n > 0.0) {
            return Err(Error::Assumption {
                assumption: "(A1)",
                detail: format!("viscosities must be positive, got {} and {}", params.mu_w, params.mu_n),
            });
        }
        if !(params.phi0 > 0.0 && params.phi0 < 1.0) {
            return Err(Error::Assumption {
                assumption: "(A3)",
                detail: format!("porosity {} outside (0, 1)", params.phi0),
            });
        }
        match params.relperm {
            RelPerm::Corey { n_w, n_n } if !(n_w >= 1.0 && n_n >= 1.0) => {
                return Err(Error::Assumption {
                    assumption: "(A1)",
                    detail: format!("Corey exponents must be >= 1, got {n_w} and {n_n}"),
                });
            }
            _ => {}
        }
        params.capillary.check()?;
        let mut model = FluidModel {
            params,
            upsilon: HermiteTable::new(vec![0.0; 2], vec![0.0; 2]),
            shift: HermiteTable::new(vec![0.0; 2], vec![0.0; 2]),
            report: ValidationReport {
                c_lambda: 0.0,
                big_c_lambda: 0.0,
                upsilon_max: 0.0,
                upsilon_lipschitz: 0.0,
                shift_range: (0.0, 0.0),
            },
        };
        let quad = model.quadrature();
        let n = TABLE_SIZE - 1;
        let grid: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let mut ups = vec![0.0; TABLE_SIZE];
        let mut sh = vec![0.0; TABLE_SIZE];
        for k in 0..n {
            ups[k + 1] = ups[k] + quad.integrate(&|s| model.upsilon_integrand(s), grid[k], grid[k + 1])?;
            sh[k + 1] = sh[k] + quad.integrate(&|s| model.shift_integrand(s), grid[k], grid[k + 1])?;
        }
        let ups_slopes: Vec<f64> = grid.iter().map(|&s| model.upsilon_integrand(s)).collect();
        let sh_slopes: Vec<f64> = grid.iter().map(|&s| model.shift_integrand(s)).collect();
        model.upsilon = HermiteTable::new(ups, ups_slopes);
        model.shift = HermiteTable::new(sh, sh_slopes);
        model.report = model.measure();
        Ok(model)
    }

    fn quadrature(&self) -> AdaptiveQuadrature {
        AdaptiveQuadrature { cutoff: self.params.cutoff, ..Default::default() }
    }

    pub fn params(&self) -> &FluidParams {
        &self.params
    }

    pub fn report(&self) -> &ValidationReport {
        &self.report
    }

    pub fn phi0(&self) -> f64 {
        self.params.phi0
    }

    pub fn gravity(&self) -> Point {
        self.params.gravity
    }

    pub fn rho_w(&self) -> f64 {
        self.params.rho_w
    }

    pub fn rho_n(&self) -> f64 {
        self.params.rho_n
    }

    fn raw_mobility(&self, s: f64) -> Mobility {
        let floor = self.params.mobility_floor;
        let w = (self.params.relperm.k_rw(s) / self.params.mu_w).max(floor);
        let n = (self.params.relperm.k_rn(s) / self.params.mu_n).max(floor);
        Mobility { w, n, total: w + n }
    }

    /// Mobilities at `s`, which may exceed `[0, 1]` by at most `1e-12`.
    pub fn mobility(&self, s: f64) -> Result<Mobility> {
        Ok(self.raw_mobility(clamp_checked(s)?))
    }

    /// Mobilities at `s` clamped into `[0, 1]`; for use inside nonlinear
    /// iterations where iterates may leave the physical range.
    pub fn mobility_clamped(&self, s: f64) -> Mobility {
        self.raw_mobility(s.clamp(0.0, 1.0))
    }

    /// `(dλ_w/ds, dλ_n/ds)`, one-sided at the ends, zero outside `[0, 1]`
    /// and where the floor is active.
    pub fn mobility_derivative(&self, s: f64) -> (f64, f64) {
        if !(0.0..=1.0).contains(&s) {
            return (0.0, 0.0);
        }
        let floor = self.params.mobility_floor;
        let rp = self.params.relperm;
        let dw =
            if rp.k_rw(s) / self.params.mu_w > floor || floor == 0.0 { rp.dk_rw(s) / self.params.mu_w } else { 0.0 };
        let dn =
            if rp.k_rn(s) / self.params.mu_n > floor || floor == 0.0 { rp.dk_rn(s) / self.params.mu_n } else { 0.0 };
        (dw, dn)
    }

    /// `P_c(s)`; singular families are evaluated at the cutoff near `s = 0`.
    pub fn capillary_pressure(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        let v = self.params.capillary.value(s);
        if v.is_finite() {
            v
        } else {
            self.params.capillary.value(self.params.cutoff)
        }
    }

    /// `P_c'(s)`, clamped like [`Self::capillary_pressure`].
    pub fn capillary_derivative(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        let d = self.params.capillary.derivative(s);
        if d.is_finite() {
            d
        } else {
            self.params.capillary.derivative(self.params.cutoff)
        }
    }

    fn upsilon_integrand(&self, s: f64) -> f64 {
        let m = self.raw_mobility(s);
        let d = self.params.capillary.derivative(s);
        if d == 0.0 {
            return 0.0;
        }
        -m.w * m.n / m.total * d
    }

    fn shift_integrand(&self, s: f64) -> f64 {
        let m = self.raw_mobility(s);
        let d = self.params.capillary.derivative(s);
        if d == 0.0 {
            return 0.0;
        }
        m.n / m.total * d
    }

    fn wetting_fraction_integrand(&self, s: f64) -> f64 {
        let m = self.raw_mobility(s);
        let d = self.params.capillary.derivative(s);
        if d == 0.0 {
            return 0.0;
        }
        m.w / m.total * d
    }

    /// Tabulated Kirchhoff transform `Υ(s)`.
    pub fn kirchhoff(&self, s: f64) -> Result<f64> {
        Ok(self.upsilon.eval(clamp_checked(s)?))
    }

    /// `Υ` with constant-slope extension outside `[0, 1]`.
    pub fn kirchhoff_extended(&self, s: f64) -> f64 {
        self.upsilon.eval(s)
    }

    /// Derivative of the tabulated transform.
    pub fn kirchhoff_derivative(&self, s: f64) -> f64 {
        self.upsilon.derivative(s)
    }

    pub fn kirchhoff_max(&self) -> f64 {
        self.upsilon.last()
    }

    pub fn kirchhoff_inverse(&self, u: f64) -> Result<f64> {
        let (lo, hi) = (self.upsilon.first(), self.upsilon.last());
        let slack = 1e-14 * hi.abs().max(1.0);
        if !(u >= lo - slack && u <= hi + slack) {
            return Err(Error::TransformOutOfRange { value: u, lo, hi });
        }
        if u <= lo {
            return Ok(0.0);
        }
        if u >= hi {
            return Ok(1.0);
        }
        Ok(self.upsilon.inverse_increasing(u))
    }

    /// `Υ(s)` by direct adaptive quadrature, bypassing the table.
    pub fn kirchhoff_quadrature(&self, s: f64) -> Result<f64> {
        let s = clamp_checked(s)?;
        self.quadrature().integrate(&|x| self.upsilon_integrand(x), 0.0, s)
    }

    /// `∫₀^s (λ_n/λ) P_c'`, so that `P = p_w + shift(s)`.
    pub fn pressure_shift(&self, s: f64) -> f64 {
        self.shift.eval(s)
    }

    pub fn pressure_shift_derivative(&self, s: f64) -> f64 {
        self.shift.derivative(s)
    }

    pub fn pressure_shift_quadrature(&self, s: f64) -> Result<f64> {
        let s = clamp_checked(s)?;
        self.quadrature().integrate(&|x| self.shift_integrand(x), 0.0, s)
    }

    /// Global pressure from the wetting pressure.
    pub fn global_pressure(&self, p_w: f64, s: f64) -> Result<f64> {
        let s = clamp_checked(s)?;
        Ok(p_w + self.shift.eval(s))
    }

    /// Wetting pressure from the global pressure.
    pub fn wetting_pressure(&self, global: f64, s: f64) -> Result<f64> {
        let s = clamp_checked(s)?;
        Ok(global - self.shift.eval(s))
    }

    /// `G_n(s) = -P_c(0) - ∫₀^s (λ_w/λ) P_c'`, so that `P = p_n + G_n(s)`;
    /// evaluated by quadrature independently of the tables.
    pub fn nonwetting_shift(&self, s: f64) -> Result<f64> {
        let s = clamp_checked(s)?;
        let i = self.quadrature().integrate(&|x| self.wetting_fraction_integrand(x), 0.0, s)?;
        Ok(-self.capillary_pressure(0.0) - i)
    }

    fn measure(&self) -> ValidationReport {
        let n = VALIDATION_POINTS - 1;
        let grid: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let lam: Vec<f64> = grid.iter().map(|&s| self.raw_mobility(s).total).collect();
        let ups: Vec<f64> = grid.iter().map(|&s| self.upsilon.eval(s)).collect();
        let sh: Vec<f64> = grid.iter().map(|&s| self.shift.eval(s)).collect();
        let lip = ups.windows(2).map(|w| (w[1] - w[0]).abs() * n as f64).fold(0.0, f64::max);
        ValidationReport {
            c_lambda: lam.iter().copied().fold(f64::INFINITY, f64::min),
            big_c_lambda: lam.iter().copied().fold(0.0, f64::max),
            upsilon_max: self.upsilon.last(),
            upsilon_lipschitz: lip,
            shift_range: (
                sh.iter().copied().fold(f64::INFINITY, f64::min),
                sh.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ),
        }
    }

    fn validate(&self) -> Result<()> {
        let rp = self.params.relperm;
        if rp.k_rw(0.0) != 0.0 || rp.k_rn(1.0) != 0.0 {
            return Err(Error::Assumption {
                assumption: "(A1)",
                detail: "relative permeabilities must vanish at the residual ends".into(),
            });
        }
        let r = &self.report;
        if !(r.c_lambda > 0.0 && r.big_c_lambda.is_finite()) {
            return Err(Error::Assumption {
                assumption: "(A1)",
                detail: format!("total mobility not bounded away from 0: min {:e}", r.c_lambda),
            });
        }
        let n = VALIDATION_POINTS - 1;
        let mut prev_pc = f64::INFINITY;
        let mut prev_ups = f64::NEG_INFINITY;
        for k in 0..=n {
            let s = k as f64 / n as f64;
            let pc = self.capillary_pressure(s);
            if !(pc < prev_pc) {
                return Err(Error::Assumption {
                    assumption: "(A4)",
                    detail: format!("capillary pressure not strictly decreasing at s = {s}"),
                });
            }
            prev_pc = pc;
            let u = self.upsilon.eval(s);
            if !(u > prev_ups) {
                return Err(Error::Assumption {
                    assumption: "(A4)",
                    detail: format!("Kirchhoff transform not strictly increasing at s = {s}"),
                });
            }
            prev_ups = u;
        }
        if !r.upsilon_lipschitz.is_finite() {
            return Err(Error::Assumption {
                assumption: "(A4)",
                detail: "Kirchhoff transform has no finite Lipschitz bound".into(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corey2() -> FluidModel {
        FluidModel::new(FluidParams::default()).unwrap()
    }

    #[test]
    fn corey_mobilities() {
        let m = corey2();
        assert_eq!(m.mobility(0.0).unwrap(), Mobility { w: 0.0, n: 1.0, total: 1.0 });
        assert_eq!(m.mobility(0.5).unwrap(), Mobility { w: 0.25, n: 0.25, total: 0.5 });
        assert_eq!(m.mobility(1.0).unwrap(), Mobility { w: 1.0, n: 0.0, total: 1.0 });
        assert!(m.mobility(1.0 + 1e-13).is_ok());
        assert!(matches!(m.mobility(1.1), Err(Error::SaturationOutOfRange(_))));
    }

    #[test]
    fn endpoints_of_transforms() {
        let m = corey2();
        assert_eq!(m.kirchhoff(0.0).unwrap(), 0.0);
        assert_eq!(m.kirchhoff_inverse(0.0).unwrap(), 0.0);
        assert_eq!(m.kirchhoff_inverse(m.kirchhoff_max()).unwrap(), 1.0);
        assert!(m.kirchhoff_inverse(m.kirchhoff_max() * 1.01).is_err());
        assert_eq!(m.global_pressure(3.5, 0.0).unwrap(), 3.5);
    }

    #[test]
    fn rejects_increasing_capillary_pressure() {
        let p = FluidParams { capillary: CapillaryPressure::Linear { entry: 0.0 }, ..Default::default() };
        let err = FluidModel::new(p).unwrap_err();
        assert!(err.to_string().contains("(A4)"), "{err}");
        assert!(FluidModel::new_unvalidated(p).is_ok());
    }

    #[test]
    fn brooks_corey_and_van_genuchten_build() {
        let bc = FluidParams {
            relperm: RelPerm::Corey { n_w: 3.0, n_n: 2.0 },
            capillary: CapillaryPressure::BrooksCorey { entry: 0.5, lambda: 2.0 },
            ..Default::default()
        };
        let m = FluidModel::new(bc).unwrap();
        assert!(m.kirchhoff_max() > 0.0);
        let vg = FluidParams {
            relperm: RelPerm::Corey { n_w: 3.0, n_n: 2.0 },
            capillary: CapillaryPressure::VanGenuchten { alpha: 2.0, n: 3.0 },
            ..Default::default()
        };
        let m = FluidModel::new(vg).unwrap();
        for k in 1..10 {
            let s = k as f64 / 10.0;
            let u = m.kirchhoff(s).unwrap();
            assert!((m.kirchhoff_inverse(u).unwrap() - s).abs() < 1e-9);
        }
    }
}
