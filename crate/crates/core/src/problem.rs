//! PDE families and their constants.
//!
//! Every family is an instance of
//! `mass · (1 + η) u − ∇·(a ∇u) = f` on the unit square, where the mass coefficient is
//! `+1` for Poisson, `−(2πκ)²` for Helmholtz and `0` for Darcy.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// Amplitude of the ring coefficient in the high-contrast Poisson setting.
pub const HIGH_CONTRAST: f64 = 6.0e5;
/// Amplitude of the ring coefficient used with Helmholtz, giving `‖η‖∞ ∼ 1`.
pub const HELMHOLTZ_CONTRAST: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Poisson,
    Helmholtz,
    Darcy,
}

impl Family {
    pub fn code(self) -> u8 {
        match self {
            Family::Poisson => 0,
            Family::Helmholtz => 1,
            Family::Darcy => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Family::Poisson),
            1 => Ok(Family::Helmholtz),
            2 => Ok(Family::Darcy),
            other => Err(Error::Format(format!("unknown family code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::Helmholtz => "helmholtz",
            Family::Darcy => "darcy",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poisson" => Ok(Family::Poisson),
            "helmholtz" => Ok(Family::Helmholtz),
            "darcy" => Ok(Family::Darcy),
            other => Err(Error::InvalidArgument(format!("unknown family '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryKind {
    /// Prescribed outward normal derivative `∂u/∂n = g`.
    Neumann,
    /// Homogeneous Dirichlet data; boundary nodes are eliminated.
    DirichletZero,
}

impl BoundaryKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryKind::Neumann => "neumann",
            BoundaryKind::DirichletZero => "dirichlet-zero",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "neumann" => Ok(BoundaryKind::Neumann),
            "dirichlet-zero" => Ok(BoundaryKind::DirichletZero),
            other => Err(Error::Format(format!("unknown boundary kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SourceSpec {
    /// `f` and `g` obtained by inserting `u = 1.4 cos(5πx) sin(0.8πy)` into the Poisson operator.
    ManufacturedPoisson,
    /// Sum of three isotropic Gaussians, `g = 0`.
    GaussianSumHelmholtz { centers: [(f64, f64); 3], sigmas: [f64; 3] },
    ConstantOne,
}

impl SourceSpec {
    pub fn gaussian_sum_default() -> Self {
        SourceSpec::GaussianSumHelmholtz {
            centers: [(0.5, 0.8), (0.1, 0.3), (0.7, 0.4)],
            sigmas: [0.2 / SQRT_2, 0.3 / SQRT_2, 0.3 / SQRT_2],
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            SourceSpec::ManufacturedPoisson => "manufactured-poisson",
            SourceSpec::GaussianSumHelmholtz { .. } => "gaussian-sum",
            SourceSpec::ConstantOne => "constant-one",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub family: Family,
    /// `(2πκ)²`; 1 for Poisson, 0 for Darcy.
    pub kappa_sq: f64,
    pub beta: i8,
    /// Ring amplitude `c` (unused for Darcy).
    pub contrast: f64,
    pub boundary: BoundaryKind,
    pub source: SourceSpec,
}

impl ProblemSpec {
    pub fn poisson(contrast: f64) -> Self {
        ProblemSpec {
            family: Family::Poisson,
            kappa_sq: 1.0,
            beta: -1,
            contrast,
            boundary: BoundaryKind::Neumann,
            source: SourceSpec::ManufacturedPoisson,
        }
    }

    pub fn helmholtz(kappa_sq: f64, contrast: f64) -> Self {
        ProblemSpec {
            family: Family::Helmholtz,
            kappa_sq,
            beta: 1,
            contrast,
            boundary: BoundaryKind::Neumann,
            source: SourceSpec::gaussian_sum_default(),
        }
    }

    pub fn darcy() -> Self {
        ProblemSpec {
            family: Family::Darcy,
            kappa_sq: 0.0,
            beta: -1,
            contrast: 0.0,
            boundary: BoundaryKind::DirichletZero,
            source: SourceSpec::ConstantOne,
        }
    }

    /// Default spec for a family: high contrast Poisson, `(2πκ)² = 100` Helmholtz.
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Poisson => Self::poisson(HIGH_CONTRAST),
            Family::Helmholtz => Self::helmholtz(100.0, HELMHOLTZ_CONTRAST),
            Family::Darcy => Self::darcy(),
        }
    }

    /// Coefficient multiplying `(1 + η) u`.
    pub fn mass_coefficient(&self) -> f64 {
        -f64::from(self.beta) * self.kappa_sq
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.family {
            Family::Poisson => {
                self.beta == -1 && self.kappa_sq == 1.0 && self.boundary == BoundaryKind::Neumann
            }
            Family::Helmholtz => {
                self.beta == 1 && self.kappa_sq > 0.0 && self.boundary == BoundaryKind::Neumann
            }
            Family::Darcy => {
                self.beta == -1
                    && self.kappa_sq == 0.0
                    && self.boundary == BoundaryKind::DirichletZero
            }
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "inconsistent constants for {}: beta={}, kappa_sq={}, boundary={:?}",
                self.family, self.beta, self.kappa_sq, self.boundary
            )));
        }
        if self.family != Family::Darcy && !(self.contrast >= 0.0 && self.contrast.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad contrast {}", self.contrast)));
        }
        Ok(())
    }
}

/// The manufactured field used for Poisson data and for verification.
pub fn manufactured_u(x: f64, y: f64) -> f64 {
    1.4 * (5.0 * PI * x).cos() * (0.8 * PI * y).sin()
}

/// Analytic `(∂x u, ∂y u)` of [`manufactured_u`].
pub fn manufactured_grad(x: f64, y: f64) -> (f64, f64) {
    let dx = -1.4 * 5.0 * PI * (5.0 * PI * x).sin() * (0.8 * PI * y).sin();
    let dy = 1.4 * 0.8 * PI * (5.0 * PI * x).cos() * (0.8 * PI * y).cos();
    (dx, dy)
}

/// Analytic `Δu` of [`manufactured_u`].
pub fn manufactured_laplacian(x: f64, y: f64) -> f64 {
    -(25.0 + 0.64) * PI * PI * manufactured_u(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_invariants() {
        for fam in [Family::Poisson, Family::Helmholtz, Family::Darcy] {
            ProblemSpec::default_for(fam).validate().unwrap();
            assert_eq!(Family::from_code(fam.code()).unwrap(), fam);
        }
        let mut bad = ProblemSpec::poisson(1.0);
        bad.beta = 1;
        assert!(bad.validate().is_err());
        let mut bad = ProblemSpec::helmholtz(100.0, 0.5);
        bad.kappa_sq = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mass_signs() {
        assert_eq!(ProblemSpec::poisson(1.0).mass_coefficient(), 1.0);
        assert_eq!(ProblemSpec::helmholtz(100.0, 0.5).mass_coefficient(), -100.0);
        assert_eq!(ProblemSpec::darcy().mass_coefficient(), 0.0);
    }

    #[test]
    fn manufactured_derivatives_match_finite_differences() {
        let (x, y, e) = (0.31, 0.72, 1e-6);
        let (dx, dy) = manufactured_grad(x, y);
        let fdx = (manufactured_u(x + e, y) - manufactured_u(x - e, y)) / (2.0 * e);
        let fdy = (manufactured_u(x, y + e) - manufactured_u(x, y - e)) / (2.0 * e);
        assert!((dx - fdx).abs() < 1e-6 * dx.abs().max(1.0));
        assert!((dy - fdy).abs() < 1e-6 * dy.abs().max(1.0));
        let e = 1e-4;
        let lap = (manufactured_u(x + e, y) + manufactured_u(x - e, y) + manufactured_u(x, y + e)
            + manufactured_u(x, y - e)
            - 4.0 * manufactured_u(x, y))
            / (e * e);
        assert!((lap - manufactured_laplacian(x, y)).abs() < 1e-3 * lap.abs().max(1.0));
    }
}
