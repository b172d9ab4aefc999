//! Ground-truth solvers: Jacobi-preconditioned CG for SPD systems, MINRES and restarted
//! GMRES for the indefinite Helmholtz systems, and a partially pivoted dense LU.

mod cg;
mod dense;
mod gmres;
mod minres;

pub use cg::{solve_cg, solve_cg_observed};
pub use dense::{solve_dense, solve_dense_with_cap, LuFactors, DEFAULT_DENSE_CAP};
pub use gmres::{solve_gmres, DEFAULT_RESTART};
pub use minres::solve_minres;

use crate::grid::{Definiteness, DiscreteSystem};
use crate::Result;

/// Default ground-truth tolerance on the relative residual.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    pub wall_time: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Picks CG for SPD operators, MINRES for symmetric indefinite ones with a positive
/// diagonal, and GMRES otherwise.
pub fn solve_system(system: &DiscreteSystem, tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    let op = &system.operator;
    match op.definiteness() {
        Definiteness::Spd => solve_cg(op, &system.rhs, tol, max_iter),
        Definiteness::Indefinite if op.is_symmetric() && op.diagonal().iter().all(|&d| d > 0.0) => {
            solve_minres(op, &system.rhs, tol, max_iter)
        }
        Definiteness::Indefinite => solve_gmres(op, &system.rhs, tol, DEFAULT_RESTART, max_iter),
    }
}

/// `‖A u − f‖₂ / ‖f‖₂` (or `‖A u‖₂` when `f = 0`).
pub fn relative_residual(op: &crate::grid::SparseOperator, u: &[f64], f: &[f64]) -> Result<f64> {
    let au = op.apply(u)?;
    let r: f64 = au.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let nf = norm(f);
    Ok(if nf > 0.0 { r / nf } else { r })
}
