use std::time::Instant;

use super::{dot, norm, SolveReport};
use crate::grid::{Definiteness, SparseOperator};
use crate::{Error, Result};

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
pub fn solve_cg(op: &SparseOperator, f: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    solve_cg_observed(op, f, tol, max_iter, |_, _| {})
}

/// As [`solve_cg`], calling `observe(iteration, x)` after every update.
pub fn solve_cg_observed(
    op: &SparseOperator,
    f: &[f64],
    tol: f64,
    max_iter: usize,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<(Vec<f64>, SolveReport)> {
    if op.definiteness() != Definiteness::Spd {
        return Err(Error::Indefinite);
    }
    let n = op.n();
    if f.len() != n {
        return Err(Error::Shape(format!("rhs length {} != operator size {n}", f.len())));
    }
    let start = Instant::now();
    let mut x = vec![0.0; n];
    let norm_f = norm(f);
    if norm_f == 0.0 {
        let report = SolveReport { iterations: 0, relative_residual: 0.0, converged: true, wall_time: 0.0 };
        return Ok((x, report));
    }
    // A non-positive diagonal entry is itself a direction of non-positive curvature.
    let inv_diag: Vec<f64> = op
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { Ok(1.0 / d) } else { Err(Error::Breakdown { iteration: 0, curvature: d }) })
        .collect::<Result<_>>()?;

    let mut r = f.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    let mut iterations = 0;
    while iterations < max_iter {
        op.apply_into(&p, &mut ap)?;
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::Breakdown { iteration: iterations, curvature });
        }
        let alpha = rz / curvature;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        iterations += 1;
        observe(iterations, &x);
        rel = norm(&r) / norm_f;
        if rel <= tol {
            break;
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    if !rel.is_finite() {
        return Err(Error::NumericalFailure("CG residual is not finite".into()));
    }
    let report = SolveReport {
        iterations,
        relative_residual: rel,
        converged: rel <= tol,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((x, report))
}
