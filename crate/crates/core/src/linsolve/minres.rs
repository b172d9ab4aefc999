use std::time::Instant;

use super::{dot, norm, relative_residual, SolveReport};
use crate::grid::SparseOperator;
use crate::{Error, Result};

/// Jacobi-preconditioned MINRES for symmetric, possibly indefinite operators.
///
/// The preconditioner must be positive definite, so every diagonal entry has to be
/// positive. The recurrence monitors a preconditioned residual estimate; convergence is
/// only declared after the true relative residual has been checked.
pub fn solve_minres(op: &SparseOperator, f: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    let n = op.n();
    if f.len() != n {
        return Err(Error::Shape(format!("rhs length {} != operator size {n}", f.len())));
    }
    if !op.is_symmetric() {
        return Err(Error::InvalidArgument("MINRES needs a symmetric operator".into()));
    }
    let inv_diag: Vec<f64> = op
        .diagonal()
        .into_iter()
        .map(|d| {
            if d > 0.0 {
                Ok(1.0 / d)
            } else {
                Err(Error::InvalidArgument(format!("Jacobi preconditioner needs a positive diagonal, got {d}")))
            }
        })
        .collect::<Result<_>>()?;
    let start = Instant::now();
    let mut x = vec![0.0; n];
    if norm(f) == 0.0 {
        return Ok((x, SolveReport { iterations: 0, relative_residual: 0.0, converged: true, wall_time: 0.0 }));
    }

    let mut r1 = f.to_vec();
    let mut r2 = f.to_vec();
    let mut y: Vec<f64> = f.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let beta1 = dot(f, &y).sqrt();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let mut w = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut rel = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut next_check = 0;

    while iterations < max_iter {
        iterations += 1;
        for i in 0..n {
            v[i] = y[i] / beta;
        }
        op.apply_into(&v, &mut y)?;
        if iterations >= 2 {
            let c = beta / oldb;
            for i in 0..n {
                y[i] -= c * r1[i];
            }
        }
        let alfa = dot(&v, &y);
        let c = alfa / beta;
        for i in 0..n {
            y[i] -= c * r2[i];
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        for i in 0..n {
            y[i] = inv_diag[i] * r2[i];
        }
        oldb = beta;
        let beta_sq = dot(&r2, &y);
        if beta_sq < 0.0 {
            return Err(Error::NumericalFailure("MINRES preconditioner lost definiteness".into()));
        }
        beta = beta_sq.sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::MIN_POSITIVE);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma;
            x[i] += phi * w[i];
        }
        if !phi.is_finite() {
            return Err(Error::NumericalFailure("MINRES recurrence is not finite".into()));
        }
        let estimate = phibar / beta1;
        if (estimate <= tol && iterations >= next_check) || beta == 0.0 {
            rel = relative_residual(op, &x, f)?;
            if rel <= tol {
                converged = true;
                break;
            }
            next_check = iterations + 10;
            if beta == 0.0 {
                break;
            }
        }
    }
    if !converged {
        rel = relative_residual(op, &x, f)?;
        converged = rel <= tol;
    }
    let report = SolveReport { iterations, relative_residual: rel, converged, wall_time: start.elapsed().as_secs_f64() };
    Ok((x, report))
}
