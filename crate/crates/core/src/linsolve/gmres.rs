use std::time::Instant;

use super::{dot, norm, SolveReport};
use crate::grid::SparseOperator;
use crate::{Error, Result};

pub const DEFAULT_RESTART: usize = 50;

/// Restarted GMRES with right Jacobi preconditioning from a zero initial guess.
///
/// Right preconditioning keeps the monitored residual equal to the true residual
/// `‖f − A u‖ / ‖f‖`. A full restart cycle without any residual decrease is an error.
pub fn solve_gmres(
    op: &SparseOperator,
    f: &[f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = op.n();
    if f.len() != n {
        return Err(Error::Shape(format!("rhs length {} != operator size {n}", f.len())));
    }
    if restart == 0 {
        return Err(Error::InvalidArgument("GMRES restart length must be positive".into()));
    }
    let start = Instant::now();
    let mut x = vec![0.0; n];
    let norm_f = norm(f);
    if norm_f == 0.0 {
        return Ok((x, SolveReport { iterations: 0, relative_residual: 0.0, converged: true, wall_time: 0.0 }));
    }
    let inv_diag: Vec<f64> = op.diagonal().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();

    let mut r = f.to_vec();
    let mut rel = 1.0;
    let mut iterations = 0;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(restart + 1);
    let mut hess = vec![vec![0.0; restart]; restart + 1];
    let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
    let mut g = vec![0.0; restart + 1];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];

    while iterations < max_iter {
        let cycle_start = rel;
        let beta = norm(&r);
        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            if iterations >= max_iter {
                break;
            }
            for i in 0..n {
                z[i] = inv_diag[i] * basis[k][i];
            }
            op.apply_into(&z, &mut w)?;
            // Modified Gram–Schmidt.
            for (j, v) in basis.iter().enumerate() {
                let hjk = dot(&w, v);
                hess[j][k] = hjk;
                for i in 0..n {
                    w[i] -= hjk * v[i];
                }
            }
            let hnext = norm(&w);
            hess[k + 1][k] = hnext;
            for j in 0..k {
                let t = cs[j] * hess[j][k] + sn[j] * hess[j + 1][k];
                hess[j + 1][k] = -sn[j] * hess[j][k] + cs[j] * hess[j + 1][k];
                hess[j][k] = t;
            }
            let denom = hess[k][k].hypot(hess[k + 1][k]);
            if denom == 0.0 {
                break;
            }
            cs[k] = hess[k][k] / denom;
            sn[k] = hess[k + 1][k] / denom;
            hess[k][k] = denom;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k_used = k + 1;
            let estimate = g[k + 1].abs() / norm_f;
            if estimate <= tol || hnext == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }
        if k_used == 0 {
            break;
        }
        // Back substitution for the small triangular system, then x += M⁻¹ V y.
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = (i + 1..k_used).map(|j| hess[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / hess[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for i in 0..n {
                x[i] += inv_diag[i] * yj * basis[j][i];
            }
        }
        let ax = op.apply(&x)?;
        for i in 0..n {
            r[i] = f[i] - ax[i];
        }
        rel = norm(&r) / norm_f;
        if !rel.is_finite() {
            return Err(Error::NumericalFailure("GMRES residual is not finite".into()));
        }
        if rel <= tol {
            break;
        }
        if k_used == restart && rel >= cycle_start {
            return Err(Error::Stagnation { iterations, residual: rel });
        }
    }
    let report = SolveReport {
        iterations,
        relative_residual: rel,
        converged: rel <= tol,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{assemble_operator, assemble_rhs, Definiteness, GridField, NeumannData};
    use crate::linsolve::{relative_residual, solve_cg};
    use crate::problem::ProblemSpec;

    #[test]
    fn scaled_identity_in_one_iteration() {
        let op = SparseOperator::scaled_identity(6, 2.0, Definiteness::Indefinite);
        let f = [1.0, 2.0, -4.0, 0.5, 0.0, 8.0];
        let (u, rep) = solve_gmres(&op, &f, 1e-12, 50, 100).unwrap();
        assert_eq!(rep.iterations, 1);
        for (ui, fi) in u.iter().zip(&f) {
            assert!((ui - fi / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn agrees_with_cg_on_spd_system() {
        let m = 9;
        let spec = ProblemSpec::poisson(1.0);
        let eta = GridField::from_fn(m, |x, y| 100.0 * x * y).unwrap();
        let a = GridField::constant(m, 1.0).unwrap();
        let f = GridField::from_fn(m, |x, _| 1.0 + x).unwrap();
        let op = assemble_operator(&spec, &eta, &a).unwrap();
        let b = assemble_rhs(&spec, &f, &a, None).unwrap();
        let tol = 1e-10;
        let (ug, rg) = solve_gmres(&op, &b, tol, 50, 2000).unwrap();
        let (uc, rc) = solve_cg(&op, &b, tol, 2000).unwrap();
        assert!(rg.converged && rc.converged);
        let diff: f64 = ug.iter().zip(&uc).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff / norm(&uc) <= 10.0 * tol);
    }

    #[test]
    fn helmholtz_desk_scale_converges() {
        let m = 33;
        let spec = ProblemSpec::helmholtz(100.0, 0.5);
        let eta = GridField::from_fn(m, |x, y| 0.5 * (10.0 * x).sin().powi(2) * (7.0 * y).cos().powi(2)).unwrap();
        let a = GridField::constant(m, 1.0).unwrap();
        let f = GridField::from_fn(m, |x, y| (-((x - 0.5).powi(2) + (y - 0.8).powi(2)) / 0.04).exp()).unwrap();
        let op = assemble_operator(&spec, &eta, &a).unwrap();
        let b = assemble_rhs(&spec, &f, &a, Some(&NeumannData::zeros(m))).unwrap();
        let (u, rep) = solve_gmres(&op, &b, 1e-8, 50, 20_000).unwrap();
        assert!(rep.converged, "{rep:?}");
        assert!(relative_residual(&op, &u, &b).unwrap() <= 1e-8);
    }
}
