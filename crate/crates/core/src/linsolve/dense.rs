use crate::{Error, Result};

/// Largest dense system accepted by [`solve_dense`].
pub const DEFAULT_DENSE_CAP: usize = 4096;

/// Relative pivot threshold: pivots below `PIVOT_RTOL · max|A|` count as singular.
const PIVOT_RTOL: f64 = 1e-12;

/// LU factors with row pivoting, `P A = L U`, stored packed row-major.
#[derive(Clone, Debug)]
pub struct LuFactors {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl LuFactors {
    pub fn factor(a: &[f64], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::Shape(format!("dense matrix of order {n} needs {} entries, got {}", n * n, a.len())));
        }
        let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if !scale.is_finite() {
            return Err(Error::NumericalFailure("dense matrix has non-finite entries".into()));
        }
        let threshold = PIVOT_RTOL * scale;
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (piv_row, piv_abs) = (k..n)
                .map(|r| (r, lu[r * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if piv_abs <= threshold || scale == 0.0 {
                return Err(Error::Singular { column: k, pivot: piv_abs });
            }
            if piv_row != k {
                for c in 0..n {
                    lu.swap(k * n + c, piv_row * n + c);
                }
                perm.swap(k, piv_row);
            }
            let pivot = lu[k * n + k];
            let (upper, lower) = lu.split_at_mut((k + 1) * n);
            let pivot_row = &upper[k * n..(k + 1) * n];
            for row in lower.chunks_exact_mut(n) {
                let factor = row[k] / pivot;
                row[k] = factor;
                if factor != 0.0 {
                    for c in k + 1..n {
                        row[c] -= factor * pivot_row[c];
                    }
                }
            }
        }
        Ok(LuFactors { n, lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::Shape(format!("rhs length {} != order {n}", b.len())));
        }
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(l, xv)| l * xv).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n..(i + 1) * n];
            let s: f64 = row[i + 1..].iter().zip(&x[i + 1..]).map(|(u, xv)| u * xv).sum();
            x[i] = (x[i] - s) / row[i];
        }
        Ok(x)
    }
}

/// Solves the row-major dense system `A u = f` by LU with partial pivoting.
pub fn solve_dense(a: &[f64], n: usize, f: &[f64]) -> Result<Vec<f64>> {
    solve_dense_with_cap(a, n, f, DEFAULT_DENSE_CAP)
}

pub fn solve_dense_with_cap(a: &[f64], n: usize, f: &[f64], cap: usize) -> Result<Vec<f64>> {
    if n > cap {
        return Err(Error::InvalidArgument(format!("dense order {n} exceeds cap {cap}")));
    }
    LuFactors::factor(a, n)?.solve(f)
}
