use super::{GridField, NeumannData, UnknownLayout};
use crate::problem::{BoundaryKind, Family, ProblemSpec};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Definiteness {
    Spd,
    Indefinite,
}

/// A compressed-sparse-row matrix with at most five entries per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    symmetric: bool,
    definiteness: Definiteness,
}

impl SparseOperator {
    /// Builds an operator from per-row `(column, value)` lists.
    pub fn from_rows(
        rows: Vec<Vec<(usize, f64)>>,
        symmetric: bool,
        definiteness: Definiteness,
    ) -> Result<Self> {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                if c >= n {
                    return Err(Error::Shape(format!("column {c} out of range for n = {n}")));
                }
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Ok(SparseOperator { n, row_ptr, cols, vals, symmetric, definiteness })
    }

    /// `scale · I`.
    pub fn scaled_identity(n: usize, scale: f64, definiteness: Definiteness) -> Self {
        SparseOperator {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![scale; n],
            symmetric: true,
            definiteness,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn definiteness(&self) -> Definiteness {
        self.definiteness
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn max_row_nnz(&self) -> usize {
        self.row_ptr.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).find(|&(c, _)| c == i).map_or(0.0, |(_, v)| v))
            .collect()
    }

    /// `y = A u`.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.n];
        self.apply_into(u, &mut y)?;
        Ok(y)
    }

    pub fn apply_into(&self, u: &[f64], y: &mut [f64]) -> Result<()> {
        if u.len() != self.n || y.len() != self.n {
            return Err(Error::Shape(format!(
                "operator of size {} applied to vector of length {} (output {})",
                self.n,
                u.len(),
                y.len()
            )));
        }
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * u[self.cols[k]];
            }
            *yi = acc;
        }
        Ok(())
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for (c, v) in self.row(i) {
                d[i * self.n + c] += v;
            }
        }
        d
    }

    /// `max |A_ij − A_ji|` over the stored pattern.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (c, v) in self.row(i) {
                let t = self.row(c).find(|&(cc, _)| cc == i).map_or(0.0, |(_, tv)| tv);
                worst = worst.max((v - t).abs());
            }
        }
        worst
    }
}

/// The assembled linear system for one coefficient sample.
#[derive(Clone, Debug)]
pub struct DiscreteSystem {
    pub operator: SparseOperator,
    pub rhs: Vec<f64>,
    pub layout: UnknownLayout,
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

fn check_inputs(spec: &ProblemSpec, eta: &GridField, a: &GridField) -> Result<()> {
    eta.same_shape(a)?;
    if eta.m() < 3 {
        return Err(Error::GridTooSmall(eta.m()));
    }
    let must_be_positive = spec.family == Family::Darcy;
    for (index, &value) in a.values().iter().enumerate() {
        if !value.is_finite() || (must_be_positive && value <= 0.0) {
            return Err(Error::NonPositiveCoefficient { index, value });
        }
    }
    Ok(())
}

/// Five-point second-order discretisation of `mass·(1+η)u − ∇·(a∇u)`.
///
/// Face coefficients are harmonic means of the nodal `a`. Neumann rows eliminate a
/// mirrored ghost node and are scaled by the dual-cell weight (½ on edges, ¼ at corners),
/// which keeps the matrix exactly symmetric; Dirichlet problems keep interior unknowns only.
pub fn assemble_operator(spec: &ProblemSpec, eta: &GridField, a: &GridField) -> Result<SparseOperator> {
    check_inputs(spec, eta, a)?;
    let m = eta.m();
    let h2 = eta.h() * eta.h();
    let mass = spec.mass_coefficient();
    let definiteness = match spec.family {
        Family::Helmholtz => Definiteness::Indefinite,
        Family::Poisson | Family::Darcy => Definiteness::Spd,
    };
    let av = a.values();
    let node = |i: usize, j: usize| i * m + j;
    let face = |p: usize, q: usize| harmonic(av[p], av[q]);

    let rows = match spec.boundary {
        BoundaryKind::Neumann => {
            let mut rows = Vec::with_capacity(m * m);
            let edge_weight = |k: usize| if k == 0 || k == m - 1 { 0.5 } else { 1.0 };
            for i in 0..m {
                let wy = edge_weight(i);
                for j in 0..m {
                    let wx = edge_weight(j);
                    let p = node(i, j);
                    let mut diag = wx * wy * mass * (1.0 + eta.values()[p]);
                    let mut row = Vec::with_capacity(5);
                    // x faces, weighted by wy; an edge node mirrors its single inner face.
                    for (cond, q) in [(j > 0, j.wrapping_sub(1)), (j + 1 < m, j + 1)] {
                        if cond {
                            let c = wy * face(p, node(i, q)) / h2;
                            diag += c;
                            row.push((node(i, q), -c));
                        }
                    }
                    for (cond, q) in [(i > 0, i.wrapping_sub(1)), (i + 1 < m, i + 1)] {
                        if cond {
                            let c = wx * face(p, node(q, j)) / h2;
                            diag += c;
                            row.push((node(q, j), -c));
                        }
                    }
                    row.push((p, diag));
                    rows.push(row);
                }
            }
            rows
        }
        BoundaryKind::DirichletZero => {
            let k = m - 2;
            let unknown = |i: usize, j: usize| (i - 1) * k + (j - 1);
            let mut rows = Vec::with_capacity(k * k);
            for i in 1..m - 1 {
                for j in 1..m - 1 {
                    let p = node(i, j);
                    let mut diag = mass * (1.0 + eta.values()[p]);
                    let mut row = Vec::with_capacity(5);
                    for (qi, qj) in [(i, j - 1), (i, j + 1), (i - 1, j), (i + 1, j)] {
                        let c = face(p, node(qi, qj)) / h2;
                        diag += c;
                        let interior = qi >= 1 && qi <= m - 2 && qj >= 1 && qj <= m - 2;
                        if interior {
                            row.push((unknown(qi, qj), -c));
                        }
                    }
                    row.push((unknown(i, j), diag));
                    rows.push(row);
                }
            }
            rows
        }
    };
    SparseOperator::from_rows(rows, true, definiteness)
}

/// Right-hand side matching [`assemble_operator`]: weighted `f` plus ghost-node flux terms.
pub fn assemble_rhs(
    spec: &ProblemSpec,
    f: &GridField,
    a: &GridField,
    g: Option<&NeumannData>,
) -> Result<Vec<f64>> {
    f.same_shape(a)?;
    let m = f.m();
    let h = f.h();
    let fv = f.values();
    let av = a.values();
    match spec.boundary {
        BoundaryKind::Neumann => {
            let node = |i: usize, j: usize| i * m + j;
            let face = |p: usize, q: usize| harmonic(av[p], av[q]);
            let edge_weight = |k: usize| if k == 0 || k == m - 1 { 0.5 } else { 1.0 };
            let mut b = Vec::with_capacity(m * m);
            for i in 0..m {
                for j in 0..m {
                    let (wx, wy) = (edge_weight(j), edge_weight(i));
                    b.push(wx * wy * fv[node(i, j)]);
                }
            }
            if let Some(g) = g {
                if g.m() != m {
                    return Err(Error::Shape(format!("Neumann data side {} != {m}", g.m())));
                }
                for i in 0..m {
                    let wy = edge_weight(i);
                    b[node(i, 0)] += wy * face(node(i, 0), node(i, 1)) * g.left[i] / h;
                    b[node(i, m - 1)] += wy * face(node(i, m - 1), node(i, m - 2)) * g.right[i] / h;
                }
                for j in 0..m {
                    let wx = edge_weight(j);
                    b[node(0, j)] += wx * face(node(0, j), node(1, j)) * g.bottom[j] / h;
                    b[node(m - 1, j)] += wx * face(node(m - 1, j), node(m - 2, j)) * g.top[j] / h;
                }
            }
            Ok(b)
        }
        BoundaryKind::DirichletZero => UnknownLayout::new(m, BoundaryKind::DirichletZero).to_unknowns(f),
    }
}

/// Assembles operator and right-hand side together.
pub fn discretize(
    spec: &ProblemSpec,
    eta: &GridField,
    a: &GridField,
    f: &GridField,
    g: Option<&NeumannData>,
) -> Result<DiscreteSystem> {
    eta.same_shape(f)?;
    let operator = assemble_operator(spec, eta, a)?;
    let rhs = assemble_rhs(spec, f, a, g)?;
    Ok(DiscreteSystem { operator, rhs, layout: UnknownLayout::new(eta.m(), spec.boundary) })
}
