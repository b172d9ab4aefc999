//! Node-centred fields on the unit square and the five-point discretisation.
//!
//! Node `(i, j)` sits at `(x, y) = (j·h, i·h)` with `h = 1/(m−1)`; values are stored
//! row-major, so `j` (the x index) varies fastest.

mod operator;
pub mod stencil;

pub use operator::{
    assemble_operator, assemble_rhs, discretize, Definiteness, DiscreteSystem, SparseOperator,
};

use crate::problem::BoundaryKind;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    m: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(m: usize, values: Vec<f64>) -> Result<Self> {
        if m < 3 {
            return Err(Error::GridTooSmall(m));
        }
        if values.len() != m * m {
            return Err(Error::Shape(format!(
                "grid of side {m} needs {} values, got {}",
                m * m,
                values.len()
            )));
        }
        Ok(GridField { m, values })
    }

    pub fn zeros(m: usize) -> Result<Self> {
        Self::constant(m, 0.0)
    }

    pub fn constant(m: usize, value: f64) -> Result<Self> {
        Self::new(m, vec![value; m * m])
    }

    /// Samples `func(x, y)` at every node.
    pub fn from_fn(m: usize, mut func: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        if m < 3 {
            return Err(Error::GridTooSmall(m));
        }
        let h = 1.0 / (m - 1) as f64;
        let mut values = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                values.push(func(j as f64 * h, i as f64 * h));
            }
        }
        Ok(GridField { m, values })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.m - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.h();
        (j as f64 * h, i as f64 * h)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, func: impl Fn(f64) -> f64) -> GridField {
        GridField { m: self.m, values: self.values.iter().map(|&v| func(v)).collect() }
    }

    pub fn same_shape(&self, other: &GridField) -> Result<()> {
        if self.m != other.m {
            return Err(Error::Shape(format!("grid sides differ: {} vs {}", self.m, other.m)));
        }
        Ok(())
    }
}

/// Outward normal derivative `∂u/∂n` on each edge, indexed along the edge.
///
/// `left`/`right` (x = 0, x = 1) are indexed by the row `i`; `bottom`/`top` (y = 0, y = 1)
/// by the column `j`. Corner nodes read both adjacent edges.
#[derive(Clone, Debug, PartialEq)]
pub struct NeumannData {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub bottom: Vec<f64>,
    pub top: Vec<f64>,
}

impl NeumannData {
    pub fn zeros(m: usize) -> Self {
        NeumannData { left: vec![0.0; m], right: vec![0.0; m], bottom: vec![0.0; m], top: vec![0.0; m] }
    }

    /// Builds the normal derivatives of a field with known gradient `(∂x u, ∂y u)`.
    pub fn from_gradient(m: usize, grad: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let h = 1.0 / (m - 1) as f64;
        let t = |k: usize| k as f64 * h;
        NeumannData {
            left: (0..m).map(|i| -grad(0.0, t(i)).0).collect(),
            right: (0..m).map(|i| grad(1.0, t(i)).0).collect(),
            bottom: (0..m).map(|j| -grad(t(j), 0.0).1).collect(),
            top: (0..m).map(|j| grad(t(j), 1.0).1).collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.left.len()
    }

    pub fn is_zero(&self) -> bool {
        [&self.left, &self.right, &self.bottom, &self.top].iter().all(|e| e.iter().all(|&v| v == 0.0))
    }
}

/// Maps between grid fields and solver unknown vectors.
///
/// Neumann problems keep every node (`n = m²`); Dirichlet problems keep the
/// `(m−2)²` interior nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnknownLayout {
    pub m: usize,
    pub boundary: BoundaryKind,
}

impl UnknownLayout {
    pub fn new(m: usize, boundary: BoundaryKind) -> Self {
        UnknownLayout { m, boundary }
    }

    pub fn n(&self) -> usize {
        match self.boundary {
            BoundaryKind::Neumann => self.m * self.m,
            BoundaryKind::DirichletZero => (self.m - 2) * (self.m - 2),
        }
    }

    pub fn to_unknowns(&self, field: &GridField) -> Result<Vec<f64>> {
        if field.m() != self.m {
            return Err(Error::Shape(format!("field side {} != layout side {}", field.m(), self.m)));
        }
        Ok(match self.boundary {
            BoundaryKind::Neumann => field.values().to_vec(),
            BoundaryKind::DirichletZero => {
                let m = self.m;
                let mut out = Vec::with_capacity(self.n());
                for i in 1..m - 1 {
                    out.extend_from_slice(&field.values()[i * m + 1..i * m + m - 1]);
                }
                out
            }
        })
    }

    pub fn to_field(&self, unknowns: &[f64]) -> Result<GridField> {
        if unknowns.len() != self.n() {
            return Err(Error::Shape(format!(
                "expected {} unknowns, got {}",
                self.n(),
                unknowns.len()
            )));
        }
        match self.boundary {
            BoundaryKind::Neumann => GridField::new(self.m, unknowns.to_vec()),
            BoundaryKind::DirichletZero => {
                let m = self.m;
                let mut values = vec![0.0; m * m];
                for (r, row) in unknowns.chunks(m - 2).enumerate() {
                    let i = r + 1;
                    values[i * m + 1..i * m + m - 1].copy_from_slice(row);
                }
                GridField::new(m, values)
            }
        }
    }
}

/// Second-order derivatives `(∂x u, ∂y u)`: central in the interior, one-sided at edges.
///
/// This is the same stencil the training loss applies to network outputs.
pub fn fd_gradient(u: &GridField) -> (GridField, GridField) {
    let m = u.m();
    let h = u.h();
    let mut dx = vec![0.0; m * m];
    let mut dy = vec![0.0; m * m];
    stencil::derivative_2d(u.values(), m, m, h, stencil::Axis::X, &mut dx);
    stencil::derivative_2d(u.values(), m, m, h, stencil::Axis::Y, &mut dy);
    (GridField { m, values: dx }, GridField { m, values: dy })
}
