//! Random coefficient samplers, fixed sources and solved datasets.

mod grf;
mod io;
mod rings;
mod scaling;

pub use grf::{sample_darcy_field, GrfParams};
pub use io::{read_dataset, sidecar_path, write_dataset, DATASET_MAGIC};
pub use rings::{sample_ring_field, RingFieldParams, NUM_RINGS, RING_FREQUENCIES, RING_RADII, RING_SIGMA};
pub use scaling::{diagonal_scale_dataset, operator_diagonal, scale_node, unscale_dataset, unscale_node};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::grid::{discretize, DiscreteSystem, GridField, NeumannData};
use crate::linsolve::{relative_residual, solve_system};
use crate::problem::{manufactured_grad, manufactured_laplacian, manufactured_u, Family, ProblemSpec, SourceSpec};
use crate::{Error, Result};

/// Evaluates a source on an `m × m` grid together with its Neumann data.
///
/// The manufactured kind needs `η`: it returns `f = (1+η)u − Δu` and `g = ∂u/∂n`.
pub fn make_source(spec: &SourceSpec, m: usize, eta: Option<&GridField>) -> Result<(GridField, NeumannData)> {
    match spec {
        SourceSpec::ManufacturedPoisson => {
            let eta = eta.ok_or_else(|| Error::InvalidArgument("manufactured source needs eta".into()))?;
            if eta.m() != m {
                return Err(Error::Shape(format!("eta side {} != {m}", eta.m())));
            }
            let mut f = GridField::from_fn(m, |x, y| manufactured_u(x, y) - manufactured_laplacian(x, y))?;
            let u = GridField::from_fn(m, manufactured_u)?;
            for ((fv, e), uv) in f.values_mut().iter_mut().zip(eta.values()).zip(u.values()) {
                *fv += e * uv;
            }
            Ok((f, NeumannData::from_gradient(m, manufactured_grad)))
        }
        SourceSpec::GaussianSumHelmholtz { centers, sigmas } => {
            let f = GridField::from_fn(m, |x, y| {
                centers
                    .iter()
                    .zip(sigmas)
                    .map(|(&(cx, cy), s)| (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp())
                    .sum()
            })?;
            Ok((f, NeumannData::zeros(m)))
        }
        SourceSpec::ConstantOne => Ok((GridField::constant(m, 1.0)?, NeumannData::zeros(m))),
    }
}

/// Which way a dataset is read: `(η, f) → u` or `(u, f) → η`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Forward,
    Inverse,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Forward => "forward",
            Task::Inverse => "inverse",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Task::Forward),
            "inverse" => Ok(Task::Inverse),
            other => Err(Error::Format(format!("unknown task '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub seed: u64,
    /// Stream index of the first sample; lets train and test sets share a master seed.
    pub index_offset: u64,
    pub tol: f64,
    pub task: Task,
    /// Set after [`diagonal_scale_dataset`].
    pub scaled: bool,
    pub split: String,
}

/// One `(coefficient, f, u)` triple. The coefficient is `η` for Poisson/Helmholtz and `a` for Darcy.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub coef: GridField,
    pub f: GridField,
    pub u: GridField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: ProblemSpec,
    pub m: usize,
    pub samples: Vec<Sample>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Neumann data of the fixed source (`None` for Dirichlet problems).
    pub fn neumann(&self) -> Result<Option<NeumannData>> {
        match self.spec.family {
            Family::Darcy => Ok(None),
            _ => {
                let zero = GridField::zeros(self.m)?;
                Ok(Some(make_source(&self.spec.source, self.m, Some(&zero))?.1))
            }
        }
    }

    /// `(η, a)` for sample `i`.
    pub fn eta_and_a(&self, i: usize) -> Result<(GridField, GridField)> {
        let coef = self.samples[i].coef.clone();
        Ok(match self.spec.family {
            Family::Darcy => (GridField::zeros(self.m)?, coef),
            _ => (coef, GridField::constant(self.m, 1.0)?),
        })
    }

    /// The discrete system of sample `i`. Only defined for unscaled data.
    pub fn system(&self, i: usize) -> Result<DiscreteSystem> {
        if self.meta.scaled {
            return Err(Error::InvalidArgument("scaled datasets do not carry the original system".into()));
        }
        let (eta, a) = self.eta_and_a(i)?;
        discretize(&self.spec, &eta, &a, &self.samples[i].f, self.neumann()?.as_ref())
    }

    /// `‖A u − f‖ / ‖f‖` of sample `i`.
    pub fn residual(&self, i: usize) -> Result<f64> {
        let sys = self.system(i)?;
        let u = sys.layout.to_unknowns(&self.samples[i].u)?;
        relative_residual(&sys.operator, &u, &sys.rhs)
    }

    /// New dataset with the given samples, metadata copied.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            spec: self.spec.clone(),
            m: self.m,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            meta: self.meta.clone(),
        }
    }
}

/// Swaps the roles of `u` and the coefficient. Applying it twice restores the input.
pub fn invert_dataset(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    out.meta.task = match ds.meta.task {
        Task::Forward => Task::Inverse,
        Task::Inverse => Task::Forward,
    };
    out
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub workers: usize,
    pub index_offset: u64,
    pub split: String,
    pub max_iter: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { workers: 1, index_offset: 0, split: "train".into(), max_iter: 200_000 }
    }
}

/// Coefficient field of sample stream `index`.
pub fn sample_coefficient(spec: &ProblemSpec, m: usize, seed: u64, index: u64) -> Result<GridField> {
    match spec.family {
        Family::Darcy => sample_darcy_field(&GrfParams::default(), m, seed, index),
        _ => sample_ring_field(spec.contrast, m, seed, index),
    }
}

pub fn build_dataset(spec: &ProblemSpec, s: usize, m: usize, seed: u64, tol: f64) -> Result<Dataset> {
    build_dataset_with(spec, s, m, seed, tol, &BuildOptions::default())
}

/// Draws `s` coefficients, solves each system to `tol`, and checks every residual.
///
/// The source is the same for every sample; the manufactured Poisson source is built
/// with `η ≡ 0` so that only the operator depends on the draw.
pub fn build_dataset_with(
    spec: &ProblemSpec,
    s: usize,
    m: usize,
    seed: u64,
    tol: f64,
    opts: &BuildOptions,
) -> Result<Dataset> {
    spec.validate()?;
    if s == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let (f, g) = make_source(&spec.source, m, Some(&GridField::zeros(m)?))?;
    let g = (spec.family != Family::Darcy).then_some(g);
    let solve_one = |k: usize| -> Result<Sample> {
        let index = opts.index_offset + k as u64;
        let coef = sample_coefficient(spec, m, seed, index)?;
        let (eta, a) = match spec.family {
            Family::Darcy => (GridField::zeros(m)?, coef.clone()),
            _ => (coef.clone(), GridField::constant(m, 1.0)?),
        };
        let wrap = |e: Error| Error::SampleSolve { index: k, source: Box::new(e) };
        let sys = discretize(spec, &eta, &a, &f, g.as_ref()).map_err(wrap)?;
        let (u, rep) = solve_system(&sys, tol, opts.max_iter).map_err(wrap)?;
        if !rep.converged {
            return Err(wrap(Error::NotConverged { iterations: rep.iterations, residual: rep.relative_residual }));
        }
        let u = sys.layout.to_field(&u)?;
        Ok(Sample { coef, f: f.clone(), u })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let samples = pool.install(|| (0..s).into_par_iter().map(solve_one).collect::<Result<Vec<_>>>())?;
    Ok(Dataset {
        spec: spec.clone(),
        m,
        samples,
        meta: DatasetMeta {
            seed,
            index_offset: opts.index_offset,
            tol,
            task: Task::Forward,
            scaled: false,
            split: opts.split.clone(),
        },
    })
}
