//! Snapshot POD and the Galerkin reduced-order baseline.
//!
//! The snapshot matrix `X` (`n × s`, one solution per column) is factored as `X = QR`
//! followed by an SVD of the small `R`, so `U = Q·U_R`. The model keeps every left
//! singular vector so error curves can sweep the rank.

use std::fs;
use std::io::{Cursor, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;

use crate::datagen::Dataset;
use crate::grid::SparseOperator;
use crate::linsolve::solve_dense;
use crate::{Error, Result};

pub const BASIS_MAGIC: &[u8; 4] = b"EPB1";
/// Energy fraction used to pick the default rank.
pub const DEFAULT_ENERGY: f64 = 0.9999;

#[derive(Clone, Debug, PartialEq)]
pub struct PodModel {
    /// `n × k` column-orthonormal, `k = min(n, s)` after fitting, `k = r` after loading.
    basis: DMatrix<f64>,
    singular_values: Vec<f64>,
    r: usize,
    /// Identifies the training data the basis was fitted on.
    pub spec_hash: String,
}

fn left_singular_basis(x: DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (n, s) = x.shape();
    let (q, r) = if n >= s {
        let qr = x.qr();
        (qr.q(), qr.r())
    } else {
        (DMatrix::identity(n, n), x)
    };
    let svd = r.svd(true, false);
    let u_r = svd.u.ok_or_else(|| Error::NumericalFailure("SVD did not return U".into()))?;
    // nalgebra does not sort singular values; order them ourselves.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let k = order.len();
    let mut u_sorted = DMatrix::zeros(u_r.nrows(), k);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u_r.column(src));
    }
    let sv = order.iter().map(|&i| svd.singular_values[i].max(0.0)).collect();
    Ok((q * u_sorted, sv))
}

/// Smallest `r` whose leading singular values capture `energy` of `Σσ²`.
pub fn energy_rank(singular_values: &[f64], energy: f64) -> usize {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let mut acc = 0.0;
    for (i, s) in singular_values.iter().enumerate() {
        acc += s * s;
        if acc >= energy * total {
            return i + 1;
        }
    }
    singular_values.len().max(1)
}

/// Thin SVD of the snapshot matrix, truncated to rank `r` (`None` picks the energy rank).
pub fn fit_pod(snapshots: &[Vec<f64>], r: Option<usize>) -> Result<PodModel> {
    let s = snapshots.len();
    if s == 0 {
        return Err(Error::InvalidArgument("POD needs at least one snapshot".into()));
    }
    let n = snapshots[0].len();
    if snapshots.iter().any(|v| v.len() != n) {
        return Err(Error::Shape("snapshots differ in length".into()));
    }
    if let Some(r) = r {
        if r == 0 || r > n.min(s) {
            return Err(Error::InvalidArgument(format!("rank {r} outside 1..={}", n.min(s))));
        }
    }
    let x = DMatrix::from_fn(n, s, |i, j| snapshots[j][i]);
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument("snapshot matrix is identically zero".into()));
    }
    let (basis, singular_values) = left_singular_basis(x)?;
    let r = r.unwrap_or_else(|| energy_rank(&singular_values, DEFAULT_ENERGY));
    Ok(PodModel { basis, singular_values, r, spec_hash: String::new() })
}

/// Fits on the solution snapshots of a forward dataset.
pub fn fit_pod_dataset(ds: &Dataset, r: Option<usize>) -> Result<PodModel> {
    let snaps = dataset_unknowns(ds)?;
    let mut model = fit_pod(&snaps, r)?;
    model.spec_hash = format!("{}:m{}:s{}:seed{}", ds.spec.family, ds.m, ds.len(), ds.meta.seed);
    Ok(model)
}

/// The solution of every sample in solver unknown ordering.
pub fn dataset_unknowns(ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    let layout = crate::grid::UnknownLayout::new(ds.m, ds.spec.boundary);
    ds.samples.iter().map(|s| layout.to_unknowns(&s.u)).collect()
}

impl PodModel {
    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Number of basis columns available for rank sweeps.
    pub fn max_rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn with_rank(mut self, r: usize) -> Result<Self> {
        self.check_rank(r)?;
        self.r = r;
        Ok(self)
    }

    fn check_rank(&self, r: usize) -> Result<()> {
        if r == 0 || r > self.max_rank() {
            return Err(Error::InvalidArgument(format!("rank {r} outside 1..={}", self.max_rank())));
        }
        Ok(())
    }

    /// `max |U_rᵀU_r − I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let u = self.basis.columns(0, self.r);
        let g = u.transpose() * u;
        let mut worst = 0.0f64;
        for i in 0..self.r {
            for j in 0..self.r {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// `√(Σ_{i>r} σ_i²) / √(Σ σ_i²)`.
    pub fn tail_energy(&self, r: usize) -> f64 {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        let tail: f64 = self.singular_values.iter().skip(r).map(|s| s * s).sum();
        (tail / total).sqrt()
    }

    /// `U_rᵀ A U_r`, with `A U_r` formed column by column from sparse matvecs.
    fn reduced_operator(&self, a: &SparseOperator, r: usize) -> Result<DMatrix<f64>> {
        let n = self.n();
        if a.n() != n {
            return Err(Error::Shape(format!("operator size {} != basis rows {n}", a.n())));
        }
        let mut au = DMatrix::zeros(n, r);
        for j in 0..r {
            let col: Vec<f64> = self.basis.column(j).iter().copied().collect();
            let y = a.apply(&col)?;
            au.set_column(j, &nalgebra::DVector::from_vec(y));
        }
        Ok(self.basis.columns(0, r).transpose() * au)
    }

    fn solve_reduced(&self, ar: &DMatrix<f64>, fr: &[f64], r: usize) -> Result<Vec<f64>> {
        let sub = ar.view((0, 0), (r, r));
        let dense: Vec<f64> = (0..r).flat_map(|i| (0..r).map(move |j| (i, j))).map(|(i, j)| sub[(i, j)]).collect();
        let z = solve_dense(&dense, r, &fr[..r])?;
        let u = self.basis.columns(0, r) * nalgebra::DVector::from_vec(z);
        Ok(u.iter().copied().collect())
    }

    fn project_rhs(&self, f: &[f64], r: usize) -> Result<Vec<f64>> {
        if f.len() != self.n() {
            return Err(Error::Shape(format!("rhs length {} != basis rows {}", f.len(), self.n())));
        }
        let fv = nalgebra::DVector::from_column_slice(f);
        Ok((self.basis.columns(0, r).transpose() * fv).iter().copied().collect())
    }

    /// Galerkin solve `U_rᵀ A U_r û = U_rᵀ f`, returning `U_r û`.
    pub fn solve(&self, a: &SparseOperator, f: &[f64]) -> Result<Vec<f64>> {
        let fr = self.project_rhs(f, self.r)?;
        let ar = self.reduced_operator(a, self.r)?;
        self.solve_reduced(&ar, &fr, self.r)
    }

    /// `U_r U_rᵀ v`.
    pub fn project(&self, v: &[f64], r: usize) -> Result<Vec<f64>> {
        self.check_rank(r)?;
        let c = self.project_rhs(v, r)?;
        let p = self.basis.columns(0, r) * nalgebra::DVector::from_vec(c);
        Ok(p.iter().copied().collect())
    }
}

/// Free-function form of [`PodModel::solve`].
pub fn pod_solve(model: &PodModel, a: &SparseOperator, f: &[f64]) -> Result<Vec<f64>> {
    model.solve(a, f)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// One rung of an error-vs-rank curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub r: usize,
    /// Mean relative L2 error of the Galerkin solution.
    pub galerkin: f64,
    /// Mean relative L2 error of the orthogonal projection of the truth.
    pub projection: f64,
}

/// `1, 2, 4, …` up to `max`, always ending at `max`.
pub fn rank_ladder(max: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut r = 1;
    while r < max {
        out.push(r);
        r *= 2;
    }
    out.push(max);
    out
}

/// Galerkin and projection errors over `ranks` for every sample of `ds`.
///
/// The reduced operator is formed once per sample at the largest rank; smaller ranks use
/// its leading block, which is exactly `U_rᵀ A U_r`.
pub fn pod_error_curve(model: &PodModel, ds: &Dataset, ranks: &[usize]) -> Result<Vec<CurvePoint>> {
    let r_max = *ranks.iter().max().ok_or_else(|| Error::InvalidArgument("empty rank ladder".into()))?;
    for &r in ranks {
        model.check_rank(r)?;
    }
    let mut gal = vec![0.0; ranks.len()];
    let mut proj = vec![0.0; ranks.len()];
    for i in 0..ds.len() {
        let sys = ds.system(i)?;
        let truth = sys.layout.to_unknowns(&ds.samples[i].u)?;
        let ar = model.reduced_operator(&sys.operator, r_max)?;
        let fr = model.project_rhs(&sys.rhs, r_max)?;
        for (k, &r) in ranks.iter().enumerate() {
            gal[k] += rel_err(&model.solve_reduced(&ar, &fr, r)?, &truth);
            proj[k] += rel_err(&model.project(&truth, r)?, &truth);
        }
    }
    let s = ds.len() as f64;
    Ok(ranks
        .iter()
        .enumerate()
        .map(|(k, &r)| CurvePoint { r, galerkin: gal[k] / s, projection: proj[k] / s })
        .collect())
}

/// Writes `EPB1`: magic, `n: u32`, `r: u32`, the `r` basis columns, then every singular value.
/// The singular-value count follows from the file length.
pub fn save_pod(path: &Path, model: &PodModel) -> Result<()> {
    let mut buf = Vec::new();
    buf.write_all(BASIS_MAGIC)?;
    buf.write_u32::<LittleEndian>(model.n() as u32)?;
    buf.write_u32::<LittleEndian>(model.r as u32)?;
    for j in 0..model.r {
        for &v in model.basis.column(j).iter() {
            buf.write_f64::<LittleEndian>(v)?;
        }
    }
    for &s in &model.singular_values {
        buf.write_f64::<LittleEndian>(s)?;
    }
    fs::write(path, buf)?;
    fs::write(crate::datagen::sidecar_path(path), format!("spec_hash = {}\n", model.spec_hash))?;
    Ok(())
}

pub fn load_pod(path: &Path) -> Result<PodModel> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[..4] != BASIS_MAGIC {
        return Err(Error::Format(format!("{} is not an EPB1 basis", path.display())));
    }
    let mut cur = Cursor::new(&bytes[4..]);
    let n = cur.read_u32::<LittleEndian>()? as usize;
    let r = cur.read_u32::<LittleEndian>()? as usize;
    let basis_bytes = n.checked_mul(r).and_then(|v| v.checked_mul(8)).ok_or_else(|| Error::Format("bad header".into()))?;
    let rest = bytes.len() - 12;
    if r == 0 || basis_bytes > rest || (rest - basis_bytes) % 8 != 0 || (rest - basis_bytes) / 8 < r {
        return Err(Error::Format("EPB1 body length does not match its header".into()));
    }
    let mut cols = vec![0.0; n * r];
    cur.read_f64_into::<LittleEndian>(&mut cols)?;
    let mut sv = vec![0.0; (rest - basis_bytes) / 8];
    cur.read_f64_into::<LittleEndian>(&mut sv)?;
    let spec_hash = fs::read_to_string(crate::datagen::sidecar_path(path))
        .ok()
        .and_then(|t| crate::kv::KeyValues::parse(&t).ok())
        .and_then(|kv| kv.get_str("spec_hash").map(str::to_string))
        .unwrap_or_default();
    Ok(PodModel { basis: DMatrix::from_vec(n, r, cols), singular_values: sv, r, spec_hash })
}
