//! Error metrics, error distributions and statistics of quantities of interest.

mod report;

pub use report::{write_histogram_csv, write_metric_csv, write_pgm, write_qoi_table, write_summary};

pub use crate::datagen::invert_dataset;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::datagen::{Dataset, Task};
use crate::grid::{fd_gradient, GridField};
use crate::ivnet::IvNet;
use crate::pod::PodModel;
use crate::trainer::{predict_network_units, Prepared};
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

/// Default number of log-spaced histogram bins.
pub const HISTOGRAM_BINS: usize = 30;

/// `‖pred − truth‖₂ / ‖truth‖₂` on plain nodal vectors; `None` when the truth vanishes.
pub fn relative_l2(pred: &[f64], truth: &[f64]) -> Option<f64> {
    let den = truth.iter().map(|t| t * t).sum::<f64>().sqrt();
    if !(den > 0.0) {
        return None;
    }
    let num = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>().sqrt();
    Some(num / den)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    /// Sample standard deviation (`s − 1` denominator; 0 for a single value).
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        if n == 0 {
            return Summary { mean: f64::NAN, median: f64::NAN, max: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        let std = if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Summary { mean, median, max: sorted[n - 1], std }
    }
}

/// Counts over log-spaced bins; `edges` has one more entry than `counts`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Log-spaced bins spanning the positive values; zeros (exact predictions) land in the first bin.
    pub fn log_spaced(values: &[f64], bins: usize) -> Histogram {
        let positive: Vec<f64> = values.iter().copied().filter(|v| *v > 0.0).collect();
        let (lo, hi) = match positive.iter().copied().fold(None, |acc: Option<(f64, f64)>, v| {
            Some(acc.map_or((v, v), |(a, b)| (a.min(v), b.max(v))))
        }) {
            Some((a, b)) if b > a => (a.log10(), b.log10()),
            Some((a, _)) => (a.log10() - 0.5, a.log10() + 0.5),
            None => (-1.0, 0.0),
        };
        let edges: Vec<f64> = (0..=bins).map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / bins as f64)).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let k = if v > 0.0 { (((v.log10() - lo) / (hi - lo)) * bins as f64).floor() as isize } else { 0 };
            counts[k.clamp(0, bins as isize - 1) as usize] += 1;
        }
        Histogram { edges, counts }
    }
}

/// Per-sample relative errors of a field and of both its derivative components.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub u_errors: Vec<f64>,
    pub dx_errors: Vec<f64>,
    pub dy_errors: Vec<f64>,
    pub u: Summary,
    pub dx: Summary,
    pub dy: Summary,
    pub histogram: Histogram,
}

impl MetricReport {
    pub fn len(&self) -> usize {
        self.u_errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_errors.is_empty()
    }

    /// Mean over samples of the average of the two derivative-component errors.
    pub fn mean_gradient_error(&self) -> f64 {
        0.5 * (self.dx.mean + self.dy.mean)
    }
}

/// Relative errors between predictions and truths. A truth whose field or derivative
/// component vanishes is rejected with its index.
pub fn relative_errors(preds: &[GridField], truths: &[GridField]) -> Result<MetricReport> {
    if preds.len() != truths.len() || preds.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} truths", preds.len(), truths.len())));
    }
    let mut u = Vec::with_capacity(preds.len());
    let mut dx = Vec::with_capacity(preds.len());
    let mut dy = Vec::with_capacity(preds.len());
    for (index, (p, t)) in preds.iter().zip(truths).enumerate() {
        p.same_shape(t)?;
        let (pdx, pdy) = fd_gradient(p);
        let (tdx, tdy) = fd_gradient(t);
        let rel = |a: &GridField, b: &GridField| relative_l2(a.values(), b.values()).ok_or(Error::DegenerateSample { index });
        u.push(rel(p, t)?);
        dx.push(rel(&pdx, &tdx)?);
        dy.push(rel(&pdy, &tdy)?);
    }
    Ok(MetricReport {
        u: Summary::of(&u),
        dx: Summary::of(&dx),
        dy: Summary::of(&dy),
        histogram: Histogram::log_spaced(&u, HISTOGRAM_BINS),
        u_errors: u,
        dx_errors: dx,
        dy_errors: dy,
    })
}

/// Scalar or vector-valued functionals of a solution field.
#[derive(Clone, Debug, PartialEq)]
pub enum QoiSpec {
    L2NormOfU,
    L1NormOfU,
    SumAbsDxU,
    /// `Q u` for a `d_q × n` matrix stored row by row.
    LinearFunctional { rows: usize, matrix: Vec<f64> },
}

impl QoiSpec {
    /// A `rows × n` matrix with independent standard-normal entries.
    pub fn gaussian(rows: usize, n: usize, seed: u64) -> QoiSpec {
        let mut rng = stream_rng(seed, Stream::Synthetic, 17);
        QoiSpec::LinearFunctional { rows, matrix: (0..rows * n).map(|_| rng.sample(StandardNormal)).collect() }
    }

    pub fn name(&self) -> String {
        match self {
            QoiSpec::L2NormOfU => "l2_norm".into(),
            QoiSpec::L1NormOfU => "l1_norm".into(),
            QoiSpec::SumAbsDxU => "sum_abs_dx".into(),
            QoiSpec::LinearFunctional { rows, .. } => format!("linear{rows}"),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            QoiSpec::LinearFunctional { rows, .. } => *rows,
            _ => 1,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if let QoiSpec::LinearFunctional { rows, matrix } = self {
            if *rows == 0 || matrix.len() != rows * n {
                return Err(Error::Shape(format!("linear functional needs {rows} × {n} entries, got {}", matrix.len())));
            }
            if matrix.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("linear functional has non-finite entries".into()));
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, u: &GridField) -> Result<Vec<f64>> {
        self.validate(u.len())?;
        Ok(match self {
            QoiSpec::L2NormOfU => vec![u.norm_l2()],
            QoiSpec::L1NormOfU => vec![u.values().iter().map(|v| v.abs()).sum()],
            QoiSpec::SumAbsDxU => vec![fd_gradient(u).0.values().iter().map(|v| v.abs()).sum()],
            QoiSpec::LinearFunctional { matrix, .. } => {
                matrix.chunks(u.len()).map(|row| row.iter().zip(u.values()).map(|(a, b)| a * b).sum()).collect()
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QoiStats {
    pub mean: f64,
    pub std: f64,
    /// Share of samples more than three standard deviations from the mean.
    pub p_ext: f64,
}

/// Mean, sample standard deviation and 3σ exceedance rate of scalar values.
pub fn scalar_stats(values: &[f64]) -> Result<QoiStats> {
    let s = values.len();
    if s < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples for a standard deviation, got {s}")));
    }
    // Welford's recurrence.
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for (k, &x) in values.iter().enumerate() {
        let d = x - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (x - mean);
    }
    let std = (m2 / (s - 1) as f64).sqrt();
    let outside = values.iter().filter(|&&x| (x - mean).abs() > 3.0 * std).count();
    Ok(QoiStats { mean, std, p_ext: outside as f64 / s as f64 })
}

/// Statistics of every component of `q` over the solution samples.
pub fn qoi_stats(samples: &[GridField], q: &QoiSpec) -> Result<Vec<QoiStats>> {
    let values: Vec<Vec<f64>> = samples.iter().map(|u| q.evaluate(u)).collect::<Result<_>>()?;
    (0..q.dim()).map(|c| scalar_stats(&values.iter().map(|v| v[c]).collect::<Vec<_>>())).collect()
}

/// Metrics of a trained network on `ds`.
///
/// Forward networks are scored on `u` in original units. Inverse networks are scored on the
/// coefficient in the log-rescaled representation the network predicts.
pub fn evaluate_network(model: &IvNet, ds: &Dataset, batch_size: usize) -> Result<MetricReport> {
    let data = Prepared::new(model, ds)?;
    let z = predict_network_units(model, &data, batch_size)?;
    let norm = &model.normalization;
    let m = ds.m;
    let mut preds = Vec::with_capacity(ds.len());
    let mut truths = Vec::with_capacity(ds.len());
    for (i, zi) in z.into_iter().enumerate() {
        match model.task {
            Task::Forward => {
                preds.push(GridField::new(m, norm.decode_output(Task::Forward, &zi))?);
                truths.push(ds.samples[i].u.clone());
            }
            Task::Inverse => {
                preds.push(GridField::new(m, zi)?);
                truths.push(GridField::new(m, norm.target(ds, i))?);
            }
        }
    }
    relative_errors(&preds, &truths)
}

/// Galerkin predictions of `u` for every sample of `ds`.
pub fn pod_predictions(model: &PodModel, ds: &Dataset) -> Result<Vec<GridField>> {
    (0..ds.len())
        .map(|i| {
            let sys = ds.system(i)?;
            let u = model.solve(&sys.operator, &sys.rhs)?;
            sys.layout.to_field(&u)
        })
        .collect()
}

#[cfg(test)]
mod tests;
