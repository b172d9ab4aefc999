use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{MetricReport, QoiSpec, QoiStats};
use crate::grid::GridField;
use crate::Result;

/// One row per sample: `sample,u_rel_err,dx_rel_err,dy_rel_err` (shortest round-trip decimals).
pub fn write_metric_csv(report: &MetricReport, path: &Path) -> Result<()> {
    let mut s = String::from("sample,u_rel_err,dx_rel_err,dy_rel_err\n");
    for i in 0..report.len() {
        writeln!(s, "{i},{},{},{}", report.u_errors[i], report.dx_errors[i], report.dy_errors[i]).expect("string write");
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_histogram_csv(report: &MetricReport, path: &Path) -> Result<()> {
    let h = &report.histogram;
    let mut s = String::from("lower,upper,count\n");
    for (k, c) in h.counts.iter().enumerate() {
        writeln!(s, "{},{},{c}", h.edges[k], h.edges[k + 1]).expect("string write");
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_summary(report: &MetricReport, label: &str, path: &Path) -> Result<()> {
    let mut s = format!("samples = {}\nquantity = {label}\n", report.len());
    for (name, st) in [("u", &report.u), ("dx", &report.dx), ("dy", &report.dy)] {
        writeln!(s, "{name}_mean = {}\n{name}_median = {}\n{name}_max = {}\n{name}_std = {}", st.mean, st.median, st.max, st.std)
            .expect("string write");
    }
    fs::write(path, s)?;
    Ok(())
}

/// Rows of `(source label, functional, per-component statistics)`.
pub fn write_qoi_table(rows: &[(String, QoiSpec, Vec<QoiStats>)], path: &Path) -> Result<()> {
    let mut s = String::from("source,qoi,component,mean,std,p_ext\n");
    for (label, q, stats) in rows {
        for (c, st) in stats.iter().enumerate() {
            writeln!(s, "{label},{},{c},{},{},{}", q.name(), st.mean, st.std, st.p_ext).expect("string write");
        }
    }
    fs::write(path, s)?;
    Ok(())
}

/// Binary greyscale PGM of a field, linearly mapped from its range to `0..=255`. Row 0 of the
/// image is the top edge (largest `y`).
pub fn write_pgm(field: &GridField, path: &Path) -> Result<()> {
    let m = field.m();
    let (lo, hi) = field.values().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = format!("P5\n{m} {m}\n255\n").into_bytes();
    for i in (0..m).rev() {
        for j in 0..m {
            bytes.push((((field.get(i, j) - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}
