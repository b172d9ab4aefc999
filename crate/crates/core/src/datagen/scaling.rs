//! Symmetric diagonal scaling `D^{−1/2} A D^{−1/2} (D^{1/2} u) = D^{−1/2} f` of Poisson data.

use super::Dataset;
use crate::grid::GridField;
use crate::problem::Family;
use crate::{Error, Result};

/// Unweighted operator diagonal `(1 + η) + 4/h²` at every node.
pub fn operator_diagonal(eta: &GridField) -> GridField {
    let c = 4.0 / (eta.h() * eta.h());
    eta.map(|e| 1.0 + e + c)
}

/// `(η/d, √d·u, f/√d)` for a single node with diagonal `d`.
pub fn scale_node(d: f64, eta: f64, u: f64, f: f64) -> Result<(f64, f64, f64)> {
    if !(d > 0.0) {
        return Err(Error::NumericalFailure(format!("non-positive diagonal entry {d}")));
    }
    let r = d.sqrt();
    Ok((eta / d, r * u, f / r))
}

/// Inverse of [`scale_node`].
pub fn unscale_node(d: f64, eta_s: f64, u_s: f64, f_s: f64) -> (f64, f64, f64) {
    let r = d.sqrt();
    (eta_s * d, u_s / r, f_s * r)
}

fn check_poisson(ds: &Dataset) -> Result<()> {
    if ds.spec.family != Family::Poisson {
        return Err(Error::InvalidArgument(format!("diagonal scaling applies to Poisson data, got {}", ds.spec.family)));
    }
    Ok(())
}

/// Scales every triple by the operator diagonal of its own `η`.
pub fn diagonal_scale_dataset(ds: &Dataset) -> Result<Dataset> {
    check_poisson(ds)?;
    if ds.meta.scaled {
        return Err(Error::InvalidArgument("dataset is already scaled".into()));
    }
    let mut out = ds.clone();
    for s in &mut out.samples {
        let d = operator_diagonal(&s.coef);
        for (k, &dk) in d.values().iter().enumerate() {
            let (e, u, f) = scale_node(dk, s.coef.values()[k], s.u.values()[k], s.f.values()[k])?;
            s.coef.values_mut()[k] = e;
            s.u.values_mut()[k] = u;
            s.f.values_mut()[k] = f;
        }
    }
    out.meta.scaled = true;
    Ok(out)
}

/// Restores a dataset produced by [`diagonal_scale_dataset`].
///
/// `d` is recovered from `η̃ = η/d` through `η = η̃ (1 + c)/(1 − η̃)`, `c = 4/h²`.
pub fn unscale_dataset(ds: &Dataset) -> Result<Dataset> {
    check_poisson(ds)?;
    if !ds.meta.scaled {
        return Err(Error::InvalidArgument("dataset is not scaled".into()));
    }
    let mut out = ds.clone();
    let h = 1.0 / (ds.m - 1) as f64;
    let c = 4.0 / (h * h);
    for s in &mut out.samples {
        for k in 0..s.coef.len() {
            let es = s.coef.values()[k];
            let d = (1.0 + c) / (1.0 - es);
            let (e, u, f) = unscale_node(d, es, s.u.values()[k], s.f.values()[k]);
            s.coef.values_mut()[k] = e;
            s.u.values_mut()[k] = u;
            s.f.values_mut()[k] = f;
        }
    }
    out.meta.scaled = false;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::build_dataset;
    use crate::problem::ProblemSpec;

    #[test]
    fn hand_arithmetic() {
        let (_, u, f) = scale_node(4.0, 0.0, 2.0, 8.0).unwrap();
        assert_eq!((u, f), (4.0, 4.0));
        assert!(scale_node(0.0, 0.0, 1.0, 1.0).is_err());
    }

    fn rel_close(a: &GridField, b: &GridField, tol: f64) -> bool {
        a.values().iter().zip(b.values()).all(|(x, y)| (x - y).abs() <= tol * y.abs().max(1.0))
    }

    #[test]
    fn round_trip_restores_data() {
        for c in [0.0, 6e5] {
            let ds = build_dataset(&ProblemSpec::poisson(c), 2, 17, 2, 1e-10).unwrap();
            let back = unscale_dataset(&diagonal_scale_dataset(&ds).unwrap()).unwrap();
            // d is recovered from η̃ through 1/(1 − η̃), which costs a few digits at high contrast.
            for (a, b) in back.samples.iter().zip(&ds.samples) {
                assert!(rel_close(&a.coef, &b.coef, 1e-10));
                assert!(rel_close(&a.u, &b.u, 1e-12));
                assert!(rel_close(&a.f, &b.f, 1e-12));
            }
        }
    }

    #[test]
    fn zero_eta_is_a_uniform_rescale() {
        let ds = build_dataset(&ProblemSpec::poisson(0.0), 1, 9, 2, 1e-10).unwrap();
        let sc = diagonal_scale_dataset(&ds).unwrap();
        let ratio = sc.samples[0].u.values()[3] / ds.samples[0].u.values()[3];
        for (a, b) in sc.samples[0].u.values().iter().zip(ds.samples[0].u.values()) {
            assert!((a - ratio * b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn high_contrast_is_reduced() {
        let ds = build_dataset(&ProblemSpec::poisson(6e5), 1, 33, 5, 1e-10).unwrap();
        let sc = diagonal_scale_dataset(&ds).unwrap();
        assert!(sc.samples[0].coef.max_abs() < 1e-3 * ds.samples[0].coef.max_abs());
    }

    #[test]
    fn refuses_other_families() {
        let ds = build_dataset(&ProblemSpec::darcy(), 1, 9, 2, 1e-10).unwrap();
        assert!(diagonal_scale_dataset(&ds).is_err());
    }
}
