use std::fmt;
use std::str::FromStr;

use crate::grid::stencil::Axis;
use crate::tape::{Real, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    /// Relative L2 mismatch plus half-weighted relative mismatches of both derivatives.
    H1,
    L2Only,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::H1 => "h1",
            LossMode::L2Only => "l2only",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "h1" => Ok(LossMode::H1),
            "l2only" | "l2" => Ok(LossMode::L2Only),
            _ => Err(Error::InvalidArgument(format!("unknown loss mode '{s}' (expected h1 or l2only)"))),
        }
    }
}

fn relative_term<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var, weight: f64) -> Result<Var> {
    let norms: Vec<f64> = {
        let t = tape.value(target);
        (0..t.batch()).map(|b| t.sample(b).iter().map(|v| v.f64().powi(2)).sum::<f64>().sqrt()).collect()
    };
    if let Some(index) = norms.iter().position(|&n| !(n > 0.0)) {
        return Err(Error::DegenerateSample { index });
    }
    let batch = norms.len() as f64;
    let factors: Vec<f64> = norms.iter().map(|n| weight / (n * batch)).collect();
    let diff = tape.sub(pred, target)?;
    let per = tape.l2norm_per_sample(diff);
    let scaled = tape.scale_per_sample(per, &factors)?;
    Ok(tape.sum(scaled))
}

/// Batch-mean relative loss of `pred` against the constant `target`, both `(b, 1, m, m)`.
///
/// Derivatives use the fixed second-order stencil with spacing `h`. A batch entry whose
/// target (or target derivative, in H1 mode) vanishes is rejected by its batch index.
pub fn h1_loss<T: Real>(tape: &mut Tape<T>, pred: Var, target: &Tensor<T>, mode: LossMode, h: f64) -> Result<Var> {
    if tape.shape(pred) != target.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", tape.shape(pred), target.shape())));
    }
    let t = tape.constant(target.clone());
    let mut loss = relative_term(tape, pred, t, 1.0)?;
    if mode == LossMode::H1 {
        for axis in [Axis::X, Axis::Y] {
            let dp = tape.stencil_derivative(pred, axis, h);
            let dt = tape.stencil_derivative(t, axis, h);
            let term = relative_term(tape, dp, dt, 0.5)?;
            loss = tape.add(loss, term)?;
        }
    }
    Ok(loss)
}
