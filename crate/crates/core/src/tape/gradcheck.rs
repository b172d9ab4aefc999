//! Central finite-difference verification of tape gradients (double precision only).

use super::{Tape, Tensor, Var};
use crate::Result;

/// Worst normwise relative error `max|g − g_fd| / max|g_fd|` over every input.
///
/// `build` must create a scalar loss from the given input leaves and be deterministic.
pub fn gradient_check<F>(inputs: &[Tensor<f64>], step: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v);
        let mut max_diff = 0.0f64;
        let mut max_fd = 0.0f64;
        for i in 0..inputs[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * step);
            max_diff = max_diff.max((fd - analytic.data()[i]).abs());
            max_fd = max_fd.max(fd.abs());
        }
        if max_fd > 0.0 {
            worst = worst.max(max_diff / max_fd);
        } else {
            worst = worst.max(max_diff);
        }
    }
    Ok(worst)
}
