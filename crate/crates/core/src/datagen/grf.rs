use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::grid::GridField;
use crate::rng::{stream_rng, Stream};
use crate::Result;

/// Gaussian random field `N(0, (−Δ + shift·I)^{−power})` thresholded to two values.
#[derive(Clone, Debug, PartialEq)]
pub struct GrfParams {
    pub shift: f64,
    pub power: i32,
    pub low: f64,
    pub high: f64,
    /// Cosine modes kept per axis.
    pub modes: usize,
}

impl Default for GrfParams {
    fn default() -> Self {
        GrfParams { shift: 9.0, power: 2, low: 3.0, high: 12.0, modes: 64 }
    }
}

impl GrfParams {
    /// Standard deviation of the KL coefficient on cosine mode `(i, j)`.
    pub fn mode_std(&self, i: usize, j: usize) -> f64 {
        let lambda = PI * PI * ((i * i + j * j) as f64) + self.shift;
        lambda.powf(-f64::from(self.power) / 2.0)
    }

    /// Draws the KL coefficients (row-major `modes × modes`, entry `(i, j)` multiplies
    /// `cos(iπx)cos(jπy)`). The constant mode is dropped so the field has zero mean.
    pub fn draw_coefficients<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let k = self.modes;
        let mut coef = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let z: f64 = rng.sample(StandardNormal);
                if i + j > 0 {
                    coef[i * k + j] = z * self.mode_std(i, j);
                }
            }
        }
        coef
    }

    /// Evaluates the Gaussian field on an `m × m` grid by separable cosine sums.
    pub fn gaussian_field(&self, coef: &[f64], m: usize) -> Result<GridField> {
        let k = self.modes;
        let h = 1.0 / (m - 1) as f64;
        let basis: Vec<f64> = (0..m)
            .flat_map(|p| {
                let t = p as f64 * h;
                (0..k).map(move |i| if i == 0 { 1.0 } else { SQRT_2 * (i as f64 * PI * t).cos() })
            })
            .collect();
        // Row i of the grid is y = i·h, column j is x = j·h; coef is indexed (x mode, y mode).
        // tmp[x_mode][row] = Σ_ymode coef[x_mode][y_mode] φ_ymode(y_row)
        let mut tmp = vec![0.0; k * m];
        for a in 0..k {
            for row in 0..m {
                let phi = &basis[row * k..(row + 1) * k];
                tmp[a * m + row] = coef[a * k..(a + 1) * k].iter().zip(phi).map(|(c, p)| c * p).sum();
            }
        }
        let mut values = vec![0.0; m * m];
        for row in 0..m {
            for col in 0..m {
                let phi = &basis[col * k..(col + 1) * k];
                values[row * m + col] = (0..k).map(|a| tmp[a * m + row] * phi[a]).sum();
            }
        }
        GridField::new(m, values)
    }

    /// Pointwise threshold map: `low` where `g < 0`, `high` where `g ≥ 0`.
    pub fn threshold(&self, g: &GridField) -> GridField {
        g.map(|v| if v < 0.0 { self.low } else { self.high })
    }
}

/// Binary Darcy permeability for sample `index` of the stream rooted at `seed`.
pub fn sample_darcy_field(params: &GrfParams, m: usize, seed: u64, index: u64) -> Result<GridField> {
    let mut rng = stream_rng(seed, Stream::Coefficient, index);
    let coef = params.draw_coefficients(&mut rng);
    Ok(params.threshold(&params.gaussian_field(&coef, m)?))
}
