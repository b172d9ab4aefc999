//! The fixed first-derivative stencil shared by `fd_gradient` and the training loss.

use num_traits::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Along a row (column index `j`, the x direction).
    X,
    /// Along a column (row index `i`, the y direction).
    Y,
}

/// Taps of the derivative at position `k` of a line of `n ≥ 3` points, in units of `1/(2h)`.
#[inline]
pub fn taps(k: usize, n: usize) -> [(usize, f64); 3] {
    if k == 0 {
        [(0, -3.0), (1, 4.0), (2, -1.0)]
    } else if k == n - 1 {
        [(n - 1, 3.0), (n - 2, -4.0), (n - 3, 1.0)]
    } else {
        [(k + 1, 1.0), (k - 1, -1.0), (k, 0.0)]
    }
}

/// Derivative of one row-major `rows × cols` plane along `axis`.
pub fn derivative_2d<T: Float>(src: &[T], rows: usize, cols: usize, h: f64, axis: Axis, out: &mut [T]) {
    assert_eq!(src.len(), rows * cols);
    assert_eq!(out.len(), rows * cols);
    let scale = 0.5 / h;
    match axis {
        Axis::X => {
            for i in 0..rows {
                let row = &src[i * cols..(i + 1) * cols];
                for j in 0..cols {
                    let mut acc = 0.0;
                    for (idx, c) in taps(j, cols) {
                        acc += c * row[idx].to_f64().unwrap();
                    }
                    out[i * cols + j] = T::from(acc * scale).unwrap();
                }
            }
        }
        Axis::Y => {
            for i in 0..rows {
                let t = taps(i, rows);
                for j in 0..cols {
                    let mut acc = 0.0;
                    for (idx, c) in t {
                        acc += c * src[idx * cols + j].to_f64().unwrap();
                    }
                    out[i * cols + j] = T::from(acc * scale).unwrap();
                }
            }
        }
    }
}

/// Adds the transpose of [`derivative_2d`] applied to `grad_out` into `grad_in`.
pub fn derivative_2d_transpose_add<T: Float>(
    grad_out: &[T],
    rows: usize,
    cols: usize,
    h: f64,
    axis: Axis,
    grad_in: &mut [T],
) {
    let scale = 0.5 / h;
    match axis {
        Axis::X => {
            for i in 0..rows {
                for j in 0..cols {
                    let g = grad_out[i * cols + j].to_f64().unwrap() * scale;
                    for (idx, c) in taps(j, cols) {
                        let slot = &mut grad_in[i * cols + idx];
                        *slot = *slot + T::from(c * g).unwrap();
                    }
                }
            }
        }
        Axis::Y => {
            for i in 0..rows {
                let t = taps(i, rows);
                for j in 0..cols {
                    let g = grad_out[i * cols + j].to_f64().unwrap() * scale;
                    for (idx, c) in t {
                        let slot = &mut grad_in[idx * cols + j];
                        *slot = *slot + T::from(c * g).unwrap();
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_is_adjoint() {
        let (rows, cols) = (5, 7);
        let x: Vec<f64> = (0..rows * cols).map(|k| ((k * 37) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..rows * cols).map(|k| ((k * 13) % 7) as f64 * 0.3).collect();
        for axis in [Axis::X, Axis::Y] {
            let mut dx = vec![0.0; rows * cols];
            derivative_2d(&x, rows, cols, 0.1, axis, &mut dx);
            let mut dty = vec![0.0; rows * cols];
            derivative_2d_transpose_add(&y, rows, cols, 0.1, axis, &mut dty);
            let lhs: f64 = dx.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&dty).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }
}
