//! im2col convolution kernels for a single batch entry.

use super::tensor::{gemm, Real};

/// Geometry of a (possibly transposed) 2-D convolution with a square `k × k` kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn new(k: usize, stride: usize, dilation: usize) -> Self {
        ConvGeom { k, stride, padding: dilation * (k - 1) / 2, dilation }
    }

    /// Output side of the forward (non-transposed) convolution, if valid.
    pub fn out_size(&self, n: usize) -> Option<usize> {
        let span = self.dilation * (self.k - 1) + 1;
        let padded = n + 2 * self.padding;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

/// Output indices `o` with `o·stride + offset` inside `0..n`.
fn valid_range(offset: isize, stride: usize, n: usize, count: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let hi = ((n as isize - offset) + s - 1).div_euclid(s).clamp(0, count as isize);
    let lo = (lo as usize).min(hi as usize);
    (lo, hi as usize)
}

/// Dot product with eight interleaved accumulators.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (mut ac, mut bc) = (a.chunks_exact(8), b.chunks_exact(8));
    for (x, y) in (&mut ac).zip(&mut bc) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ac.remainder().iter().zip(bc.remainder()) {
        tail = tail + x * y;
    }
    let pairs = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    (pairs[0] + pairs[2]) + (pairs[1] + pairs[3]) + tail
}

/// Unfolds `x` (`c × h × w`) into `col` (`c·k·k × ho·wo`).
pub(crate) fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, g: ConvGeom, ho: usize, wo: usize, col: &mut [T]) {
    let k = g.k;
    let plane = ho * wo;
    for ci in 0..c {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            let di = (ki * g.dilation) as isize - g.padding as isize;
            let (ilo, ihi) = valid_range(di, g.stride, h, ho);
            for kj in 0..k {
                let row = &mut col[((ci * k + ki) * k + kj) * plane..][..plane];
                let dj = (kj * g.dilation) as isize - g.padding as isize;
                let (jlo, jhi) = valid_range(dj, g.stride, w, wo);
                row[..ilo * wo].fill(T::zero());
                row[ihi * wo..].fill(T::zero());
                for oi in ilo..ihi {
                    let ii = (oi as isize * g.stride as isize + di) as usize;
                    let src = &xc[ii * w..(ii + 1) * w];
                    let out = &mut row[oi * wo..(oi + 1) * wo];
                    out[..jlo].fill(T::zero());
                    out[jhi..].fill(T::zero());
                    if jlo < jhi {
                        let j0 = (jlo as isize * g.stride as isize + dj) as usize;
                        if g.stride == 1 {
                            out[jlo..jhi].copy_from_slice(&src[j0..j0 + (jhi - jlo)]);
                        } else {
                            let src = &src[j0..j0 + g.stride * (jhi - jlo - 1) + 1];
                            for (t, o) in out[jlo..jhi].iter_mut().enumerate() {
                                *o = src[t * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `col` back into `x`.
pub(crate) fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, g: ConvGeom, ho: usize, wo: usize, x: &mut [T]) {
    let k = g.k;
    let plane = ho * wo;
    for ci in 0..c {
        let xc = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            let di = (ki * g.dilation) as isize - g.padding as isize;
            let (ilo, ihi) = valid_range(di, g.stride, h, ho);
            for kj in 0..k {
                let row = &col[((ci * k + ki) * k + kj) * plane..][..plane];
                let dj = (kj * g.dilation) as isize - g.padding as isize;
                let (jlo, jhi) = valid_range(dj, g.stride, w, wo);
                if jlo >= jhi {
                    continue;
                }
                let j0 = (jlo as isize * g.stride as isize + dj) as usize;
                for oi in ilo..ihi {
                    let ii = (oi as isize * g.stride as isize + di) as usize;
                    let dst = &mut xc[ii * w..(ii + 1) * w];
                    let src = &row[oi * wo + jlo..oi * wo + jhi];
                    if g.stride == 1 {
                        for (d, &v) in dst[j0..j0 + src.len()].iter_mut().zip(src) {
                            *d = *d + v;
                        }
                    } else {
                        for (d, &v) in dst[j0..].iter_mut().step_by(g.stride).zip(src) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

/// Per-sample shapes shared by the kernels below. `big` is the side of the image that the
/// forward convolution reads (the transposed convolution's output), `small` the other.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Plan {
    pub c_big: usize,
    pub c_small: usize,
    pub big: (usize, usize),
    pub small: (usize, usize),
    pub geom: ConvGeom,
    pub transposed: bool,
}

/// Largest output channel count handled without im2col for stride-1 convolutions.
const DIRECT_MAX_OUT: usize = 4;

impl Plan {
    /// Narrow stride-1 convolutions (e.g. a mixing layer to one channel) skip the unfolded buffer.
    fn direct(&self) -> bool {
        !self.transposed && self.geom.stride == 1 && self.c_small <= DIRECT_MAX_OUT && self.big == self.small
    }

    pub fn col_len(&self) -> usize {
        if self.direct() {
            return 0;
        }
        self.c_big * self.geom.k * self.geom.k * self.small.0 * self.small.1
    }

    /// Visits every (output channel, input channel, tap) with the rows it couples:
    /// `f(co, ci, tap, oi, ii, jlo..jhi, j0)` where input column `j0 + t` meets output column `jlo + t`.
    fn direct_taps(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize, usize)) {
        let g = self.geom;
        let (h, w) = self.big;
        for co in 0..self.c_small {
            for ci in 0..self.c_big {
                for ki in 0..g.k {
                    let di = (ki * g.dilation) as isize - g.padding as isize;
                    let (ilo, ihi) = valid_range(di, 1, h, h);
                    for kj in 0..g.k {
                        let dj = (kj * g.dilation) as isize - g.padding as isize;
                        let (jlo, jhi) = valid_range(dj, 1, w, w);
                        if jlo >= jhi {
                            continue;
                        }
                        let j0 = (jlo as isize + dj) as usize;
                        let tap = ((co * self.c_big + ci) * g.k + ki) * g.k + kj;
                        for oi in ilo..ihi {
                            f(co, ci, tap, oi, (oi as isize + di) as usize, jlo, jhi, j0);
                        }
                    }
                }
            }
        }
    }

    fn direct_forward<T: Real>(&self, x: &[T], w: &[T], y: &mut [T]) {
        let (h, wd) = self.big;
        let plane = h * wd;
        y.fill(T::zero());
        self.direct_taps(|co, ci, tap, oi, ii, jlo, jhi, j0| {
            let wv = w[tap];
            let src = &x[ci * plane + ii * wd + j0..][..jhi - jlo];
            let dst = &mut y[co * plane + oi * wd + jlo..][..jhi - jlo];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = *d + wv * v;
            }
        });
    }

    fn direct_backward<T: Real>(&self, x: &[T], w: &[T], dy: &[T], mut dx: Option<&mut [T]>, mut dw: Option<&mut [T]>) {
        let (h, wd) = self.big;
        let plane = h * wd;
        self.direct_taps(|co, ci, tap, oi, ii, jlo, jhi, j0| {
            let n = jhi - jlo;
            let g = &dy[co * plane + oi * wd + jlo..][..n];
            if let Some(dw) = dw.as_deref_mut() {
                let src = &x[ci * plane + ii * wd + j0..][..n];
                dw[tap] = dw[tap] + dot(g, src);
            }
            if let Some(dx) = dx.as_deref_mut() {
                let wv = w[tap];
                let dst = &mut dx[ci * plane + ii * wd + j0..][..n];
                for (d, &v) in dst.iter_mut().zip(g) {
                    *d = *d + wv * v;
                }
            }
        });
    }

    fn ckk(&self) -> usize {
        self.c_big * self.geom.k * self.geom.k
    }

    fn small_plane(&self) -> usize {
        self.small.0 * self.small.1
    }

    /// conv: `y (c_small × small) = W (c_small × ckk) · im2col(x)`.
    pub fn conv_forward<T: Real>(&self, x: &[T], w: &[T], y: &mut [T], col: &mut [T]) {
        if self.direct() {
            return self.direct_forward(x, w, y);
        }
        im2col(x, self.c_big, self.big.0, self.big.1, self.geom, self.small.0, self.small.1, col);
        gemm(self.c_small, self.ckk(), self.small_plane(), w, false, col, false, T::zero(), y);
    }

    /// conv backward: `dx += col2im(Wᵀ dy)`, `dw = dy · colᵀ`.
    /// `dx` must arrive zeroed; `dw` may hold anything on the im2col path and must be zeroed on the direct path.
    pub fn conv_backward<T: Real>(&self, x: &[T], w: &[T], dy: &[T], dx: Option<&mut [T]>, dw: Option<&mut [T]>, col: &mut [T]) {
        if self.direct() {
            return self.direct_backward(x, w, dy, dx, dw);
        }
        if let Some(dw) = dw {
            im2col(x, self.c_big, self.big.0, self.big.1, self.geom, self.small.0, self.small.1, col);
            gemm(self.c_small, self.small_plane(), self.ckk(), dy, false, col, true, T::zero(), dw);
        }
        if let Some(dx) = dx {
            gemm(self.ckk(), self.c_small, self.small_plane(), w, true, dy, false, T::zero(), col);
            col2im(col, self.c_big, self.big.0, self.big.1, self.geom, self.small.0, self.small.1, dx);
        }
    }

    /// transposed conv: `y (c_big × big) = col2im(Wtᵀ x)` with `Wt` of shape `c_small × ckk`.
    pub fn convt_forward<T: Real>(&self, x: &[T], w: &[T], y: &mut [T], col: &mut [T]) {
        gemm(self.ckk(), self.c_small, self.small_plane(), w, true, x, false, T::zero(), col);
        y.iter_mut().for_each(|v| *v = T::zero());
        col2im(col, self.c_big, self.big.0, self.big.1, self.geom, self.small.0, self.small.1, y);
    }

    /// transposed conv backward: `dx = Wt · im2col(dy)`, `dw = x · im2col(dy)ᵀ`.
    pub fn convt_backward<T: Real>(&self, x: &[T], w: &[T], dy: &[T], dx: Option<&mut [T]>, dw: Option<&mut [T]>, col: &mut [T]) {
        im2col(dy, self.c_big, self.big.0, self.big.1, self.geom, self.small.0, self.small.1, col);
        if let Some(dx) = dx {
            gemm(self.c_small, self.ckk(), self.small_plane(), w, false, col, false, T::zero(), dx);
        }
        if let Some(dw) = dw {
            gemm(self.c_small, self.small_plane(), self.ckk(), x, false, col, true, T::zero(), dw);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    }

    #[test]
    fn direct_path_matches_unfolded_gemm() {
        for dilation in [1, 2, 3] {
            let geom = ConvGeom::new(3, 1, dilation);
            let (c_in, c_out, h, w) = (3, 2, 7, 9);
            let plan = Plan { c_big: c_in, c_small: c_out, big: (h, w), small: (h, w), geom, transposed: false };
            assert!(plan.direct());
            let x = lcg(c_in * h * w, 1);
            let wt = lcg(c_out * c_in * 9, 2);
            let dy = lcg(c_out * h * w, 3);
            let mut col = vec![0.0; c_in * 9 * h * w];
            im2col(&x, c_in, h, w, geom, h, w, &mut col);
            let mut y_ref = vec![0.0; c_out * h * w];
            gemm(c_out, c_in * 9, h * w, &wt, false, &col, false, 0.0, &mut y_ref);
            let mut dw_ref = vec![0.0; wt.len()];
            gemm(c_out, h * w, c_in * 9, &dy, false, &col, true, 0.0, &mut dw_ref);
            let mut dcol = vec![0.0; col.len()];
            gemm(c_in * 9, c_out, h * w, &wt, true, &dy, false, 0.0, &mut dcol);
            let mut dx_ref = vec![0.0; x.len()];
            col2im(&dcol, c_in, h, w, geom, h, w, &mut dx_ref);

            let mut y = vec![0.0; y_ref.len()];
            plan.conv_forward(&x, &wt, &mut y, &mut []);
            let mut dx = vec![0.0; x.len()];
            let mut dw = vec![0.0; wt.len()];
            plan.conv_backward(&x, &wt, &dy, Some(&mut dx), Some(&mut dw), &mut []);
            for (a, b) in [(&y, &y_ref), (&dx, &dx_ref), (&dw, &dw_ref)] {
                let err = a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                assert!(err < 1e-13, "dilation {dilation}: {err}");
            }
        }
    }
}
