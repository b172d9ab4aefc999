use rand::Rng;

use crate::grid::GridField;
use crate::rng::{stream_rng, Stream};
use crate::Result;

pub const NUM_RINGS: usize = 10;
/// Ring radii, drawn once from U(0.1, 0.3) and frozen.
pub const RING_RADII: [f64; NUM_RINGS] = [0.2216, 0.2542, 0.1518, 0.13, 0.2436, 0.273, 0.1669, 0.1463, 0.2356, 0.2803];
/// Angular frequencies `k_i`, drawn once from {1, …, 4} and frozen.
pub const RING_FREQUENCIES: [u32; NUM_RINGS] = [1, 1, 4, 3, 3, 1, 2, 1, 1, 2];
pub const RING_SIGMA: f64 = 0.01;

/// Parameters of a ring field; only the centres are random.
#[derive(Clone, Debug, PartialEq)]
pub struct RingFieldParams {
    pub centers: Vec<(f64, f64)>,
    pub radii: Vec<f64>,
    pub frequencies: Vec<u32>,
    pub sigma: f64,
    pub c: f64,
}

impl RingFieldParams {
    /// Frozen radii and frequencies with centres drawn i.i.d. uniform on the unit square.
    pub fn draw<R: Rng>(c: f64, rng: &mut R) -> Self {
        let centers = (0..NUM_RINGS).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        RingFieldParams {
            centers,
            radii: RING_RADII.to_vec(),
            frequencies: RING_FREQUENCIES.to_vec(),
            sigma: RING_SIGMA,
            c,
        }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        let two_sigma_sq = 2.0 * self.sigma * self.sigma;
        let mut sum = 0.0;
        for ((&(cx, cy), &r), &k) in self.centers.iter().zip(&self.radii).zip(&self.frequencies) {
            let (dx, dy) = (x - cx, y - cy);
            let dist = dx.hypot(dy);
            let radial = (-(dist - r).powi(2) / two_sigma_sq).exp();
            if radial == 0.0 {
                continue;
            }
            let theta = dy.atan2(dx);
            sum += (2.0 * f64::from(k) * theta).cos().powi(2) * radial;
        }
        self.c * sum
    }

    pub fn evaluate(&self, m: usize) -> Result<GridField> {
        GridField::from_fn(m, |x, y| self.value(x, y))
    }
}

/// Ring field for sample `index` of the stream rooted at `seed`.
pub fn sample_ring_field(c: f64, m: usize, seed: u64, index: u64) -> Result<GridField> {
    let mut rng = stream_rng(seed, Stream::Coefficient, index);
    RingFieldParams::draw(c, &mut rng).evaluate(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nonnegative_and_scaled_by_c() {
        let lo = sample_ring_field(0.5, 33, 3, 0).unwrap();
        let hi = sample_ring_field(6e5, 33, 3, 0).unwrap();
        assert!(lo.values().iter().all(|&v| v >= 0.0));
        for (a, b) in lo.values().iter().zip(hi.values()) {
            assert!((b - a * 1.2e6).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn zero_of_the_angular_factor() {
        let p = RingFieldParams {
            centers: vec![(0.5, 0.5)],
            radii: vec![0.2],
            frequencies: vec![1],
            sigma: 0.01,
            c: 1.0,
        };
        // cos(2θ) = 0 at θ = π/4.
        let t = std::f64::consts::FRAC_PI_4;
        let v = p.value(0.5 + 0.2 * t.cos(), 0.5 + 0.2 * t.sin());
        assert!(v.abs() < 1e-25);
        assert!((p.value(0.7, 0.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_field() {
        let a = sample_ring_field(6e5, 17, 42, 5).unwrap();
        let b = sample_ring_field(6e5, 17, 42, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_ring_field(6e5, 17, 42, 6).unwrap());
    }
}
