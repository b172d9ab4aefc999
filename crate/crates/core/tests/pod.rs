//! POD properties on a small high-contrast Poisson set.

use ellip_core::datagen::build_dataset;
use ellip_core::grid::{assemble_operator, GridField};
use ellip_core::linsolve::solve_dense;
use ellip_core::pod::{dataset_unknowns, fit_pod, fit_pod_dataset, pod_error_curve, pod_solve, rank_ladder};
use ellip_core::problem::ProblemSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frobenius_projection_error(x: &[Vec<f64>], model: &ellip_core::pod::PodModel, r: usize) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for v in x {
        let p = model.project(v, r).unwrap();
        num += v.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        den += v.iter().map(|a| a * a).sum::<f64>();
    }
    (num / den).sqrt()
}

#[test]
fn eckart_young_and_orthonormality() {
    let ds = build_dataset(&ProblemSpec::poisson(6e5), 50, 33, 11, 1e-10).unwrap();
    let snaps = dataset_unknowns(&ds).unwrap();
    let model = fit_pod(&snaps, Some(50)).unwrap();
    assert!(model.orthonormality_defect() <= 1e-10);
    let sv = model.singular_values();
    assert!(sv.windows(2).all(|w| w[0] >= w[1]));
    for r in [1, 3, 10, 25, 40] {
        let direct = frobenius_projection_error(&snaps, &model, r);
        let tail = model.tail_energy(r);
        assert!((direct - tail).abs() <= 1e-8 * tail.max(1e-300), "r={r}: {direct} vs {tail}");
    }
}

#[test]
fn galerkin_exact_in_span() {
    let ds = build_dataset(&ProblemSpec::poisson(6e5), 20, 17, 2, 1e-10).unwrap();
    let model = fit_pod_dataset(&ds, Some(8)).unwrap();
    let sys = ds.system(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut u_star = vec![0.0; model.n()];
    for (j, zj) in z.iter().enumerate() {
        for (i, u) in u_star.iter_mut().enumerate() {
            *u += zj * model.basis()[(i, j)];
        }
    }
    let f = sys.operator.apply(&u_star).unwrap();
    let u_hat = pod_solve(&model, &sys.operator, &f).unwrap();
    let e: Vec<f64> = u_hat.iter().zip(&u_star).map(|(a, b)| a - b).collect();
    let a_norm = |v: &[f64]| v.iter().zip(sys.operator.apply(v).unwrap()).map(|(a, b)| a * b).sum::<f64>().sqrt();
    assert!(a_norm(&e) <= 1e-8 * a_norm(&u_star));
}

#[test]
fn full_rank_matches_dense_solve() {
    let m = 4;
    let n = m * m;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let snaps: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let model = fit_pod(&snaps, Some(n)).unwrap();
    let spec = ProblemSpec::poisson(1.0);
    let eta = GridField::from_fn(m, |x, y| 10.0 * x * y).unwrap();
    let op = assemble_operator(&spec, &eta, &GridField::constant(m, 1.0).unwrap()).unwrap();
    let f: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
    let u_pod = pod_solve(&model, &op, &f).unwrap();
    let u_dense = solve_dense(&op.to_dense(), n, &f).unwrap();
    let diff: f64 = u_pod.iter().zip(&u_dense).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let nd: f64 = u_dense.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(diff <= 1e-8 * nd);
}

#[test]
fn projection_error_non_increasing_on_training_data() {
    let ds = build_dataset(&ProblemSpec::poisson(6e5), 16, 17, 3, 1e-10).unwrap();
    let model = fit_pod_dataset(&ds, Some(16)).unwrap();
    let curve = pod_error_curve(&model, &ds, &rank_ladder(16)).unwrap();
    for w in curve.windows(2) {
        assert!(w[1].projection <= w[0].projection + 1e-12);
    }
    assert!(curve.last().unwrap().projection < 1e-10);
    assert!(curve.last().unwrap().galerkin < 1e-8);
}
