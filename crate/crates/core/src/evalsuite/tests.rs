use proptest::prelude::*;

use super::*;

fn wavy(m: usize, k: f64) -> GridField {
    GridField::from_fn(m, |x, y| (k * x).sin() + (0.5 * k * y).cos() + x * y).unwrap()
}

fn two_pass(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[test]
fn hand_pair() {
    assert_eq!(relative_l2(&[3.0, 0.0], &[3.0, 4.0]), Some(0.8));
    assert_eq!(relative_l2(&[1.0], &[0.0]), None);
}

#[test]
fn exact_and_zero_predictors() {
    let truths: Vec<GridField> = (1..5).map(|k| wavy(9, k as f64)).collect();
    let r = relative_errors(&truths, &truths).unwrap();
    assert!(r.u_errors.iter().chain(&r.dx_errors).chain(&r.dy_errors).all(|&e| e == 0.0));
    let zeros = vec![GridField::zeros(9).unwrap(); 4];
    let r = relative_errors(&zeros, &truths).unwrap();
    assert!(r.u_errors.iter().chain(&r.dx_errors).chain(&r.dy_errors).all(|&e| e == 1.0));
    assert_eq!(r.histogram.counts.iter().sum::<usize>(), 4);
}

#[test]
fn degenerate_truth_is_reported() {
    let truths = vec![wavy(7, 1.0), GridField::constant(7, 2.0).unwrap()];
    let preds = vec![wavy(7, 1.1), GridField::constant(7, 2.1).unwrap()];
    assert!(matches!(relative_errors(&preds, &truths), Err(Error::DegenerateSample { index: 1 })));
    assert!(relative_errors(&preds[..1], &truths).is_err());
}

#[test]
fn aggregates_follow_the_sample_list() {
    let truths: Vec<GridField> = (1..8).map(|k| wavy(11, k as f64)).collect();
    let preds: Vec<GridField> = (1..8).map(|k| wavy(11, k as f64 * 1.05)).collect();
    let r = relative_errors(&preds, &truths).unwrap();
    let mut sorted = r.u_errors.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(r.u.median, sorted[3]);
    assert_eq!(r.u.max, sorted[6]);
    let (mean, std) = two_pass(&r.u_errors);
    assert!((r.u.mean - mean).abs() < 1e-15 && (r.u.std - std).abs() < 1e-15);
    assert_eq!(r.histogram.edges.len(), HISTOGRAM_BINS + 1);
    assert_eq!(r.histogram.counts.iter().sum::<usize>(), 7);
    assert!((r.histogram.edges[0] - sorted[0]).abs() < 1e-12 * sorted[0]);
    assert!((r.histogram.edges[HISTOGRAM_BINS] - sorted[6]).abs() < 1e-12 * sorted[6]);
}

#[test]
fn scale_covariance() {
    let truths: Vec<GridField> = (1..4).map(|k| wavy(8, k as f64)).collect();
    let preds: Vec<GridField> = (1..4).map(|k| wavy(8, k as f64 + 0.3)).collect();
    let a = relative_errors(&preds, &truths).unwrap();
    for c in [4.0, -0.25] {
        let scale = |v: &[GridField]| -> Vec<GridField> { v.iter().map(|f| f.map(|x| c * x)).collect() };
        let b = relative_errors(&scale(&preds), &scale(&truths)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn constant_qoi_has_no_spread() {
    let s = scalar_stats(&[2.5; 10]).unwrap();
    assert_eq!((s.mean, s.std, s.p_ext), (2.5, 0.0, 0.0));
    assert!(scalar_stats(&[1.0]).is_err());
}

#[test]
fn gaussian_exceedance_rate() {
    let mut rng = stream_rng(2024, Stream::Synthetic, 0);
    let v: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
    let s = scalar_stats(&v).unwrap();
    let (mean, std) = two_pass(&v);
    assert!((s.mean - mean).abs() <= 1e-12 && (s.std - std).abs() <= 1e-12 * std);
    assert!((s.p_ext - 0.0027).abs() <= 0.0006, "p_ext {}", s.p_ext);
}

#[test]
fn field_functionals() {
    let m = 9;
    let u = GridField::from_fn(m, |x, _| 2.0 * x - 1.0).unwrap();
    assert!((QoiSpec::SumAbsDxU.evaluate(&u).unwrap()[0] - 2.0 * (m * m) as f64).abs() < 1e-9);
    let l1: f64 = u.values().iter().map(|v| v.abs()).sum();
    assert_eq!(QoiSpec::L1NormOfU.evaluate(&u).unwrap(), vec![l1]);
    assert_eq!(QoiSpec::L2NormOfU.evaluate(&u).unwrap(), vec![u.norm_l2()]);
    let q = QoiSpec::LinearFunctional { rows: 2, matrix: [vec![1.0; m * m], u.values().to_vec()].concat() };
    let v = q.evaluate(&u).unwrap();
    assert!((v[0] - u.values().iter().sum::<f64>()).abs() < 1e-12);
    assert!((v[1] - u.norm_l2().powi(2)).abs() < 1e-12);
    assert!(QoiSpec::LinearFunctional { rows: 2, matrix: vec![1.0; 5] }.evaluate(&u).is_err());
    let g = QoiSpec::gaussian(2, m * m, 1);
    assert_eq!(g.dim(), 2);
    let stats = qoi_stats(&[u.clone(), u.map(|x| 2.0 * x), u.map(|x| -x)], &g).unwrap();
    assert_eq!(stats.len(), 2);
}

#[test]
fn reports_write() {
    let dir = tempfile::tempdir().unwrap();
    let truths: Vec<GridField> = (1..4).map(|k| wavy(8, k as f64)).collect();
    let preds: Vec<GridField> = (1..4).map(|k| wavy(8, k as f64 + 0.3)).collect();
    let r = relative_errors(&preds, &truths).unwrap();
    write_metric_csv(&r, &dir.path().join("m.csv")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let first: f64 = text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(first, r.u_errors[0]);
    write_histogram_csv(&r, &dir.path().join("h.csv")).unwrap();
    write_summary(&r, "u", &dir.path().join("s.txt")).unwrap();
    write_qoi_table(&[("exact".into(), QoiSpec::L2NormOfU, vec![scalar_stats(&[1.0, 2.0]).unwrap()])], &dir.path().join("q.csv")).unwrap();
    write_pgm(&truths[0], &dir.path().join("t.pgm")).unwrap();
    let pgm = std::fs::read(dir.path().join("t.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n8 8\n255\n") && pgm.len() == 11 + 64);
}

proptest! {
    #[test]
    fn exceedance_is_a_probability(values in prop::collection::vec(-1e3f64..1e3, 2..200)) {
        let s = scalar_stats(&values).unwrap();
        prop_assert!((0.0..=1.0).contains(&s.p_ext));
        let (mean, std) = two_pass(&values);
        prop_assert!((s.mean - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
        prop_assert!((s.std - std).abs() <= 1e-10 * (1.0 + std));
    }
}
