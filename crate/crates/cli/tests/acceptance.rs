//! Acceptance checks, one PASS/FAIL line each. Runs without the libtest harness so the lines
//! print in order; exits non-zero if any check fails.
//!
//! The full-scale training gate takes hours and only runs with `--include-ignored` (or
//! `--ignored`). `--quick` skips every training gate.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ellip_core::datagen::{build_dataset, build_dataset_with, invert_dataset, make_source, BuildOptions, Dataset};
use ellip_core::evalsuite::{evaluate_network, qoi_stats, MetricReport, QoiSpec};
use ellip_core::grid::stencil::Axis;
use ellip_core::grid::{discretize, GridField, UnknownLayout};
use ellip_core::ivnet::{count_params, IvNet, IvNetConfig, Normalization};
use ellip_core::linsolve::solve_cg;
use ellip_core::pod::{dataset_unknowns, fit_pod_dataset, pod_error_curve, rank_ladder};
use ellip_core::problem::{manufactured_u, ProblemSpec, HIGH_CONTRAST};
use ellip_core::rng::{stream_rng, Stream};
use ellip_core::tape::gradcheck::gradient_check;
use ellip_core::tape::{BatchNormState, BnMode, Tape, Tensor, Var};
use ellip_core::trainer::{h1_loss, init_model, run, split_validation, LossMode, Prepared, Session, TrainConfig};
use ellip_core::datagen::Task;
use rand::Rng;
use rand_distr::StandardNormal;

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_s: f64) -> (bool, String) {
    let s = elapsed.as_secs_f64();
    (s < limit_s, format!("runtime {s:.1}s (limit {limit_s}s)"))
}

fn randn(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = stream_rng(seed, Stream::Synthetic, 0);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Fixed random projection to a scalar so that every output entry gets a generic weight.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> ellip_core::Result<Var> {
    let r = tape.constant(randn(tape.shape(y), seed));
    let d = tape.sub(y, r)?;
    Ok(tape.l2norm(d))
}

fn discretization_order() -> Outcome {
    let t0 = Instant::now();
    let spec = ProblemSpec::poisson(0.0);
    let mut errors = Vec::new();
    let sides = [33usize, 65, 129];
    for &m in &sides {
        let eta = GridField::zeros(m).unwrap();
        let a = GridField::constant(m, 1.0).unwrap();
        let (f, g) = make_source(&spec.source, m, Some(&eta)).unwrap();
        let sys = discretize(&spec, &eta, &a, &f, Some(&g)).unwrap();
        let (u, rep) = solve_cg(&sys.operator, &sys.rhs, 1e-13, 100_000).unwrap();
        assert!(rep.converged);
        let u = UnknownLayout::new(m, spec.boundary).to_field(&u).unwrap();
        let truth = GridField::from_fn(m, manufactured_u).unwrap();
        let h = u.h();
        let sq: f64 = u.values().iter().zip(truth.values()).map(|(a, b)| (a - b) * (a - b)).sum();
        errors.push((sq * h * h).sqrt());
    }
    let orders: Vec<f64> = (0..2)
        .map(|k| (errors[k] / errors[k + 1]).ln() / (((sides[k + 1] - 1) as f64) / ((sides[k] - 1) as f64)).ln())
        .collect();
    let (fast, time) = within(t0.elapsed(), 10.0);
    let ok = orders.iter().all(|p| (1.9..=2.1).contains(p));
    outcome(ok && fast, format!("L2 errors {}, observed orders {orders:.4?} (need [1.9, 2.1]), {time}", errors.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(" ")))
}

fn autodiff_correctness() -> Outcome {
    let t0 = Instant::now();
    let step = 1e-6;
    let mut worst_plain = 0.0f64;
    let mut worst_nonsmooth = 0.0f64;
    let mut plain = |err: f64| worst_plain = worst_plain.max(err);
    let x = randn([2, 3, 8, 8], 1);
    let w = randn([4, 3, 3, 3], 2);
    let b = randn([1, 4, 1, 1], 3);
    for (stride, dilation) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
        plain(
            gradient_check(&[x.clone(), w.clone(), b.clone()], step, |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), stride, dilation)?;
                project(t, y, 10)
            })
            .unwrap(),
        );
    }
    let xt = randn([2, 4, 4, 4], 4);
    let bt = randn([1, 3, 1, 1], 5);
    for stride in [1, 2] {
        plain(
            gradient_check(&[xt.clone(), w.clone(), bt.clone()], step, |t, v| {
                let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), stride)?;
                project(t, y, 11)
            })
            .unwrap(),
        );
    }
    let y = randn([2, 3, 8, 8], 6);
    plain(gradient_check(&[x.clone(), y.clone()], step, |t, v| { let s = t.add(v[0], v[1])?; project(t, s, 12) }).unwrap());
    plain(gradient_check(&[x.clone(), y.clone()], step, |t, v| { let s = t.sub(v[0], v[1])?; project(t, s, 13) }).unwrap());
    plain(gradient_check(&[x.clone()], step, |t, v| { let s = t.scale(v[0], -1.7); project(t, s, 14) }).unwrap());
    plain(gradient_check(&[x.clone(), y.clone()], step, |t, v| { let s = t.concat_channels(&[v[1], v[0]])?; project(t, s, 15) }).unwrap());
    for axis in [Axis::X, Axis::Y] {
        plain(gradient_check(&[x.clone()], step, |t, v| { let s = t.stencil_derivative(v[0], axis, 0.25); project(t, s, 16) }).unwrap());
    }
    plain(gradient_check(&[x.clone()], step, |t, v| { let s = t.sum(v[0]); let p = t.scale(s, 0.1); Ok(p) }).unwrap());
    plain(gradient_check(&[x.clone()], step, |t, v| { let s = t.scale_per_sample(v[0], &[0.5, 2.0])?; project(t, s, 17) }).unwrap());
    plain(gradient_check(&[x.clone()], step, |t, v| { let s = t.pad(v[0], 10, 12)?; project(t, s, 18) }).unwrap());
    plain(gradient_check(&[x.clone()], step, |t, v| { let s = t.crop(v[0], 5, 6)?; project(t, s, 19) }).unwrap());
    plain(gradient_check(&[x.clone()], step, |t, v| Ok(t.l2norm(v[0]))).unwrap());
    plain(gradient_check(&[x.clone()], step, |t, v| { let s = t.l2norm_per_sample(v[0]); let q = t.sum(s); Ok(q) }).unwrap());
    let target = randn([2, 1, 8, 8], 20);
    let pred = randn([2, 1, 8, 8], 21);
    for mode in [LossMode::H1, LossMode::L2Only] {
        plain(gradient_check(&[pred.clone()], step, |t, v| h1_loss(t, v[0], &target, mode, 1.0 / 7.0)).unwrap());
    }

    let gamma = randn([1, 3, 1, 1], 22);
    let beta = randn([1, 3, 1, 1], 23);
    worst_nonsmooth = worst_nonsmooth.max(
        gradient_check(&[x.clone(), gamma.clone(), beta.clone()], step, |t, v| {
            let mut st = BatchNormState::new(3);
            let s = t.batch_norm(v[0], v[1], v[2], &mut st, BnMode::Train)?;
            project(t, s, 24)
        })
        .unwrap(),
    );
    worst_nonsmooth = worst_nonsmooth.max(gradient_check(&[x.clone()], step, |t, v| { let s = t.relu(v[0]); project(t, s, 25) }).unwrap());
    worst_nonsmooth = worst_nonsmooth.max(
        gradient_check(&[x.clone(), w.clone(), b.clone()], step, |t, v| {
            let c = t.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
            let r = t.relu(c);
            let g = t.constant(Tensor::full([1, 4, 1, 1], 1.3));
            let bb = t.constant(Tensor::full([1, 4, 1, 1], 0.1));
            let mut st = BatchNormState::new(4);
            let n = t.batch_norm(r, g, bb, &mut st, BnMode::Train)?;
            project(t, n, 26)
        })
        .unwrap(),
    );

    let mut cfg = IvNetConfig::new(1, 2, 0.5);
    cfg.base_channels = vec![4];
    let mut model = IvNet::new(cfg, Task::Forward, Normalization::default(), 3).unwrap();
    let mut rng = stream_rng(7, Stream::Synthetic, 1);
    for p in &mut model.params {
        for v in p.value.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let mut inputs: Vec<Tensor<f64>> = model.params.iter().map(|p| p.value.cast()).collect();
    inputs.push(randn([2, 2, 8, 8], 27));
    let n = model.params.len();
    let net_err = gradient_check(&inputs, step, |t, v| {
        let mut bn = model.bn.clone();
        let out = model.forward(t, &v[..n], &mut bn, v[n], BnMode::Train)?;
        project(t, out.output, 28)
    })
    .unwrap();
    worst_nonsmooth = worst_nonsmooth.max(net_err);

    let (fast, time) = within(t0.elapsed(), 60.0);
    outcome(
        worst_plain <= 1e-5 && worst_nonsmooth <= 1e-4 && fast,
        format!(
            "worst relative error: smooth ops {worst_plain:.2e} (tol 1e-5), batch-norm/relu compositions incl. 2-block network {worst_nonsmooth:.2e} (tol 1e-4), {time}"
        ),
    )
}

fn adjoint_identity() -> Outcome {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut rng = stream_rng(99, Stream::Synthetic, 2);
    for trial in 0..100u64 {
        let batch = rng.random_range(1..4);
        let cin = rng.random_range(1..5);
        let cout = rng.random_range(1..5);
        let stride = rng.random_range(1..3);
        let coarse = rng.random_range(2..9);
        let fine = coarse * stride;
        let mut t = Tape::<f64>::new();
        let x = t.constant(randn([batch, cin, fine, fine], 1000 + trial));
        let w = t.constant(randn([cout, cin, 3, 3], 2000 + trial));
        let y = t.constant(randn([batch, cout, coarse, coarse], 3000 + trial));
        let cx = t.conv2d(x, w, None, stride, 1).unwrap();
        let cty = t.conv_transpose2d(y, w, None, stride).unwrap();
        let lhs = t.value(cx).dot(t.value(y));
        let rhs = t.value(x).dot(t.value(cty));
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    let (fast, time) = within(t0.elapsed(), 5.0);
    outcome(worst <= 1e-10 && fast, format!("worst relative pairing gap {worst:.2e} over 100 instances (tol 1e-10), {time}"))
}

fn pod_properties() -> Outcome {
    let t0 = Instant::now();
    let ds = build_dataset(&ProblemSpec::poisson(HIGH_CONTRAST), 50, 33, 4, 1e-12).unwrap();
    let full = fit_pod_dataset(&ds, Some(50)).unwrap();
    let basis = full.basis();
    let mut ortho = 0.0f64;
    for i in 0..full.r() {
        for j in 0..full.r() {
            let g = basis.column(i).dot(&basis.column(j));
            ortho = ortho.max((g - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }

    // ‖X − U_r U_rᵀ X‖_F² against Σ_{i>r} σ_i².
    let snaps = dataset_unknowns(&ds).unwrap();
    let sv = full.singular_values();
    let total: f64 = sv.iter().map(|s| s * s).sum();
    let mut ey = 0.0f64;
    for r in [1, 5, 10, 20, 40] {
        let resid: f64 = snaps
            .iter()
            .map(|v| full.project(v, r).unwrap().iter().zip(v).map(|(p, x)| (p - x) * (p - x)).sum::<f64>())
            .sum();
        let tail: f64 = sv.iter().skip(r).map(|s| s * s).sum();
        ey = ey.max((resid - tail).abs() / total);
    }

    // A field inside the span: the Galerkin solution must reproduce it.
    let mut galerkin = 0.0f64;
    for i in [0, 17, 49] {
        let sys = ds.system(i).unwrap();
        let u = &snaps[i];
        let f = sys.operator.apply(u).unwrap();
        let got = full.solve(&sys.operator, &f).unwrap();
        let num: f64 = got.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = u.iter().map(|b| b * b).sum::<f64>().sqrt();
        galerkin = galerkin.max(num / den);
    }

    let curve = pod_error_curve(&full, &ds, &rank_ladder(50)).unwrap();
    let monotone = curve.windows(2).all(|w| w[1].galerkin <= w[0].galerkin && w[1].projection <= w[0].projection);
    let (fast, time) = within(t0.elapsed(), 30.0);
    let ok = ortho <= 1e-10 && ey <= 1e-8 && galerkin <= 1e-8 && monotone && fast;
    outcome(
        ok,
        format!(
            "orthonormality {ortho:.2e} (tol 1e-10), Eckart-Young gap {ey:.2e} (tol 1e-8), in-span Galerkin error {galerkin:.2e} (tol 1e-8), error-vs-r non-increasing: {monotone}, {time}"
        ),
    )
}

fn parameter_economy() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (levels, blocks, width) in [(1, 22, 0.8), (2, 10, 1.0), (3, 6, 0.5)] {
        let unshared = IvNetConfig::new(levels, blocks, width);
        let mut shared = unshared.clone();
        shared.share_weights = true;
        let enumerate = |cfg: &IvNetConfig| -> usize {
            IvNet::new(cfg.clone(), Task::Forward, Normalization::default(), 0).unwrap().params.iter().map(|p| p.value.len()).sum()
        };
        let (cu, cs) = (count_params(&unshared), count_params(&shared));
        let (eu, es) = (enumerate(&unshared), enumerate(&shared));
        let factor = cu as f64 / cs as f64;
        let good = cu == eu && cs == es && factor >= 0.9 * blocks as f64;
        ok &= good;
        lines.push(format!("({levels},{blocks},{width}): {cu} -> {cs} params, factor {factor:.2} (need >= {:.1})", 0.9 * blocks as f64));
    }
    outcome(ok, lines.join("; "))
}

fn uq_machinery() -> Outcome {
    let t0 = Instant::now();
    let mut rng = stream_rng(2024, Stream::Synthetic, 3);
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let fields: Vec<GridField> = xs
        .iter()
        .map(|&x| {
            let mut v = vec![0.0; 9];
            v[4] = x;
            GridField::new(3, v).unwrap()
        })
        .collect();
    let mut picker = vec![0.0; 9];
    picker[4] = 1.0;
    let st = qoi_stats(&fields, &QoiSpec::LinearFunctional { rows: 1, matrix: picker }).unwrap()[0];
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt();
    let (dm, ds) = ((st.mean - mean).abs(), (st.std - std).abs());
    let (fast, time) = within(t0.elapsed(), 5.0);
    let ok = (st.p_ext - 0.0027).abs() <= 0.0006 && dm <= 1e-12 && ds <= 1e-12 && fast;
    outcome(ok, format!("p_ext {:.5} (need 0.0027 +/- 0.0006), |mean gap| {dm:.1e}, |std gap| {ds:.1e} (tol 1e-12), {time}", st.p_ext))
}

/// Datasets shared by the training gates.
struct Desk {
    train: Dataset,
    test: Dataset,
}

fn desk_data(s: usize) -> Desk {
    let spec = ProblemSpec::poisson(HIGH_CONTRAST);
    let train = build_dataset_with(&spec, s, 65, 1, 1e-10, &BuildOptions { split: "train".into(), ..Default::default() }).unwrap();
    let test = build_dataset_with(
        &spec,
        100,
        65,
        1,
        1e-10,
        &BuildOptions { index_offset: 1_000_000, split: "test".into(), ..Default::default() },
    )
    .unwrap();
    Desk { train, test }
}

/// Trains the (1, 22, 0.8) network and scores it on the test set.
fn train_and_score(train: &Dataset, test: &Dataset, loss: LossMode, epochs: usize) -> (MetricReport, Duration) {
    let t0 = Instant::now();
    let cfg = TrainConfig { epochs, loss, task: train.meta.task, seed: 1, ..Default::default() };
    let (tr, va) = split_validation(train, cfg.val_fraction, cfg.seed);
    let model = init_model(IvNetConfig::new(1, 22, 0.8), &tr, cfg.seed).unwrap();
    let mut session = Session::new(model, &cfg);
    let tp = Prepared::new(&session.model, &tr).unwrap();
    let vp = Prepared::new(&session.model, &va).unwrap();
    run(&mut session, &tp, &vp, &cfg, epochs, &mut |_| {}).unwrap();
    let report = evaluate_network(&session.best, test, 8).unwrap();
    (report, t0.elapsed())
}

fn training_gate(desk: &Desk, h1: &(MetricReport, Duration), epochs: usize, tol: f64, limit: Option<f64>) -> Outcome {
    let (report, elapsed) = h1;
    let err = report.u.mean;
    let mut detail = format!("s = {}, {epochs} epochs: mean test relative error {:.2}% (need <= {:.0}%)", desk.train.len(), 100.0 * err, 100.0 * tol);
    let mut ok = err <= tol;
    if let Some(limit) = limit {
        let s = elapsed.as_secs_f64();
        detail.push_str(&format!(", train+eval {:.1} min (limit {:.0} min)", s / 60.0, limit / 60.0));
        ok &= s < limit;
    }
    outcome(ok, detail)
}

fn derivative_loss(h1: &MetricReport, l2: &MetricReport) -> Outcome {
    let (a, b) = (h1.mean_gradient_error(), l2.mean_gradient_error());
    outcome(a < b, format!("mean gradient-component error: H1 {:.2}% vs L2-only {:.2}% (need H1 < L2-only)", 100.0 * a, 100.0 * b))
}

fn inverse_mode(desk: &Desk, epochs: usize) -> Outcome {
    let inv_train = invert_dataset(&desk.train);
    let exact = invert_dataset(&inv_train) == desk.train;
    let (report, _) = train_and_score(&inv_train, &invert_dataset(&desk.test), LossMode::H1, epochs);
    let err = report.u.mean;
    outcome(
        exact && err <= 0.25,
        format!("involution exact: {exact}; inverse test error {:.2}% on log-rescaled coefficient (need <= 25%)", 100.0 * err),
    )
}

fn time_batch(workers: usize, reps: usize) -> f64 {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
    let model = IvNet::new(IvNetConfig::new(1, 22, 0.8), Task::Forward, Normalization::default(), 1).unwrap();
    let x: Tensor<f32> = randn([8, 2, 64, 64], 5).cast();
    let y: Tensor<f32> = randn([8, 1, 64, 64], 6).cast();
    let mut times = Vec::new();
    pool.install(|| {
        for _ in 0..reps {
            let t0 = Instant::now();
            let mut tape = Tape::<f32>::new();
            let p = model.bind(&mut tape);
            let xv = tape.constant(x.clone());
            let mut bn = model.bn.clone();
            let out = model.forward(&mut tape, &p, &mut bn, xv, BnMode::Train).unwrap();
            let loss = h1_loss(&mut tape, out.output, &y, LossMode::H1, 1.0 / 63.0).unwrap();
            let g = tape.backward(loss).unwrap();
            std::hint::black_box(g.wrt(p[0]));
            times.push(t0.elapsed().as_secs_f64());
        }
    });
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

fn performance() -> Outcome {
    let t1 = time_batch(1, 5);
    let t4 = time_batch(4, 5);
    let speedup = t1 / t4;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    outcome(
        t1 <= 3.0 && speedup >= 2.5,
        format!("batch of 8 at 64^2, (1,22,0.8): {t1:.3}s single worker (limit 3s), {t4:.3}s with 4 workers, speedup {speedup:.2}x (need >= 2.5x; {cores} core(s) available)"),
    )
}

fn cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_ellip")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn pipeline(dir: &Path) -> Vec<u8> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (train, test, run_dir, ev) = (dir.join("train.epd"), dir.join("test.epd"), dir.join("run"), dir.join("eval"));
    cli(&["gen-data", "--family", "poisson", "--contrast", "6e5", "--m", "33", "--s", "24", "--seed", "7", "--out", &s(&train)]);
    cli(&["gen-data", "--m", "33", "--s", "8", "--seed", "7", "--index-offset", "5000", "--split", "test", "--out", &s(&test)]);
    cli(&["train", "--data", &s(&train), "--epochs", "3", "--seed", "11", "--out", &s(&run_dir)]);
    cli(&["eval", "--ckpt", &s(&run_dir.join("best.ivn")), "--data", &s(&test), "--out", &s(&ev)]);
    let mut bytes = fs::read(ev.join("metrics.csv")).unwrap();
    bytes.extend(fs::read(ev.join("histogram.csv")).unwrap());
    bytes
}

fn reproducibility() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    outcome(first == second && !first.is_empty(), format!("gen-data -> train -> eval twice: metric CSVs bit-identical: {}", first == second))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        }
    }
}

fn report(id: &str, name: &str, o: &Outcome, failures: &mut usize) {
    if !o.pass {
        *failures += 1;
    }
    println!("{} criterion {id} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

const SMOKE_EPOCHS: usize = 300;
const SMOKE_LIMIT_S: f64 = 20.0 * 60.0;
const FULL_EPOCHS: usize = 2000;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let full = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let mut failures = 0;
    println!("running acceptance checks");

    report("1", "discretization order", &guarded(discretization_order), &mut failures);
    report("2", "autodiff correctness", &guarded(autodiff_correctness), &mut failures);
    report("3", "adjoint identity", &guarded(adjoint_identity), &mut failures);
    report("4", "POD properties", &guarded(pod_properties), &mut failures);
    report("7", "shared-block parameter economy", &guarded(parameter_economy), &mut failures);
    report("8", "UQ machinery", &guarded(uq_machinery), &mut failures);
    report("10", "performance budget", &guarded(performance), &mut failures);
    report("11", "reproducibility", &guarded(reproducibility), &mut failures);

    if args.iter().any(|a| a == "--quick") {
        println!("SKIP criteria 5, 6, 9 training gates: --quick");
        println!("acceptance: {failures} failing");
        std::process::exit(i32::from(failures > 0));
    }
    let smoke = desk_data(100);
    let h1 = catch_unwind(|| train_and_score(&smoke.train, &smoke.test, LossMode::H1, SMOKE_EPOCHS));
    let h1_ok = h1.as_ref().ok();
    let c5 = match h1_ok {
        Some(r) => training_gate(&smoke, r, SMOKE_EPOCHS, 0.20, Some(SMOKE_LIMIT_S)),
        None => outcome(false, "training panicked"),
    };
    report("5", "training gate (smoke: s = 100, 300 epochs)", &c5, &mut failures);
    let c6 = guarded(|| {
        let (l2, _) = train_and_score(&smoke.train, &smoke.test, LossMode::L2Only, SMOKE_EPOCHS);
        derivative_loss(&h1_ok.expect("H1 run finished").0, &l2)
    });
    report("6", "loss with vs without derivatives (smoke budget)", &c6, &mut failures);
    report("9", "inverse mode (smoke budget)", &guarded(|| inverse_mode(&smoke, SMOKE_EPOCHS)), &mut failures);

    if full {
        let desk = desk_data(500);
        let c5_full = guarded(|| training_gate(&desk, &train_and_score(&desk.train, &desk.test, LossMode::H1, FULL_EPOCHS), FULL_EPOCHS, 0.08, None));
        report("5", "training gate (full: s = 500, 2000 epochs)", &c5_full, &mut failures);
    } else {
        println!("SKIP criterion 5 training gate (full: s = 500, 2000 epochs): hours of CPU time, run with --include-ignored");
    }

    println!("acceptance: {failures} failing");
    if failures > 0 {
        std::process::exit(1);
    }
}
