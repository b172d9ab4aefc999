use std::fs;
use std::path::{Path, PathBuf};

use ellip_core::datagen::{
    build_dataset_with, diagonal_scale_dataset, invert_dataset, make_source, read_dataset, sample_coefficient,
    sidecar_path, write_dataset, BuildOptions, Dataset, DatasetMeta, Sample, Task,
};
use ellip_core::evalsuite::{
    evaluate_network, pod_predictions, qoi_stats, relative_errors, write_histogram_csv, write_metric_csv, write_pgm,
    write_qoi_table, write_summary, QoiSpec,
};
use ellip_core::grid::{discretize, GridField};
use ellip_core::ivnet::{load_model, IvNet, IvNetConfig};
use ellip_core::kv::KeyValues;
use ellip_core::linsolve::solve_system;
use ellip_core::pod::{energy_rank, fit_pod_dataset, load_pod, pod_error_curve, rank_ladder, save_pod, CurvePoint, PodModel};
use ellip_core::problem::{Family, ProblemSpec};
use ellip_core::trainer::{
    append_log, for_task, init_model, load_session, predict, run, save_session, split_validation, Prepared, Session,
    TrainConfig,
};

use crate::manifest::{verify_input, Manifest};
use crate::{CliError, ProblemArgs};

type Result<T> = std::result::Result<T, CliError>;

const MAX_ITER: usize = 200_000;
/// Rows of the random linear functional reported by `uq`.
const QOI_ROWS: usize = 4;
/// Epochs between checkpoints during `train`.
const CHECKPOINT_EVERY: usize = 10;

fn problem_spec(p: &ProblemArgs) -> Result<ProblemSpec> {
    let family: Family = p.family.parse()?;
    let mut spec = ProblemSpec::default_for(family);
    if let Some(c) = p.contrast {
        if family == Family::Darcy {
            return Err(CliError::Usage("--contrast does not apply to darcy".into()));
        }
        spec.contrast = c;
    }
    if let Some(k) = p.kappa_sq {
        if family != Family::Helmholtz {
            return Err(CliError::Usage("--kappa-sq only applies to helmholtz".into()));
        }
        spec.kappa_sq = k;
    }
    spec.validate()?;
    Ok(spec)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    verify_input(path)?;
    Ok(read_dataset(path)?)
}

fn load_network(path: &Path) -> Result<IvNet> {
    verify_input(path)?;
    Ok(load_model(path)?)
}

fn load_basis(path: &Path) -> Result<PodModel> {
    verify_input(path)?;
    Ok(load_pod(path)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn spec_kv(spec: &ProblemSpec, m: usize, tol: f64) -> KeyValues {
    let mut kv = KeyValues::new();
    kv.set("family", spec.family);
    kv.set("contrast", spec.contrast);
    kv.set("kappa_sq", spec.kappa_sq);
    kv.set("m", m);
    kv.set("tol", tol);
    kv
}

#[allow(clippy::too_many_arguments)]
pub fn gen_data(
    p: &ProblemArgs,
    s: usize,
    seed: u64,
    index_offset: u64,
    split: &str,
    scale: bool,
    workers: usize,
    out: &Path,
) -> Result<()> {
    let spec = problem_spec(p)?;
    let opts = BuildOptions { workers, index_offset, split: split.to_string(), max_iter: MAX_ITER };
    let mut ds = build_dataset_with(&spec, s, p.m, seed, p.tol, &opts)?;
    if scale {
        ds = diagonal_scale_dataset(&ds)?;
    }
    write_dataset(out, &ds)?;
    let mut man = Manifest::new("gen-data", Some(seed));
    let mut cfg = spec_kv(&spec, p.m, p.tol);
    cfg.set("s", s);
    cfg.set("index_offset", index_offset);
    cfg.set("split", split);
    cfg.set("scaled", scale);
    man.config(&cfg);
    man.output(out)?;
    man.output(&sidecar_path(out))?;
    man.write(out)?;
    Ok(())
}

pub fn solve(p: &ProblemArgs, seed: u64, index: u64, pgm: bool, out: &Path) -> Result<()> {
    let spec = problem_spec(p)?;
    let m = p.m;
    let coef = sample_coefficient(&spec, m, seed, index)?;
    let zero = GridField::zeros(m)?;
    let (f, g) = make_source(&spec.source, m, Some(&zero))?;
    let (eta, a) = match spec.family {
        Family::Darcy => (zero, coef.clone()),
        _ => (coef.clone(), GridField::constant(m, 1.0)?),
    };
    let g = (spec.family != Family::Darcy).then_some(g);
    let sys = discretize(&spec, &eta, &a, &f, g.as_ref())?;
    let (u, rep) = solve_system(&sys, p.tol, MAX_ITER)?;
    if !rep.converged {
        return Err(ellip_core::Error::NotConverged { iterations: rep.iterations, residual: rep.relative_residual }.into());
    }
    let u = sys.layout.to_field(&u)?;
    create_dir(out)?;
    let ds = Dataset {
        spec: spec.clone(),
        m,
        samples: vec![Sample { coef: coef.clone(), f, u: u.clone() }],
        meta: DatasetMeta { seed, index_offset: index, tol: p.tol, task: Task::Forward, scaled: false, split: "solve".into() },
    };
    let data_path = out.join("solution.epd");
    write_dataset(&data_path, &ds)?;
    let mut report = KeyValues::new();
    report.set("iterations", rep.iterations);
    report.set("relative_residual", rep.relative_residual);
    report.set("wall_time", rep.wall_time);
    report.set("unknowns", sys.layout.n());
    report.set("u_max_abs", u.max_abs());
    let report_path = out.join("report.txt");
    write_text(&report_path, &report.to_text())?;

    let mut man = Manifest::new("solve", Some(seed));
    let mut cfg = spec_kv(&spec, m, p.tol);
    cfg.set("index", index);
    man.config(&cfg);
    let mut outputs = vec![data_path.clone(), sidecar_path(&data_path), report_path];
    if pgm {
        for (name, field) in [("coef.pgm", &coef), ("u.pgm", &u)] {
            let path = out.join(name);
            write_pgm(field, &path)?;
            outputs.push(path);
        }
    }
    for path in &outputs {
        man.output(path)?;
    }
    man.write(out)?;
    Ok(())
}

fn write_curve(points: &[CurvePoint], path: &Path) -> Result<()> {
    let mut s = String::from("r,galerkin_rel_err,projection_rel_err\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.r, p.galerkin, p.projection));
    }
    write_text(path, &s)
}

pub fn pod(data: &Path, test: Option<&Path>, r: Option<usize>, energy: Option<f64>, out: &Path) -> Result<()> {
    if r.is_some() && energy.is_some() {
        return Err(CliError::Usage("give either --r or --energy, not both".into()));
    }
    let train = load_dataset(data)?;
    let model = match (r, energy) {
        (Some(r), _) => fit_pod_dataset(&train, Some(r))?,
        (None, Some(e)) => {
            if !(e > 0.0 && e <= 1.0) {
                return Err(CliError::Usage(format!("--energy must lie in (0, 1], got {e}")));
            }
            let full = fit_pod_dataset(&train, None)?;
            let rank = energy_rank(full.singular_values(), e).min(full.max_rank());
            full.with_rank(rank)?
        }
        (None, None) => fit_pod_dataset(&train, None)?,
    };
    create_dir(out)?;
    let basis_path = out.join("basis.epb");
    save_pod(&basis_path, &model)?;
    let ranks = rank_ladder(model.r());
    let train_curve = out.join("curve_train.csv");
    write_curve(&pod_error_curve(&model, &train, &ranks)?, &train_curve)?;
    let mut outputs = vec![basis_path.clone(), sidecar_path(&basis_path), train_curve];
    let mut man = Manifest::new("pod", None);
    man.input("data", data);
    if let Some(test) = test {
        let test_ds = load_dataset(test)?;
        let path = out.join("curve_test.csv");
        write_curve(&pod_error_curve(&model, &test_ds, &ranks)?, &path)?;
        outputs.push(path);
        man.input("test", test);
    }
    let mut cfg = KeyValues::new();
    cfg.set("r", model.r());
    cfg.set("energy", energy.map_or("default".to_string(), |e| e.to_string()));
    cfg.set("tail_energy", model.tail_energy(model.r()));
    man.config(&cfg);
    for path in &outputs {
        man.output(path)?;
    }
    man.write(out)?;
    Ok(())
}

/// Every key a training config may contain.
fn known_keys() -> Vec<String> {
    let mut kv = KeyValues::new();
    IvNetConfig::new(1, 1, 1.0).to_kv(&mut kv);
    TrainConfig::default().to_kv(&mut kv);
    kv.keys().map(str::to_string).collect()
}

fn parse_set(entry: &str) -> Result<(String, String)> {
    entry
        .split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{entry}'")))
}

/// Config file entries, then `--set` overrides, then the dedicated flags.
fn training_kv(config: Option<&Path>, set: &[String], epochs: Option<usize>, seed: Option<u64>) -> Result<KeyValues> {
    let mut kv = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            KeyValues::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => KeyValues::new(),
    };
    for entry in set {
        let (k, v) = parse_set(entry)?;
        kv.set(&k, v);
    }
    if let Some(e) = epochs {
        kv.set("epochs", e);
    }
    if let Some(s) = seed {
        kv.set("seed", s);
    }
    let known = known_keys();
    if let Some(bad) = kv.keys().find(|k| !known.iter().any(|n| n == k)) {
        return Err(CliError::Usage(format!("unknown config key '{bad}'")));
    }
    Ok(kv)
}

fn usage(e: ellip_core::Error) -> CliError {
    match e {
        ellip_core::Error::Format(msg) => CliError::Usage(format!("bad config: {msg}")),
        e => e.into(),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    config: Option<&Path>,
    data: &Path,
    val: Option<&Path>,
    set: &[String],
    epochs: Option<usize>,
    seed: Option<u64>,
    resume: bool,
    out: &Path,
) -> Result<()> {
    let mut kv = training_kv(config, set, epochs, seed)?;
    let full = load_dataset(data)?;
    if kv.get_str("task").is_none() {
        kv.set("task", full.meta.task);
    }
    let net_cfg = IvNetConfig::from_kv(&kv).map_err(usage)?;
    let cfg = TrainConfig::from_kv(&kv).map_err(usage)?;
    let full = for_task(&full, cfg.task);
    let (train_ds, val_ds) = match val {
        Some(path) => (full, for_task(&load_dataset(path)?, cfg.task)),
        None => split_validation(&full, cfg.val_fraction, cfg.seed),
    };
    let log_path = out.join("log.csv");
    let mut session = if resume {
        let session = load_session(out)?;
        if session.model.config() != &net_cfg {
            return Err(ellip_core::Error::ConfigMismatch("saved network differs from the requested architecture".into()).into());
        }
        session
    } else {
        create_dir(out)?;
        if log_path.exists() {
            fs::remove_file(&log_path).map_err(|e| CliError::io(&log_path, e))?;
        }
        Session::new(init_model(net_cfg, &train_ds, cfg.seed)?, &cfg)
    };
    let tp = Prepared::new(&session.model, &train_ds)?;
    let vp = Prepared::new(&session.model, &val_ds)?;
    while session.state.epoch < cfg.epochs {
        let until = (session.state.epoch + CHECKPOINT_EVERY).min(cfg.epochs);
        let mut log_err = None;
        run(&mut session, &tp, &vp, &cfg, until, &mut |r| {
            if let Err(e) = append_log(&log_path, r) {
                log_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = log_err {
            return Err(e.into());
        }
        save_session(&session, out)?;
    }
    save_session(&session, out)?;

    let mut snapshot = KeyValues::new();
    session.model.config().to_kv(&mut snapshot);
    cfg.to_kv(&mut snapshot);
    let snapshot_path = out.join("config.cfg");
    write_text(&snapshot_path, &snapshot.to_text())?;

    let mut man = Manifest::new("train", Some(cfg.seed));
    man.config(&snapshot);
    man.input("data", data);
    if let Some(v) = val {
        man.input("val", v);
    }
    let mut summary = KeyValues::new();
    summary.set("best_epoch", session.state.best_epoch);
    summary.set("best_val_loss", session.state.best_val);
    summary.set("skipped_batches", session.state.skipped_batches);
    summary.set("num_params", session.model.num_params());
    man.section("result", &summary);
    for name in ["best.ivn", "last.ivn", "state.ets", "log.csv", "config.cfg"] {
        let path = out.join(name);
        if path.exists() {
            man.output(&path)?;
        }
    }
    man.write(out)?;
    Ok(())
}

fn dump_fields(dir: &Path, rows: &[(String, &GridField)], outputs: &mut Vec<PathBuf>) -> Result<()> {
    for (name, field) in rows {
        let path = dir.join(name);
        write_pgm(field, &path)?;
        outputs.push(path);
    }
    Ok(())
}

pub fn eval(ckpt: Option<&Path>, pod: Option<&Path>, data: &Path, dump: usize, batch_size: usize, out: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let mut man = Manifest::new("eval", None);
    man.input("data", data);
    create_dir(out)?;
    let mut outputs = Vec::new();
    let n_dump = dump.min(ds.len());
    let (report, label) = match (ckpt, pod) {
        (Some(path), None) => {
            let model = load_network(path)?;
            man.input("ckpt", path);
            let ds = for_task(&ds, model.task);
            let report = evaluate_network(&model, &ds, batch_size)?;
            if n_dump > 0 {
                let preds = predict(&model, &ds.select(&(0..n_dump).collect::<Vec<_>>()), batch_size)?;
                for (i, p) in preds.into_iter().enumerate() {
                    let (truth, input) = match model.task {
                        Task::Forward => (&ds.samples[i].u, &ds.samples[i].coef),
                        Task::Inverse => (&ds.samples[i].coef, &ds.samples[i].u),
                    };
                    let pred = GridField::new(ds.m, p)?;
                    dump_fields(
                        out,
                        &[(format!("{i:04}_input.pgm"), input), (format!("{i:04}_truth.pgm"), truth), (format!("{i:04}_pred.pgm"), &pred)],
                        &mut outputs,
                    )?;
                }
            }
            let label = match model.task {
                Task::Forward => "u",
                Task::Inverse => "log_rescaled_coef",
            };
            (report, label)
        }
        (None, Some(path)) => {
            let model = load_basis(path)?;
            man.input("pod", path);
            if ds.meta.task != Task::Forward {
                return Err(CliError::Usage("POD evaluation needs a forward dataset".into()));
            }
            let preds = pod_predictions(&model, &ds)?;
            let truths: Vec<GridField> = ds.samples.iter().map(|s| s.u.clone()).collect();
            let report = relative_errors(&preds, &truths)?;
            for i in 0..n_dump {
                dump_fields(
                    out,
                    &[
                        (format!("{i:04}_input.pgm"), &ds.samples[i].coef),
                        (format!("{i:04}_truth.pgm"), &truths[i]),
                        (format!("{i:04}_pred.pgm"), &preds[i]),
                    ],
                    &mut outputs,
                )?;
            }
            (report, "u")
        }
        _ => return Err(CliError::Usage("give exactly one of --ckpt or --pod".into())),
    };
    let metrics = out.join("metrics.csv");
    let hist = out.join("histogram.csv");
    let summary = out.join("summary.txt");
    write_metric_csv(&report, &metrics)?;
    write_histogram_csv(&report, &hist)?;
    write_summary(&report, label, &summary)?;
    outputs.extend([metrics, hist, summary]);
    let mut cfg = KeyValues::new();
    cfg.set("batch_size", batch_size);
    cfg.set("dump", n_dump);
    man.config(&cfg);
    for path in &outputs {
        man.output(path)?;
    }
    man.write(out)?;
    Ok(())
}

pub fn uq(data: &Path, ckpt: Option<&Path>, pod: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    if ds.meta.task != Task::Forward {
        return Err(CliError::Usage("uq needs a forward dataset".into()));
    }
    let mut man = Manifest::new("uq", Some(seed));
    man.input("data", data);
    let mut sources: Vec<(String, Vec<GridField>)> = vec![("exact".into(), ds.samples.iter().map(|s| s.u.clone()).collect())];
    if let Some(path) = ckpt {
        let model = load_network(path)?;
        if model.task != Task::Forward {
            return Err(CliError::Usage("uq needs a forward network".into()));
        }
        man.input("ckpt", path);
        let preds = predict(&model, &ds, 8)?;
        sources.push(("network".into(), preds.into_iter().map(|p| GridField::new(ds.m, p)).collect::<std::result::Result<_, _>>()?));
    }
    if let Some(path) = pod {
        let model = load_basis(path)?;
        man.input("pod", path);
        sources.push(("pod".into(), pod_predictions(&model, &ds)?));
    }
    let qois = [
        QoiSpec::L2NormOfU,
        QoiSpec::L1NormOfU,
        QoiSpec::SumAbsDxU,
        QoiSpec::gaussian(QOI_ROWS, ds.m * ds.m, seed),
    ];
    let mut rows = Vec::new();
    for (label, fields) in &sources {
        for q in &qois {
            rows.push((label.clone(), q.clone(), qoi_stats(fields, q)?));
        }
    }
    create_dir(out)?;
    let table = out.join("qoi.csv");
    write_qoi_table(&rows, &table)?;
    man.output(&table)?;
    man.write(out)?;
    Ok(())
}

pub fn invert(data: &Path, out: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let inv = invert_dataset(&ds);
    write_dataset(out, &inv)?;
    let mut man = Manifest::new("invert", None);
    man.input("data", data);
    let mut cfg = KeyValues::new();
    cfg.set("task", inv.meta.task);
    man.config(&cfg);
    man.output(out)?;
    man.output(&sidecar_path(out))?;
    man.write(out)?;
    Ok(())
}
