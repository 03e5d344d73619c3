//! Implementations of the CLI verbs.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sdegan_core::dataset::{self, DataSource, Dataset, IngestOptions, IngestReport};
use sdegan_core::metrics::{self, kde_curves, EvalOptions, MetricsReport};
use sdegan_core::training::{self, parse_kv, sample_for_evaluation, Checkpoint, TrainConfig};
use sdegan_core::{PathBatch, ProcessKind};

use crate::config::{parse_orders, DataSpec, RunConfig, SimulationSpec};
use crate::output::{check_target, write_json, write_text, RunManifest, Staging};
use crate::{CliError, CliResult, EvaluateArgs, GenDataArgs, IngestArgs, SweepArgs, TrainArgs};

pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const BEST_CHECKPOINT_FILE: &str = "checkpoint_best.json";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "table.csv";
pub const DENSITY_FILE: &str = "density_evolution.csv";
pub const ORDERS_FILE: &str = "mise_vs_order.csv";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";
/// Subdirectory holding a dataset simulated as part of a training run.
pub const DATA_DIR: &str = "data";
/// Evaluation points per density curve.
const DENSITY_POINTS: usize = 128;
/// Spacing, in grid steps, of the density snapshots.
const DENSITY_STRIDE: usize = 10;

pub fn gen_data(args: &GenDataArgs) -> CliResult<RunManifest> {
    let kind: ProcessKind = args.process.parse()?;
    if kind == ProcessKind::Neural {
        return Err(CliError::usage("gen-data simulates gbm, ou, cir or poly"));
    }
    check_target(&args.out.out, args.out.force)?;
    let mut map = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            parse_kv(&text, &path.display().to_string())?
        }
        None => Default::default(),
    };
    // a full run config may be reused here; its training fields are ignored
    TrainConfig::from_map(&mut map)?;
    if let Some(p) = map.remove("process") {
        if p.parse::<ProcessKind>()? != kind {
            return Err(CliError::usage(format!("config process {p} disagrees with the command line ({kind})")));
        }
    }
    let mut sim = SimulationSpec::from_map(kind, &mut map)?;
    if let Some(key) = map.keys().next() {
        return Err(CliError::usage(format!("unknown config field {key}")));
    }
    sim.seed = args.seed.unwrap_or(sim.seed);
    sim.n_train = args.n_train.unwrap_or(sim.n_train);
    sim.n_test = args.n_test.unwrap_or(sim.n_test);
    let ds = simulate(&sim)?;
    let stage = Staging::begin(&args.out.out, args.out.force, "gen-data", args.config.as_deref(), Some(sim.seed))?;
    ds.save(stage.path())?;
    let manifest = stage.commit()?;
    log::info!("wrote {} train and {} test paths to {}", sim.n_train, sim.n_test, args.out.out.display());
    Ok(manifest)
}

fn simulate(sim: &SimulationSpec) -> CliResult<Dataset> {
    Ok(dataset::generate(&sim.process, sim.grid, sim.n_train, sim.n_test, sim.seed, sim.solver)?)
}

/// Per-order results of a training command.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub manifest: RunManifest,
    /// `(hermite order, held-out report of the final sampling generator)`
    pub reports: Vec<(usize, MetricsReport)>,
}

pub fn train(args: &TrainArgs) -> CliResult<TrainSummary> {
    let orders = args.hermite_order.as_deref().map(parse_orders).transpose()?;
    run_training(
        "train",
        &args.config,
        args.data.as_deref(),
        args.seed,
        orders,
        args.workers,
        &args.out.out,
        args.out.force,
    )
}

pub fn sweep(args: &SweepArgs) -> CliResult<TrainSummary> {
    let orders = parse_orders(&args.hermite_order)?;
    run_training(
        "sweep",
        &args.config,
        args.data.as_deref(),
        args.seed,
        Some(orders),
        args.workers,
        &args.out.out,
        args.out.force,
    )
}

#[allow(clippy::too_many_arguments)]
fn run_training(
    command: &str,
    config_path: &Path,
    data_override: Option<&Path>,
    seed: Option<u64>,
    orders: Option<Vec<usize>>,
    workers: usize,
    out: &Path,
    force: bool,
) -> CliResult<TrainSummary> {
    if workers == 0 {
        return Err(CliError::usage("--workers must be positive"));
    }
    check_target(out, force)?;
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let load = |dir: &Path| -> CliResult<(Dataset, String, bool)> {
        let ds = Dataset::load(dir)?;
        let abs = std::fs::canonicalize(dir).map_err(|e| CliError::io(dir, e))?;
        Ok((ds, format!("data = {}", abs.display()), false))
    };
    let (ds, data_line, simulated) = match (data_override, &cfg.data) {
        (Some(dir), _) => load(dir)?,
        (None, DataSpec::Dir(dir)) => load(dir)?,
        (None, DataSpec::Simulate(sim)) => (simulate(sim)?, format!("data = {DATA_DIR}"), true),
        (None, DataSpec::Unset) => {
            return Err(CliError::usage("no data source: set data or process in the config, or pass --data"));
        }
    };
    let stage = Staging::begin(out, force, command, Some(config_path), Some(cfg.train.seed))?;
    if simulated {
        ds.save(&stage.path().join(DATA_DIR))?;
    }
    let reports = match &orders {
        None => {
            let report = train_one(stage.path(), &cfg.train, &ds, &data_line)?;
            vec![(cfg.train.hermite_order, report)]
        }
        Some(orders) => {
            let data_line = if simulated { format!("data = ../{DATA_DIR}") } else { data_line };
            let reports = train_orders(stage.path(), &cfg.train, &ds, &data_line, orders, workers, command, config_path)?;
            let mut csv = String::from("order,mise,td,mse,mmd\n");
            for (n, r) in &reports {
                csv.push_str(&format!("{n},{},{},{},{}\n", r.mise, r.td, r.mse, r.mmd));
            }
            write_text(&stage.path().join(ORDERS_FILE), &csv)?;
            reports
        }
    };
    let manifest = stage.commit()?;
    Ok(TrainSummary { manifest, reports })
}

/// Train on `ds` and write config, log, checkpoints and the held-out report
/// of the final model into `dir`.
fn train_one(dir: &Path, cfg: &TrainConfig, ds: &Dataset, data_line: &str) -> CliResult<MetricsReport> {
    write_text(&dir.join(CONFIG_FILE), &format!("{}{data_line}\n", cfg.to_kv()))?;
    let order = cfg.hermite_order;
    let outcome = training::train(ds, cfg, |r| {
        if let Some(m) = &r.metrics {
            log::info!("order {order} step {}: mise {:.4} td {:.4} mse {:.4} mmd {:.4}", r.step, m.mise, m.td, m.mse, m.mmd);
        }
    })?;
    write_text(&dir.join(LOG_FILE), &outcome.log.to_jsonl(false)?)?;
    outcome.final_checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    if let Some(best) = &outcome.best_checkpoint {
        best.save(&dir.join(BEST_CHECKPOINT_FILE))?;
    }
    let gen = outcome.final_checkpoint.sampling_generator()?;
    let report = training::evaluate_generator(&gen, &ds.test, ds.meta.target_from(), cfg.seed, &cfg.hash())?;
    write_json(&dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// One subdirectory `order_N` per order, trained by up to `workers` threads.
/// Runs share the configuration (seeds included) apart from the order.
#[allow(clippy::too_many_arguments)]
fn train_orders(
    dir: &Path,
    cfg: &TrainConfig,
    ds: &Dataset,
    data_line: &str,
    orders: &[usize],
    workers: usize,
    command: &str,
    config_path: &Path,
) -> CliResult<Vec<(usize, MetricsReport)>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<CliResult<MetricsReport>>>> = Mutex::new((0..orders.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(orders.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&order) = orders.get(i) else { break };
                let result = (|| {
                    let mut run_cfg = cfg.clone();
                    run_cfg.hermite_order = order;
                    run_cfg.validate()?;
                    let sub = dir.join(format!("order_{order}"));
                    std::fs::create_dir_all(&sub).map_err(|e| CliError::io(&sub, e))?;
                    let mut manifest = RunManifest::new(command, Some(config_path), Some(run_cfg.seed), &sub);
                    let report = train_one(&sub, &run_cfg, ds, data_line)?;
                    manifest.finish(&sub)?;
                    Ok(report)
                })();
                results.lock().expect("result slot poisoned")[i] = Some(result);
            });
        }
    });
    let results = results.into_inner().expect("result slot poisoned");
    orders
        .iter()
        .zip(results)
        .map(|(&n, r)| r.expect("every order is run").map(|rep| (n, rep)))
        .collect()
}

/// Outputs of [`evaluate`].
#[derive(Debug, Clone)]
pub struct EvaluateSummary {
    pub manifest: RunManifest,
    pub report: MetricsReport,
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<EvaluateSummary> {
    check_target(&args.out.out, args.out.force)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let ds = Dataset::load(&args.data)?;
    let gen = ckpt.sampling_generator()?;
    if gen.grid != ds.test.grid {
        return Err(CliError::usage(format!(
            "checkpoint grid ({} points, dt {}) differs from dataset grid ({} points, dt {})",
            gen.grid.points(),
            gen.grid.dt,
            ds.test.grid.points(),
            ds.test.grid.dt
        )));
    }
    let target_from = ds.meta.target_from();
    if target_from != ckpt.target_from {
        log::warn!("checkpoint was trained with target window from {}, dataset uses {target_from}", ckpt.target_from);
    }
    let seed = args.seed.unwrap_or(ckpt.config.seed);
    let fake = sample_for_evaluation(&gen, &ds.test, seed)?;
    let opts = EvalOptions {
        target_from,
        ..Default::default()
    };
    let report = metrics::evaluate(&ds.test, &fake, &opts, seed, &ckpt.config_hash)?;
    let stage = Staging::begin(&args.out.out, args.out.force, "evaluate", None, Some(seed))?;
    write_json(&stage.path().join(REPORT_FILE), &report)?;
    let table = format!("{}\n{}\n", MetricsReport::table_header(), report.table_row(&dataset_label(&ds), &args.model));
    write_text(&stage.path().join(TABLE_FILE), &table)?;
    write_text(&stage.path().join(DENSITY_FILE), &density_evolution(&ds.test, &fake, target_from)?)?;
    let manifest = stage.commit()?;
    println!("{table}");
    Ok(EvaluateSummary { manifest, report })
}

fn dataset_label(ds: &Dataset) -> String {
    match &ds.meta.source {
        DataSource::Simulated { process, .. } => process.kind.name().to_string(),
        DataSource::Ingested { file, .. } => Path::new(file)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "ingested".into()),
    }
}

/// Long-format KDE curves `step,time,x,real,fake` at every tenth step of the
/// target window and at its last step.
pub fn density_evolution(real: &PathBatch, fake: &PathBatch, from: usize) -> CliResult<String> {
    let last = real.grid.points() - 1;
    let mut steps: Vec<usize> = (from..=last).step_by(DENSITY_STRIDE).collect();
    if steps.last() != Some(&last) {
        steps.push(last);
    }
    let mut out = String::from("step,time,x,real,fake\n");
    for k in steps {
        let curves = kde_curves(&real.column(k), &fake.column(k), DENSITY_POINTS)?;
        let t = real.grid.time(k);
        for ((x, a), b) in curves.x.iter().zip(&curves.a).zip(&curves.b) {
            out.push_str(&format!("{k},{t},{x},{a},{b}\n"));
        }
    }
    Ok(out)
}

pub fn ingest(args: &IngestArgs) -> CliResult<(RunManifest, IngestReport)> {
    check_target(&args.out.out, args.out.force)?;
    let defaults = IngestOptions::default();
    let opts = IngestOptions {
        schema: args.schema.parse()?,
        missing: args.missing.parse()?,
        window: args.window,
        stride: args.stride,
        test_fraction: args.test_fraction.unwrap_or(defaults.test_fraction),
        standardize: args.standardize,
        dt: args.dt,
    };
    let ds = dataset::ingest_csv(&args.file, &opts)?;
    let report = IngestReport::from_dataset(&ds).cloned().ok_or_else(|| CliError::usage("ingestion produced no report"))?;
    let stage = Staging::begin(&args.out.out, args.out.force, "ingest", None, None)?;
    ds.save(stage.path())?;
    write_json(&stage.path().join(INGEST_REPORT_FILE), &report)?;
    let manifest = stage.commit()?;
    println!(
        "rows read {}, series {}, gaps filled {}, series dropped {}, windows {} train / {} test",
        report.rows_read, report.series_read, report.gaps_filled, report.series_dropped, report.windows_train, report.windows_test
    );
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok((manifest, report))
}

/// Path of the dataset a finished training directory used.
pub fn training_data_dir(run_dir: &Path) -> CliResult<PathBuf> {
    let path = run_dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let map = parse_kv(&text, &path.display().to_string())?;
    let data = map.get("data").ok_or_else(|| CliError::usage(format!("{} has no data entry", path.display())))?;
    Ok(run_dir.join(data))
}
