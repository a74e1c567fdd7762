//! Experiment orchestration: configuration, training runs, checkpoint
//! evaluation, ablation sweeps and the plotting bundle.
//!
//! Randomness for a run flows from its seed through fixed generator streams
//! (see [`run::streams`]): network initialization, scenario sampling, policy
//! sampling, minibatch sampling and update noise are independent, so changing
//! one consumer never shifts the others. The evaluation task set comes from
//! its own seed and is shared by every method and checkpoint.

pub mod ablate;
pub mod config;
pub mod export;
pub mod records;
pub mod run;

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub use ablate::{AblationGrid, AblationReport, CellRun};
pub use config::{ConfigError, ExperimentConfig, Method, Retention, ScalarKind};
pub use export::{export_bundle, Manifest};
pub use records::RunRecord;
pub use run::{run_dir, run_root, train_run, CurveRow, RunError, RunMeta, RunOutcome, StatsRow, RUN_ROOT_ENV};

use crate::eval::{EvalResult, EvalSummary, EvalTaskSet, LearningCurve};
use crate::replay::CollisionStats;
use crate::sac::checkpoint;
use crate::world::{ScenarioConfig, SimConfig};
use crate::Real;
use run::{csv_err, io_err, load_world, recast};

/// What later analysis needs from a run, whether freshly trained or reloaded.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub meta: RunMeta,
    pub curve: LearningCurve,
    pub final_stats: CollisionStats,
    pub dir: Option<PathBuf>,
}

impl RunSummary {
    pub fn final_sr(&self) -> f64 {
        self.curve.last().map(|e| e.sr).unwrap_or(f64::NAN)
    }
}

impl From<RunOutcome> for RunSummary {
    fn from(o: RunOutcome) -> Self {
        let final_stats = o.final_stats();
        Self { meta: o.meta, curve: o.curve, final_stats, dir: o.dir }
    }
}

impl From<RunRecord> for RunSummary {
    fn from(r: RunRecord) -> Self {
        let curve = r.learning_curve();
        let final_stats = r.final_stats().map(StatsRow::counts).unwrap_or_default();
        Self { meta: r.meta, curve, final_stats, dir: Some(r.dir) }
    }
}

/// Trains `seed` into its run directory, or reloads it when `reuse` is set
/// and a complete run with the same config hash is already there.
pub fn train_or_reuse(cfg: &ExperimentConfig, seed: u64, root: &Path, reuse: bool) -> Result<RunSummary, RunError> {
    let dir = run_dir(root, cfg, seed);
    if reuse {
        if let Ok(rec) = RunRecord::load(&dir) {
            if rec.is_complete() && rec.meta.config_hash == cfg.config_hash() {
                tracing::info!(dir = %dir.display(), "reusing finished run");
                return Ok(rec.into());
            }
        }
    }
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
    }
    Ok(train_run(cfg, seed, Some(&dir))?.into())
}

/// Runs `jobs` in order on up to `workers` threads; results keep job order.
pub fn run_parallel<J: Sync, R: Send>(
    jobs: &[J],
    workers: usize,
    f: impl Fn(&J) -> Result<R, RunError> + Sync,
) -> Result<Vec<R>, RunError> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R, RunError>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("slot lock").expect("job ran")).collect()
}

/// Trains every seed of `cfg` under `root`.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    root: &Path,
    workers: usize,
    reuse: bool,
) -> Result<Vec<RunSummary>, RunError> {
    cfg.validate()?;
    run_parallel(&cfg.seeds, workers, |&seed| train_or_reuse(cfg, seed, root, reuse))
}

/// Evaluates one checkpoint file under `cfg`'s map, task set and horizon.
pub fn eval_checkpoint(cfg: &ExperimentConfig, path: &Path, record: bool) -> Result<(u64, EvalResult), RunError> {
    match checkpoint::peek_scalar(path)?.as_str() {
        "f32" => eval_checkpoint_generic::<f32>(cfg, path, record),
        _ => eval_checkpoint_generic::<f64>(cfg, path, record),
    }
}

fn eval_checkpoint_generic<T: Real>(
    cfg: &ExperimentConfig,
    path: &Path,
    record: bool,
) -> Result<(u64, EvalResult), RunError> {
    let restored = checkpoint::load::<T>(path)?;
    let map = load_world::<T>(cfg.eval_map_name())?;
    let sim: SimConfig<T> = recast(&cfg.sim);
    let scen: ScenarioConfig<T> = recast(&cfg.scenario);
    let tasks = EvalTaskSet::generate(&map, &scen, cfg.eval.task_seed, cfg.eval.tasks)?;
    let seed = path_seed(path).unwrap_or(0);
    let result =
        run::evaluate(&restored.learner, &map, &sim, &tasks, cfg.t_max, &cfg.eval, (seed, restored.step), record);
    Ok((restored.step, result))
}

fn path_seed(path: &Path) -> Option<u64> {
    path.ancestors().find_map(|p| p.file_name()?.to_str()?.strip_prefix("seed-")?.parse().ok())
}

/// Checkpoint files of a run directory in step order.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let ck = dir.join("checkpoints");
    let mut out: Vec<PathBuf> = fs::read_dir(&ck)
        .map_err(io_err(&ck))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    out.sort();
    Ok(out)
}

/// Re-evaluates every checkpoint of a run directory with its stored config.
pub fn eval_run_dir(dir: &Path) -> Result<Vec<CurveRow>, RunError> {
    let meta = run::read_meta(dir)?;
    let cfg_path = dir.join("config.toml");
    let text = fs::read_to_string(&cfg_path).map_err(io_err(&cfg_path))?;
    let cfg = ExperimentConfig::from_toml(&text)?;
    list_checkpoints(dir)?
        .iter()
        .map(|p| eval_checkpoint(&cfg, p, false).map(|(step, res)| run::curve_row(step, &res, &meta)))
        .collect()
}

/// Appends rows to a curve CSV, writing the header when the file is new.
pub fn append_curve_rows(path: &Path, rows: &[CurveRow]) -> Result<(), RunError> {
    let fresh = !path.exists() || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Trains (or reuses) every cell and seed of the grid and writes the summary
/// tables to `<root>/<name>/ablation`.
pub fn cmd_ablate(
    base: &ExperimentConfig,
    grid: &AblationGrid,
    root: &Path,
    workers: usize,
    reuse: bool,
) -> Result<AblationReport, RunError> {
    let cells = grid.cells(base);
    for c in &cells {
        c.validate()?;
    }
    let jobs: Vec<(&ExperimentConfig, u64)> =
        cells.iter().flat_map(|c| base.seeds.iter().map(move |&s| (c, s))).collect();
    let runs = run_parallel(&jobs, workers, |&(c, s)| {
        let summary = train_or_reuse(c, s, root, reuse)?;
        Ok(CellRun {
            k: c.effective_k(),
            tau_deg: c.effective_tau_deg(),
            seed: s,
            final_sr: summary.final_sr(),
            stats: summary.final_stats,
        })
    })?;
    let report = AblationReport::from_runs(&runs);
    report.write(&root.join(&base.name).join("ablation"))?;
    Ok(report)
}

/// Summary of an evaluation for printing.
pub fn summary_line(step: u64, s: &EvalSummary) -> String {
    format!("step {step}: SR {:.3}  AV {:.3}  AEL {:.1}  ANS {:.3}", s.sr, s.av, s.ael, s.ans)
}
