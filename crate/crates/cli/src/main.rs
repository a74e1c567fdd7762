//! `mcbnav`: train, evaluate, sweep and export collision-budget navigation runs.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for failures while
//! running.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcb_nav::experiment::{
    self, append_curve_rows, eval_checkpoint, eval_run_dir, export_bundle, summary_line, AblationGrid,
    ExperimentConfig, Method, Retention, RunError, ScalarKind, RUN_ROOT_ENV,
};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "mcbnav", version, about = "Collision-budget experiments for mapless navigation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment.
    Train(TrainArgs),
    /// Evaluate a checkpoint or every checkpoint of a run directory.
    Eval(EvalArgs),
    /// Sweep collision budgets and filter thresholds.
    Ablate(AblateArgs),
    /// Collect run directories into one CSV/JSON bundle.
    Export(ExportArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config file (TOML). Flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting profile when no config file is given.
    #[arg(long, default_value = "desk")]
    profile: String,
    #[arg(long)]
    name: Option<String>,
    /// SCR, MCB or MCB-PF.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    k: Option<u32>,
    /// Pose-filter threshold in degrees.
    #[arg(long)]
    tau: Option<f64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    total_steps: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    t_max: Option<u32>,
    /// Builtin map name or map file.
    #[arg(long)]
    map: Option<String>,
    #[arg(long)]
    eval_map: Option<String>,
    /// f32 or f64.
    #[arg(long)]
    scalar: Option<String>,
    /// all, last or none.
    #[arg(long)]
    checkpoints: Option<String>,
    #[arg(long)]
    no_traces: bool,
    /// Directory holding run outputs.
    #[arg(long, env = RUN_ROOT_ENV, default_value = "runs")]
    run_root: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Worker threads; each run stays single-threaded.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Keep finished runs whose config hash matches instead of retraining.
    #[arg(long)]
    reuse: bool,
    /// Print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file to evaluate.
    #[arg(long, conflicts_with = "run_dir", required_unless_present = "run_dir")]
    checkpoint: Option<PathBuf>,
    /// Run directory whose checkpoints are all evaluated.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Config for a lone checkpoint; defaults to the run's own config.toml.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV file the rows are appended to.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON-lines file for per-task trajectories (single checkpoint only).
    #[arg(long)]
    trajectories: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Budgets to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![2u32, 3, 5, 10, 50])]
    ks: Vec<u32>,
    /// Thresholds in degrees; `none` runs without the filter.
    #[arg(long, value_delimiter = ',', default_values_t = ["none".to_string(), "0.5".into(), "1".into(), "2".into(), "3".into(), "10".into()])]
    taus: Vec<String>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    reuse: bool,
}

#[derive(Args)]
struct ExportArgs {
    /// Run directories or roots to scan; defaults to the run root.
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = RUN_ROOT_ENV, default_value = "runs")]
    run_root: PathBuf,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn config_err(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, err: err.into() }
}

fn classify(err: RunError) -> Failure {
    let code = if err.is_config_error() { 2 } else { 3 };
    Failure { code, err: err.into() }
}

fn resolve_config(a: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err(anyhow::anyhow!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text).map_err(config_err)?
        }
        None => ExperimentConfig::profile(&a.profile).map_err(config_err)?,
    };
    if let Some(v) = &a.name {
        cfg.name = v.clone();
    }
    if let Some(v) = a.method {
        cfg.method = v;
    }
    if let Some(v) = a.k {
        cfg.k = v;
    }
    if let Some(v) = a.tau {
        cfg.tau_deg = Some(v);
    }
    if let Some(v) = &a.seeds {
        cfg.seeds = v.clone();
    }
    if let Some(v) = a.total_steps {
        cfg.total_steps = v;
    }
    if let Some(v) = a.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = a.t_max {
        cfg.t_max = v;
    }
    if let Some(v) = &a.map {
        cfg.map = v.clone();
    }
    if let Some(v) = &a.eval_map {
        cfg.eval_map = Some(v.clone());
    }
    if let Some(v) = &a.scalar {
        cfg.scalar = match v.as_str() {
            "f32" => ScalarKind::F32,
            "f64" => ScalarKind::F64,
            other => return Err(config_err(anyhow::anyhow!("unknown scalar '{other}' (expected f32 or f64)"))),
        };
    }
    if let Some(v) = &a.checkpoints {
        cfg.checkpoints = match v.as_str() {
            "all" => Retention::All,
            "last" => Retention::Last,
            "none" => Retention::None,
            other => return Err(config_err(anyhow::anyhow!("unknown checkpoint retention '{other}'"))),
        };
    }
    if a.no_traces {
        cfg.record_traces = false;
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let cfg = resolve_config(&args.cfg)?;
    if args.dry_run {
        print!("{}", cfg.to_toml());
        println!("# config_hash = {}", cfg.config_hash());
        return Ok(());
    }
    let runs = experiment::cmd_train(&cfg, &args.cfg.run_root, args.jobs, args.reuse).map_err(classify)?;
    for r in &runs {
        let last = r.curve.points().last().expect("complete run");
        println!("{} seed {}: {}", r.meta.label, r.meta.seed, summary_line(last.0, &last.1));
    }
    Ok(())
}

fn config_near(checkpoint: &Path) -> Option<PathBuf> {
    checkpoint.ancestors().skip(1).map(|d| d.join("config.toml")).find(|p| p.is_file())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    if let Some(dir) = &args.run_dir {
        let rows = eval_run_dir(dir).map_err(classify)?;
        for r in &rows {
            println!("step {}: SR {:.3}  AV {:.3}  AEL {:.1}  ANS {:.3}", r.step, r.sr, r.av, r.ael, r.ans);
        }
        if let Some(out) = &args.out {
            append_curve_rows(out, &rows).map_err(classify)?;
        }
        return Ok(());
    }
    let ck = args.checkpoint.as_ref().expect("clap enforces one target");
    if !ck.is_file() {
        return Err(Failure { code: 3, err: anyhow::anyhow!("checkpoint {} not found", ck.display()) });
    }
    let cfg_path = args.config.clone().or_else(|| config_near(ck));
    let cfg = match &cfg_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| config_err(anyhow::anyhow!("cannot read {}: {e}", p.display())))?;
            ExperimentConfig::from_toml(&text).map_err(config_err)?
        }
        None => ExperimentConfig::desk(),
    };
    let (step, result) = eval_checkpoint(&cfg, ck, args.trajectories.is_some()).map_err(classify)?;
    println!("{}", summary_line(step, &result.summary));
    if let Some(out) = &args.out {
        let meta = ck
            .ancestors()
            .skip(1)
            .find(|d| d.join("meta.json").is_file())
            .and_then(|d| experiment::run::read_meta(d).ok())
            .unwrap_or_else(|| experiment::RunMeta::new(&cfg, 0));
        append_curve_rows(out, &[experiment::run::curve_row(step, &result, &meta)]).map_err(classify)?;
    }
    if let Some(path) = &args.trajectories {
        let file = std::fs::File::create(path).map_err(|e| Failure { code: 3, err: e.into() })?;
        result
            .write_trajectories_jsonl(std::io::BufWriter::new(file))
            .map_err(|e| Failure { code: 3, err: e.into() })?;
    }
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<(), Failure> {
    let cfg = resolve_config(&args.cfg)?;
    let taus = args
        .taus
        .iter()
        .map(|t| match t.as_str() {
            "none" => Ok(None),
            s => s.parse::<f64>().map(Some).map_err(|_| config_err(anyhow::anyhow!("bad threshold '{s}'"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let grid = AblationGrid { ks: args.ks, taus };
    let report = experiment::cmd_ablate(&cfg, &grid, &args.cfg.run_root, args.jobs, args.reuse).map_err(classify)?;
    println!("threshold  sr_min  sr_max  range");
    for r in &report.ranges {
        println!(
            "{:>9}  {:.3}   {:.3}   {:.3}",
            experiment::ablate::tau_label(r.tau_deg),
            r.sr_min,
            r.sr_max,
            r.sr_range
        );
    }
    Ok(())
}

fn export(args: ExportArgs) -> Result<(), Failure> {
    let inputs = if args.inputs.is_empty() { vec![args.run_root.clone()] } else { args.inputs.clone() };
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let manifest = export_bundle(&refs, &args.out).map_err(classify)?;
    println!("{} series written to {}", manifest.series, args.out.display());
    for g in &manifest.gaps {
        println!("gap: {} {} missing seeds {:?}", g.experiment, g.method, g.missing_seeds);
    }
    for p in &manifest.partial {
        println!("partial: {} seed {} (last step {:?})", p.method, p.seed, p.last_step);
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Export(a) => export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
