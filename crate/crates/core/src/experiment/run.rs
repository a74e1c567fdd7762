//! One training run: the collision-budget rollout loop with SAC updates,
//! periodic strict evaluation, checkpoints and run logs.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ConfigError, ExperimentConfig, Method, Retention, ScalarKind};
use crate::env::NavEnv;
use crate::episode::{
    begin_episode, classify_event, BudgetError, CollisionBudget, Control, EventKind, ResetPolicy, SingleCollisionReset,
    TraceRecord,
};
use crate::eval::{run_eval, EvalConfig, EvalResult, EvalTaskSet, LearningCurve, MeanPolicy, SampledPolicy};
use crate::observation::RewardParams;
use crate::replay::{Admission, CollisionStats, PoseFilter, ReplayBuffer, Transition, TransitionMeta};
use crate::sac::checkpoint::{self, CheckpointError};
use crate::sac::{Batch, LearnerError, Losses, SacLearner};
use crate::world::{load_map, sample_scenario, MapError, MapSpec, SamplingError, ScenarioConfig, SimConfig, WorldMap};
use crate::Real;

/// Environment variable naming the directory that holds run outputs.
pub const RUN_ROOT_ENV: &str = "MCBNAV_RUN_ROOT";

/// Independent generator streams derived from a run seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const SCENARIO: u64 = 1;
    pub const POLICY: u64 = 2;
    pub const SAMPLER: u64 = 3;
    pub const UPDATE: u64 = 4;
    pub const EVAL: u64 = 5;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("map '{name}': {source}")]
    Map { name: String, source: MapError },
    #[error("map '{name}' not found as a builtin or a readable file: {source}")]
    MapFile { name: String, source: io::Error },
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv at {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

impl RunError {
    /// Configuration problems, as opposed to failures while running.
    pub fn is_config_error(&self) -> bool {
        matches!(self, RunError::Config(_) | RunError::Map { .. } | RunError::MapFile { .. } | RunError::Budget(_))
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> RunError + '_ {
    move |source| RunError::Csv { path: path.to_path_buf(), source }
}

/// `$MCBNAV_RUN_ROOT`, or `runs` in the working directory.
pub fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn run_dir(root: &Path, cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    root.join(&cfg.name).join(cfg.label()).join(format!("seed-{seed}"))
}

/// A builtin map name or a path to a map file.
pub fn resolve_map(name: &str) -> Result<MapSpec, RunError> {
    if let Some(spec) = MapSpec::builtin(name) {
        return Ok(spec);
    }
    let text = fs::read_to_string(name).map_err(|source| RunError::MapFile { name: name.to_string(), source })?;
    MapSpec::from_toml(&text).map_err(|source| RunError::Map { name: name.to_string(), source })
}

pub fn load_world<T: Real>(name: &str) -> Result<WorldMap<T>, RunError> {
    load_map(&resolve_map(name)?).map_err(|source| RunError::Map { name: name.to_string(), source })
}

/// Re-types an `f64` config as another scalar through its serialized form.
pub fn recast<A: Serialize, B: DeserializeOwned>(a: &A) -> B {
    serde_json::from_value(serde_json::to_value(a).expect("serializes")).expect("same shape")
}

/// Run identity written to `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub experiment: String,
    pub label: String,
    pub method: Method,
    pub k: u32,
    pub tau_deg: Option<f64>,
    pub seed: u64,
    /// Every seed of the experiment this run belongs to.
    pub experiment_seeds: Vec<u64>,
    pub config_hash: String,
    pub code_version: String,
    pub scalar: ScalarKind,
    pub total_steps: u64,
    pub eval_every: u64,
    pub t_max: u32,
    pub complete: bool,
}

impl RunMeta {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Self {
        Self {
            experiment: cfg.name.clone(),
            label: cfg.label(),
            method: cfg.method,
            k: cfg.effective_k(),
            tau_deg: cfg.effective_tau_deg(),
            seed,
            experiment_seeds: cfg.seeds.clone(),
            config_hash: cfg.config_hash(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            scalar: cfg.scalar,
            total_steps: cfg.total_steps,
            eval_every: cfg.eval_every,
            t_max: cfg.t_max,
            complete: false,
        }
    }
}

/// One row of `curve.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: u64,
    pub sr: f64,
    pub av: f64,
    pub ael: f64,
    pub ans: f64,
    pub seed: u64,
    pub method: String,
    pub k: u32,
    pub tau_deg: Option<f64>,
    pub config_hash: String,
}

/// One row of `stats.csv`: cumulative admission counts at a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub step: u64,
    pub total_generated: u64,
    pub collision_candidates: u64,
    pub pf_filtered: u64,
    pub bridge_omitted: u64,
    pub stored_total: u64,
    pub stored_collisions: u64,
    pub candidate_ratio: f64,
    pub candidate_ratio_of_stored: f64,
    pub pf_filtered_ratio: f64,
    pub stored_collision_ratio: f64,
    pub seed: u64,
    pub method: String,
    pub k: u32,
    pub tau_deg: Option<f64>,
    pub config_hash: String,
}

impl StatsRow {
    pub fn new(step: u64, s: &CollisionStats, meta: &RunMeta) -> Self {
        let r = s.report();
        Self {
            step,
            total_generated: s.total_generated,
            collision_candidates: s.collision_candidates,
            pf_filtered: s.pf_filtered,
            bridge_omitted: s.bridge_omitted,
            stored_total: s.stored_total,
            stored_collisions: s.stored_collisions,
            candidate_ratio: r.candidate_ratio,
            candidate_ratio_of_stored: r.candidate_ratio_of_stored,
            pf_filtered_ratio: r.pf_filtered_ratio,
            stored_collision_ratio: r.stored_collision_ratio,
            seed: meta.seed,
            method: meta.label.clone(),
            k: meta.k,
            tau_deg: meta.tau_deg,
            config_hash: meta.config_hash.clone(),
        }
    }

    pub fn counts(&self) -> CollisionStats {
        CollisionStats {
            total_generated: self.total_generated,
            collision_candidates: self.collision_candidates,
            pf_filtered: self.pf_filtered,
            bridge_omitted: self.bridge_omitted,
            stored_total: self.stored_total,
            stored_collisions: self.stored_collisions,
        }
    }
}

/// One row of `steps.csv`. Loss columns are empty before updates begin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: u64,
    pub episode: u64,
    pub t: u32,
    pub event: EventKind,
    pub reward: f64,
    pub admission: Admission,
    pub critic1: Option<f64>,
    pub critic2: Option<f64>,
    pub actor: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub entropy: Option<f64>,
}

pub fn curve_row(step: u64, e: &EvalResult, meta: &RunMeta) -> CurveRow {
    CurveRow {
        step,
        sr: e.summary.sr,
        av: e.summary.av,
        ael: e.summary.ael,
        ans: e.summary.ans,
        seed: meta.seed,
        method: meta.label.clone(),
        k: meta.k,
        tau_deg: meta.tau_deg,
        config_hash: meta.config_hash.clone(),
    }
}

/// Result of a finished run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub meta: RunMeta,
    pub curve: LearningCurve,
    pub stats_history: Vec<(u64, CollisionStats)>,
    pub final_eval: EvalResult,
    pub episodes: u64,
    pub dir: Option<PathBuf>,
}

impl RunOutcome {
    pub fn final_stats(&self) -> CollisionStats {
        self.stats_history.last().map(|(_, s)| *s).unwrap_or_default()
    }
}

struct Logs {
    dir: PathBuf,
    steps: csv::Writer<BufWriter<File>>,
    curve: csv::Writer<BufWriter<File>>,
    stats: csv::Writer<BufWriter<File>>,
    traces: Option<BufWriter<File>>,
    last_checkpoint: Option<PathBuf>,
}

impl Logs {
    fn create(dir: &Path, cfg: &ExperimentConfig, meta: &RunMeta) -> Result<Self, RunError> {
        fs::create_dir_all(dir.join("checkpoints")).map_err(io_err(dir))?;
        write_file(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
        write_meta(dir, meta)?;
        let csv_at = |name: &str| -> Result<csv::Writer<BufWriter<File>>, RunError> {
            let path = dir.join(name);
            let f = File::create(&path).map_err(io_err(&path))?;
            Ok(csv::Writer::from_writer(BufWriter::new(f)))
        };
        let traces = if cfg.record_traces {
            let path = dir.join("traces.jsonl");
            Some(BufWriter::new(File::create(&path).map_err(io_err(&path))?))
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            steps: csv_at("steps.csv")?,
            curve: csv_at("curve.csv")?,
            stats: csv_at("stats.csv")?,
            traces,
            last_checkpoint: None,
        })
    }

    fn flush(&mut self) -> Result<(), RunError> {
        let dir = self.dir.clone();
        self.steps.flush().map_err(io_err(&dir))?;
        self.curve.flush().map_err(io_err(&dir))?;
        self.stats.flush().map_err(io_err(&dir))?;
        if let Some(t) = &mut self.traces {
            t.flush().map_err(io_err(&dir))?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_meta(dir: &Path, meta: &RunMeta) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(meta).expect("meta serializes");
    text.push('\n');
    write_file(&dir.join("meta.json"), text.as_bytes())
}

pub fn read_meta(dir: &Path) -> Result<RunMeta, RunError> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text)
        .map_err(|e| RunError::Io { path, source: io::Error::new(io::ErrorKind::InvalidData, e) })
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("step-{step:07}.json"))
}

/// Trains one seed. With `out` set, writes the run log there.
pub fn train_run(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    match cfg.scalar {
        ScalarKind::F32 => train_generic::<f32>(cfg, seed, out),
        ScalarKind::F64 => train_generic::<f64>(cfg, seed, out),
    }
}

/// Evaluation under the run's configuration.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<T: Real>(
    learner: &SacLearner<T>,
    map: &WorldMap<T>,
    sim: &SimConfig<T>,
    tasks: &EvalTaskSet<T>,
    t_max: u32,
    eval: &EvalConfig,
    rng_seed: (u64, u64),
    record: bool,
) -> EvalResult {
    if eval.sampled {
        let mut policy = SampledPolicy { learner, rng: stream_rng(rng_seed.0 ^ rng_seed.1, streams::EVAL) };
        run_eval(map, sim, tasks, &mut policy, t_max, eval.strict, record)
    } else {
        run_eval(map, sim, tasks, &mut MeanPolicy(learner), t_max, eval.strict, record)
    }
}

fn train_generic<T: Real>(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<RunOutcome, RunError> {
    let map: WorldMap<T> = load_world(&cfg.map)?;
    let eval_map: WorldMap<T> = load_world(cfg.eval_map_name())?;
    let sim: SimConfig<T> = recast(&cfg.sim);
    let scen_cfg: ScenarioConfig<T> = recast(&cfg.scenario);
    let reward_params: RewardParams<T> = recast(&cfg.reward);
    let tasks = EvalTaskSet::generate(&eval_map, &scen_cfg, cfg.eval.task_seed, cfg.eval.tasks)?;

    let policy: Box<dyn ResetPolicy> = match cfg.method {
        Method::Scr => Box::new(SingleCollisionReset::new(cfg.t_max)?),
        _ => Box::new(CollisionBudget::new(cfg.effective_k(), cfg.t_max)?),
    };
    let mut filter = PoseFilter::<T>::from_degrees(cfg.effective_tau_deg());

    let mut init_rng = stream_rng(seed, streams::INIT);
    let mut scen_rng = stream_rng(seed, streams::SCENARIO);
    let mut policy_rng = stream_rng(seed, streams::POLICY);
    let mut sampler_rng = stream_rng(seed, streams::SAMPLER);
    let mut update_rng = stream_rng(seed, streams::UPDATE);

    let state_dim = sim.lidar.beams + 4;
    let mut learner = SacLearner::<T>::new(state_dim, cfg.sac.clone(), &mut init_rng);
    let mut buffer = ReplayBuffer::<T>::new(cfg.replay_capacity);

    let mut meta = RunMeta::new(cfg, seed);
    let mut logs = match out {
        Some(dir) => Some(Logs::create(dir, cfg, &meta)?),
        None => None,
    };

    let mut episode = 0u64;
    let scenario = sample_scenario(&map, &scen_cfg, &mut scen_rng)?;
    let mut env = NavEnv::new(&map, sim.clone(), &scenario);
    let mut obs = env.observe();
    let mut state = begin_episode(episode);

    let mut curve = LearningCurve::new();
    let mut stats_history = Vec::new();
    let mut final_eval = None;
    let warmup = cfg.warmup.max(cfg.sac.batch_size);

    for step in 1..=cfg.total_steps {
        let action = learner.act(&obs, &mut policy_rng);
        let out_step = env.step(action);
        let t = state.next_step();
        let event = classify_event(&out_step.outcome, t, cfg.t_max);
        let reward = out_step.reward(event, &reward_params);
        let (next_state, directive) = policy.on_step(&state, event);
        let admission = filter.admit(event, out_step.heading, directive.bridge);
        let transition = Transition {
            obs,
            action: out_step.action,
            reward,
            next_obs: out_step.next_obs.clone(),
            done: directive.terminal,
            meta: TransitionMeta { event, heading: out_step.heading, episode, bridge: directive.bridge },
        };
        buffer.insert(transition, admission);

        let mut losses: Option<Losses> = None;
        if buffer.len() >= warmup {
            if let Some(sample) = buffer.sample_minibatch(cfg.sac.batch_size, &mut sampler_rng) {
                let batch = Batch::from_transitions(&sample);
                losses = Some(learner.update(&batch, &mut update_rng)?);
            }
        }

        if let Some(logs) = &mut logs {
            let path = logs.dir.join("steps.csv");
            logs.steps
                .serialize(StepRow {
                    step,
                    episode,
                    t,
                    event,
                    reward: reward.as_f64(),
                    admission,
                    critic1: losses.map(|l| l.critic1),
                    critic2: losses.map(|l| l.critic2),
                    actor: losses.map(|l| l.actor),
                    alpha: losses.map(|l| l.alpha),
                    beta: losses.map(|l| l.beta),
                    entropy: losses.map(|l| l.entropy),
                })
                .map_err(csv_err(&path))?;
            if let Some(traces) = &mut logs.traces {
                let rec = TraceRecord {
                    episode,
                    t,
                    event,
                    terminal: directive.terminal,
                    bridge: directive.bridge,
                    control: directive.control,
                    collisions: next_state.collisions,
                    admission,
                };
                serde_json::to_writer(&mut *traces, &rec)
                    .map_err(|e| RunError::Io { path: path.clone(), source: e.into() })?;
                traces.write_all(b"\n").map_err(io_err(&path))?;
            }
        }

        if let Control::GlobalReset(_) = directive.control {
            episode += 1;
            let scenario = sample_scenario(&map, &scen_cfg, &mut scen_rng)?;
            obs = env.reset(&scenario);
            state = begin_episode(episode);
            filter.reset();
        } else {
            obs = out_step.next_obs;
            state = next_state;
        }

        if step % cfg.eval_every == 0 {
            let last = step == cfg.total_steps;
            let record = last || cfg.eval.record_trajectories;
            let result = evaluate(&learner, &eval_map, &sim, &tasks, cfg.t_max, &cfg.eval, (seed, step), record);
            curve.push(step, result.summary).expect("steps increase");
            let stats = *buffer.stats();
            debug_assert!(stats.identities_hold());
            stats_history.push((step, stats));
            tracing::info!(
                label = %meta.label,
                seed,
                step,
                sr = result.summary.sr,
                ans = result.summary.ans,
                episodes = episode,
                alpha = learner.alpha().as_f64(),
                beta = learner.transform.beta().as_f64(),
                "checkpoint"
            );
            if let Some(logs) = &mut logs {
                let cpath = logs.dir.join("curve.csv");
                logs.curve.serialize(curve_row(step, &result, &meta)).map_err(csv_err(&cpath))?;
                let spath = logs.dir.join("stats.csv");
                logs.stats.serialize(StatsRow::new(step, &stats, &meta)).map_err(csv_err(&spath))?;
                if cfg.checkpoints != Retention::None {
                    let ck = checkpoint_path(&logs.dir, step);
                    checkpoint::save(&learner, step, &ck)?;
                    if cfg.checkpoints == Retention::Last {
                        if let Some(prev) = logs.last_checkpoint.replace(ck) {
                            fs::remove_file(&prev).map_err(io_err(&prev))?;
                        }
                    }
                }
                if record {
                    let tpath = logs.dir.join(format!("trajectories-step-{step:07}.jsonl"));
                    let f = File::create(&tpath).map_err(io_err(&tpath))?;
                    let mut w = BufWriter::new(f);
                    result.write_trajectories_jsonl(&mut w).map_err(io_err(&tpath))?;
                    w.flush().map_err(io_err(&tpath))?;
                }
                logs.flush()?;
            }
            if last {
                final_eval = Some(result);
            }
        }
    }

    meta.complete = true;
    let dir = match logs {
        Some(mut logs) => {
            logs.flush()?;
            write_meta(&logs.dir, &meta)?;
            Some(logs.dir)
        }
        None => None,
    };
    Ok(RunOutcome {
        meta,
        curve,
        stats_history,
        final_eval: final_eval.expect("eval_every divides total_steps"),
        episodes: episode,
        dir,
    })
}
