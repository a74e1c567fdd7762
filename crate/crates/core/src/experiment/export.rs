//! Consolidated CSV/JSON bundle for plotting.
//!
//! Bundle files:
//! - `curves.csv`: every checkpoint row of every run (curve columns).
//! - `bands.csv`: per method and step, mean and standard deviation over seeds.
//! - `thresholds.csv`: first step each run reaches 50%, 70% and 80% SR.
//! - `stats.csv`: final replay statistics per run.
//! - `trajectories.jsonl`: final-checkpoint evaluation trajectories.
//! - `maps.json`: geometry of the evaluation maps.
//! - `manifest.json`: run list, missing seeds and partial runs.
//!
//! Output depends only on the run directories, so re-exporting the same runs
//! gives byte-identical files.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ablate::write_rows;
use super::config::ExperimentConfig;
use super::records::{discover_runs, RunRecord};
use super::run::{io_err, resolve_map, CurveRow, RunError, StatsRow};
use crate::eval::{mean_std, seed_band, steps_to_threshold, EvalSummary, LearningCurve};
use crate::world::MapSpec;

pub const BUNDLE_FORMAT: &str = "mcbnav-bundle";
pub const BUNDLE_VERSION: u32 = 1;
pub const THRESHOLDS: [f64; 3] = [0.5, 0.7, 0.8];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub method: String,
    pub config_hash: String,
    pub step: u64,
    pub seeds: usize,
    pub sr_mean: f64,
    pub sr_std: f64,
    pub av_mean: f64,
    pub av_std: f64,
    pub ael_mean: f64,
    pub ael_std: f64,
    pub ans_mean: f64,
    pub ans_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub method: String,
    pub config_hash: String,
    pub seed: u64,
    pub threshold: f64,
    /// Empty when the run never reached the threshold.
    pub step: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub experiment: String,
    pub method: String,
    pub config_hash: String,
    pub seed: u64,
    pub complete: bool,
    pub last_step: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub experiment: String,
    pub method: String,
    pub config_hash: String,
    pub missing_seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Number of curve series (runs with at least one checkpoint row).
    pub series: usize,
    pub runs: Vec<RunEntry>,
    pub gaps: Vec<Gap>,
    /// Runs that are not complete; their rows are included as far as they go.
    pub partial: Vec<RunEntry>,
    /// Directories with a `meta.json` that could not be read.
    pub unreadable: Vec<String>,
}

/// Exports every run found below the given paths into `out`.
pub fn export_bundle(inputs: &[&Path], out: &Path) -> Result<Manifest, RunError> {
    let mut dirs = Vec::new();
    for p in inputs {
        dirs.extend(discover_runs(p)?);
    }
    dirs.sort();
    dirs.dedup();

    let mut records = Vec::new();
    let mut unreadable = Vec::new();
    for d in &dirs {
        match RunRecord::load(d) {
            Ok(r) => records.push(r),
            Err(e) => {
                tracing::warn!(dir = %d.display(), error = %e, "skipping unreadable run");
                unreadable.push(relative_name(d, inputs));
            }
        }
    }
    let key =
        |r: &RunRecord| (r.meta.experiment.clone(), r.meta.label.clone(), r.meta.config_hash.clone(), r.meta.seed);
    records.sort_by_key(key);

    fs::create_dir_all(out).map_err(io_err(out))?;

    let entry = |r: &RunRecord| RunEntry {
        experiment: r.meta.experiment.clone(),
        method: r.meta.label.clone(),
        config_hash: r.meta.config_hash.clone(),
        seed: r.meta.seed,
        complete: r.is_complete(),
        last_step: r.curve.last().map(|c| c.step),
    };
    let runs: Vec<RunEntry> = records.iter().map(entry).collect();
    let partial: Vec<RunEntry> = runs.iter().filter(|e| !e.complete).cloned().collect();

    // expected seeds come from each experiment's own seed list
    // (experiment, label, hash) -> (expected seeds, present seeds)
    type SeedSets = (BTreeSet<u64>, BTreeSet<u64>);
    let mut groups: BTreeMap<(String, String, String), SeedSets> = BTreeMap::new();
    for r in &records {
        let g =
            groups.entry((r.meta.experiment.clone(), r.meta.label.clone(), r.meta.config_hash.clone())).or_default();
        g.0.extend(r.meta.experiment_seeds.iter().copied());
        if r.is_complete() {
            g.1.insert(r.meta.seed);
        }
    }
    let gaps: Vec<Gap> = groups
        .iter()
        .filter_map(|((experiment, method, hash), (expected, present))| {
            let missing: Vec<u64> = expected.difference(present).copied().collect();
            (!missing.is_empty()).then(|| Gap {
                experiment: experiment.clone(),
                method: method.clone(),
                config_hash: hash.clone(),
                missing_seeds: missing,
            })
        })
        .collect();

    let curves: Vec<CurveRow> = records.iter().flat_map(|r| r.curve.iter().cloned()).collect();
    write_rows(&out.join("curves.csv"), &curves)?;

    let mut bands = Vec::new();
    let mut by_method: BTreeMap<(String, String), Vec<LearningCurve>> = BTreeMap::new();
    for r in &records {
        by_method.entry((r.meta.label.clone(), r.meta.config_hash.clone())).or_default().push(r.learning_curve());
    }
    for ((method, hash), cs) in &by_method {
        let refs: Vec<&LearningCurve> = cs.iter().collect();
        let metric = |f: fn(&EvalSummary) -> f64| seed_band(&refs, f);
        let (sr, av, ael, ans) = (metric(|e| e.sr), metric(|e| e.av), metric(|e| e.ael), metric(|e| e.ans));
        for i in 0..sr.len() {
            bands.push(BandRow {
                method: method.clone(),
                config_hash: hash.clone(),
                step: sr[i].0,
                seeds: cs.len(),
                sr_mean: sr[i].1,
                sr_std: sr[i].2,
                av_mean: av[i].1,
                av_std: av[i].2,
                ael_mean: ael[i].1,
                ael_std: ael[i].2,
                ans_mean: ans[i].1,
                ans_std: ans[i].2,
            });
        }
    }
    write_rows(&out.join("bands.csv"), &bands)?;

    let mut thresholds = Vec::new();
    for r in &records {
        let points: Vec<(u64, f64)> = r.curve.iter().map(|c| (c.step, c.sr)).collect();
        for thr in THRESHOLDS {
            thresholds.push(ThresholdRow {
                method: r.meta.label.clone(),
                config_hash: r.meta.config_hash.clone(),
                seed: r.meta.seed,
                threshold: thr,
                step: steps_to_threshold(&points, thr),
            });
        }
    }
    write_rows(&out.join("thresholds.csv"), &thresholds)?;

    let stats: Vec<StatsRow> = records.iter().filter_map(|r| r.final_stats().cloned()).collect();
    write_rows(&out.join("stats.csv"), &stats)?;

    let mut traj = String::new();
    let mut maps: BTreeMap<String, MapSpec> = BTreeMap::new();
    for r in &records {
        if let Some(path) = r.final_trajectories() {
            let f = fs::File::open(&path).map_err(io_err(&path))?;
            let step = r.curve.last().map(|c| c.step).unwrap_or(0);
            for line in BufReader::new(f).lines() {
                let line = line.map_err(io_err(&path))?;
                let Ok(mut v) = serde_json::from_str::<serde_json::Value>(&line) else { continue };
                if let Some(obj) = v.as_object_mut() {
                    obj.insert("method".into(), r.meta.label.clone().into());
                    obj.insert("seed".into(), r.meta.seed.into());
                    obj.insert("step".into(), step.into());
                }
                traj.push_str(&serde_json::to_string(&v).expect("json value"));
                traj.push('\n');
            }
        }
        let cfg_path = r.dir.join("config.toml");
        if let Ok(text) = fs::read_to_string(&cfg_path) {
            if let Ok(cfg) = ExperimentConfig::from_toml(&text) {
                if let Entry::Vacant(slot) = maps.entry(cfg.eval_map_name().to_string()) {
                    if let Ok(spec) = resolve_map(slot.key()) {
                        slot.insert(spec);
                    }
                }
            }
        }
    }
    let tpath = out.join("trajectories.jsonl");
    fs::write(&tpath, traj).map_err(io_err(&tpath))?;
    let mpath = out.join("maps.json");
    fs::write(&mpath, serde_json::to_string_pretty(&maps).expect("maps serialize") + "\n").map_err(io_err(&mpath))?;

    let manifest = Manifest {
        format: BUNDLE_FORMAT.into(),
        version: BUNDLE_VERSION,
        series: records.iter().filter(|r| !r.curve.is_empty()).count(),
        runs,
        gaps,
        partial,
        unreadable,
    };
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")
        .map_err(io_err(&path))?;
    Ok(manifest)
}

fn relative_name(dir: &Path, roots: &[&Path]) -> String {
    roots.iter().find_map(|r| dir.strip_prefix(r).ok()).unwrap_or(dir).to_string_lossy().into_owned()
}

/// Median of the reached steps and how many runs reached the threshold.
pub fn threshold_median(rows: &[ThresholdRow], method: &str, threshold: f64) -> (Option<f64>, usize) {
    let mut steps: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method && r.threshold == threshold)
        .filter_map(|r| r.step.map(|s| s as f64))
        .collect();
    steps.sort_by(f64::total_cmp);
    let n = steps.len();
    let median = match n {
        0 => None,
        _ if n % 2 == 1 => Some(steps[n / 2]),
        _ => Some(0.5 * (steps[n / 2 - 1] + steps[n / 2])),
    };
    (median, n)
}

/// Mean and standard deviation of a metric over runs at their last checkpoint.
pub fn final_metric(records: &[RunRecord], f: impl Fn(&CurveRow) -> f64) -> (f64, f64) {
    let vals: Vec<f64> = records.iter().filter_map(|r| r.curve.last().map(&f)).collect();
    mean_std(&vals)
}
