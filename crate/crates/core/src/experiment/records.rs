//! Reading finished (or partial) run directories back.

use std::fs;
use std::path::{Path, PathBuf};

use super::run::{csv_err, io_err, read_meta, CurveRow, RunError, RunMeta, StatsRow};
use crate::eval::{EvalSummary, LearningCurve};

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub meta: RunMeta,
    pub curve: Vec<CurveRow>,
    pub stats: Vec<StatsRow>,
}

impl RunRecord {
    pub fn load(dir: &Path) -> Result<Self, RunError> {
        let meta = read_meta(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            curve: read_csv(&dir.join("curve.csv"))?,
            stats: read_csv(&dir.join("stats.csv"))?,
        })
    }

    /// Complete runs have their final checkpoint row.
    pub fn is_complete(&self) -> bool {
        self.meta.complete && self.curve.last().map(|r| r.step) == Some(self.meta.total_steps)
    }

    pub fn learning_curve(&self) -> LearningCurve {
        let mut c = LearningCurve::new();
        for r in &self.curve {
            // rows come from an append-only log; a repeated step would be a corrupt file
            let _ = c.push(r.step, EvalSummary { sr: r.sr, av: r.av, ael: r.ael, ans: r.ans });
        }
        c
    }

    pub fn final_sr(&self) -> Option<f64> {
        self.curve.last().map(|r| r.sr)
    }

    pub fn final_stats(&self) -> Option<&StatsRow> {
        self.stats.last()
    }

    /// Path of the last trajectory dump, if any.
    pub fn final_trajectories(&self) -> Option<PathBuf> {
        let step = self.curve.last()?.step;
        let p = self.dir.join(format!("trajectories-step-{step:07}.jsonl"));
        p.exists().then_some(p)
    }
}

pub fn read_csv<R: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<R>, RunError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    rdr.deserialize().collect::<Result<Vec<R>, _>>().map_err(csv_err(path))
}

/// Every directory below `root` (inclusive) that holds a `meta.json`, sorted.
pub fn discover_runs(root: &Path) -> Result<Vec<PathBuf>, RunError> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join("meta.json").is_file() {
            found.push(dir);
            continue;
        }
        let Ok(entries) = fs::read_dir(&dir) else { continue };
        for entry in entries {
            let entry = entry.map_err(io_err(&dir))?;
            if entry.file_type().map_err(io_err(&dir))?.is_dir() {
                stack.push(entry.path());
            }
        }
    }
    found.sort();
    Ok(found)
}
