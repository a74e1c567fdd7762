//! Budget and filter-threshold sweeps: per-cell final success rate, the
//! success-rate range across budgets for each threshold, and pooled replay
//! statistics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{fmt_tau, ExperimentConfig, Method};
use super::run::{csv_err, io_err, RunError};
use crate::eval::mean_std;
use crate::replay::CollisionStats;

/// The grid of the budget sweep. A `None` threshold means no pose filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub ks: Vec<u32>,
    pub taus: Vec<Option<f64>>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self { ks: vec![2, 3, 5, 10, 50], taus: vec![None, Some(0.5), Some(1.0), Some(2.0), Some(3.0), Some(10.0)] }
    }
}

impl AblationGrid {
    /// Experiment configs for every cell, derived from `base`.
    pub fn cells(&self, base: &ExperimentConfig) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for &tau in &self.taus {
            for &k in &self.ks {
                let method = if tau.is_some() { Method::McbPf } else { Method::Mcb };
                out.push(ExperimentConfig { method, k, tau_deg: tau, ..base.clone() });
            }
        }
        out
    }
}

/// Outcome of one seed in one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRun {
    pub k: u32,
    pub tau_deg: Option<f64>,
    pub seed: u64,
    pub final_sr: f64,
    pub stats: CollisionStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub k: u32,
    pub tau_deg: Option<f64>,
    pub seeds: usize,
    pub final_sr_mean: f64,
    pub final_sr_std: f64,
    /// Pooled over seeds; written separately as replay statistics.
    #[serde(skip)]
    pub stats: CollisionStats,
}

/// Success-rate spread across budgets at one threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeRow {
    pub tau_deg: Option<f64>,
    pub sr_min: f64,
    pub sr_max: f64,
    pub sr_range: f64,
    pub k_at_min: u32,
    pub k_at_max: u32,
}

/// Pooled replay statistics of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayStatsRow {
    pub k: u32,
    pub tau_deg: Option<f64>,
    pub total_generated: u64,
    pub collision_candidates: u64,
    pub candidate_ratio: f64,
    pub candidate_ratio_of_stored: f64,
    pub pf_filtered: u64,
    pub pf_filtered_ratio: f64,
    pub stored_collisions: u64,
    pub stored_total: u64,
    pub stored_collision_ratio: f64,
}

fn tau_key(t: Option<f64>) -> i64 {
    // thresholds are compared in milli-degrees; None sorts first
    t.map(|v| (v * 1000.0).round() as i64).unwrap_or(-1)
}

/// Groups runs by cell, ordered by threshold then budget.
pub fn summarize_cells(runs: &[CellRun]) -> Vec<CellSummary> {
    let mut groups: BTreeMap<(i64, u32), Vec<&CellRun>> = BTreeMap::new();
    for r in runs {
        groups.entry((tau_key(r.tau_deg), r.k)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let srs: Vec<f64> = g.iter().map(|r| r.final_sr).collect();
            let (m, s) = mean_std(&srs);
            let mut stats = CollisionStats::default();
            for r in &g {
                stats.merge(&r.stats);
            }
            CellSummary { k: g[0].k, tau_deg: g[0].tau_deg, seeds: g.len(), final_sr_mean: m, final_sr_std: s, stats }
        })
        .collect()
}

/// `max - min` of the mean final success rate over budgets, per threshold.
pub fn sr_ranges(cells: &[CellSummary]) -> Vec<RangeRow> {
    let mut groups: BTreeMap<i64, Vec<&CellSummary>> = BTreeMap::new();
    for c in cells {
        groups.entry(tau_key(c.tau_deg)).or_default().push(c);
    }
    groups
        .into_values()
        .map(|g| {
            let lo = g.iter().copied().min_by(|a, b| a.final_sr_mean.total_cmp(&b.final_sr_mean)).expect("non-empty");
            let hi = g.iter().copied().max_by(|a, b| a.final_sr_mean.total_cmp(&b.final_sr_mean)).expect("non-empty");
            RangeRow {
                tau_deg: g[0].tau_deg,
                sr_min: lo.final_sr_mean,
                sr_max: hi.final_sr_mean,
                sr_range: hi.final_sr_mean - lo.final_sr_mean,
                k_at_min: lo.k,
                k_at_max: hi.k,
            }
        })
        .collect()
}

pub fn replay_stats_rows(cells: &[CellSummary]) -> Vec<ReplayStatsRow> {
    cells
        .iter()
        .map(|c| {
            let r = c.stats.report();
            ReplayStatsRow {
                k: c.k,
                tau_deg: c.tau_deg,
                total_generated: c.stats.total_generated,
                collision_candidates: c.stats.collision_candidates,
                candidate_ratio: r.candidate_ratio,
                candidate_ratio_of_stored: r.candidate_ratio_of_stored,
                pf_filtered: c.stats.pf_filtered,
                pf_filtered_ratio: r.pf_filtered_ratio,
                stored_collisions: c.stats.stored_collisions,
                stored_total: c.stats.stored_total,
                stored_collision_ratio: r.stored_collision_ratio,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub cells: Vec<CellSummary>,
    pub ranges: Vec<RangeRow>,
    pub replay_stats: Vec<ReplayStatsRow>,
}

impl AblationReport {
    pub fn from_runs(runs: &[CellRun]) -> Self {
        let cells = summarize_cells(runs);
        Self { ranges: sr_ranges(&cells), replay_stats: replay_stats_rows(&cells), cells }
    }

    /// Writes `cells.csv`, `sr_range.csv` and `replay_stats.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_rows(&dir.join("cells.csv"), &self.cells)?;
        write_rows(&dir.join("sr_range.csv"), &self.ranges)?;
        write_rows(&dir.join("replay_stats.csv"), &self.replay_stats)
    }
}

pub(crate) fn write_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Human-readable label for a threshold column.
pub fn tau_label(t: Option<f64>) -> String {
    t.map(|v| format!("{}deg", fmt_tau(v))).unwrap_or_else(|| "none".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(k: u32, tau: Option<f64>, seed: u64, sr: f64) -> CellRun {
        CellRun { k, tau_deg: tau, seed, final_sr: sr, stats: CollisionStats::default() }
    }

    #[test]
    fn range_of_single_cell_is_zero() {
        let rep = AblationReport::from_runs(&[run(2, Some(3.0), 0, 0.7)]);
        assert_eq!(rep.ranges.len(), 1);
        assert_eq!(rep.ranges[0].sr_range, 0.0);
    }

    #[test]
    fn grid_cells() {
        let g = AblationGrid::default();
        let cells = g.cells(&ExperimentConfig::desk());
        assert_eq!(cells.len(), 30);
        assert!(cells.iter().all(|c| c.validate().is_ok()));
        assert_eq!(cells[0].label(), "MCB-K2");
        assert_eq!(cells[29].label(), "MCB-K50-PF10");
    }
}
