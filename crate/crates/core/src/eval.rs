//! Strict-mode evaluation on a fixed task set and learning-curve summaries.
//!
//! Metrics per evaluation: success rate (SR), average linear velocity over all
//! evaluation steps (AV), average episode length over all episodes including
//! failures (AEL), and average navigation score (ANS).

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::NavEnv;
use crate::observation::RawObservation;
use crate::sac::SacLearner;
use crate::world::{sample_scenario, Action, SamplingError, Scenario, ScenarioConfig, SimConfig, WorldMap};
use crate::Real;

/// Navigation score: `1 - 2 T_s / T_max` on success, `-1` otherwise.
pub fn nav_score(success: bool, steps: u32, t_max: u32) -> f64 {
    if success {
        1.0 - 2.0 * steps as f64 / t_max as f64
    } else {
        -1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOutcome {
    Success,
    Collision,
    Timeout,
}

/// Anything that maps an observation to a command.
pub trait Policy<T> {
    fn act(&mut self, obs: &RawObservation<T>) -> Action<T>;
}

impl<T, F: FnMut(&RawObservation<T>) -> Action<T>> Policy<T> for F {
    fn act(&mut self, obs: &RawObservation<T>) -> Action<T> {
        self(obs)
    }
}

/// Deterministic policy: the squashed mean action.
pub struct MeanPolicy<'a, T>(pub &'a SacLearner<T>);

impl<T: Real> Policy<T> for MeanPolicy<'_, T> {
    fn act(&mut self, obs: &RawObservation<T>) -> Action<T> {
        self.0.act_deterministic(obs)
    }
}

/// Stochastic policy with its own generator.
pub struct SampledPolicy<'a, T, R> {
    pub learner: &'a SacLearner<T>,
    pub rng: R,
}

impl<T: Real, R: Rng> Policy<T> for SampledPolicy<'_, T, R> {
    fn act(&mut self, obs: &RawObservation<T>) -> Action<T> {
        self.learner.act(obs, &mut self.rng)
    }
}

/// The fixed evaluation tasks, regenerated identically from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalTaskSet<T> {
    pub map: String,
    pub seed: u64,
    pub tasks: Vec<Scenario<T>>,
}

impl<T: Real> EvalTaskSet<T> {
    pub fn generate(
        map: &WorldMap<T>,
        cfg: &ScenarioConfig<T>,
        seed: u64,
        count: usize,
    ) -> Result<Self, SamplingError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tasks = (0..count).map(|_| sample_scenario(map, cfg, &mut rng)).collect::<Result<_, _>>()?;
        Ok(Self { map: map.name().to_string(), seed, tasks })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: usize,
    pub outcome: TaskOutcome,
    pub steps: u32,
    pub collisions: u32,
    pub score: f64,
    /// Sum of commanded linear velocity over the task's steps.
    pub velocity_sum: f64,
    /// `[x, y, theta]` from the start pose onward; empty unless recorded.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<[f64; 3]>,
}

/// Aggregate metrics of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub sr: f64,
    pub av: f64,
    pub ael: f64,
    pub ans: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub summary: EvalSummary,
    pub tasks: Vec<TaskRecord>,
}

impl EvalResult {
    /// Aggregates per-task records in task order.
    pub fn from_records(tasks: Vec<TaskRecord>) -> Self {
        let n = tasks.len().max(1) as f64;
        let successes = tasks.iter().filter(|r| r.outcome == TaskOutcome::Success).count();
        let total_steps: u64 = tasks.iter().map(|r| r.steps as u64).sum();
        let v_sum: f64 = tasks.iter().map(|r| r.velocity_sum).sum();
        let summary = EvalSummary {
            sr: successes as f64 / n,
            av: if total_steps == 0 { 0.0 } else { v_sum / total_steps as f64 },
            ael: total_steps as f64 / n,
            ans: tasks.iter().map(|r| r.score).sum::<f64>() / n,
        };
        Self { summary, tasks }
    }

    pub fn write_trajectories_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.tasks {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub tasks: usize,
    pub task_seed: u64,
    /// Any collision ends the trial as a failure.
    pub strict: bool,
    /// Sample actions instead of using the policy mean.
    pub sampled: bool,
    pub record_trajectories: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { tasks: 50, task_seed: 20_240_917, strict: true, sampled: false, record_trajectories: false }
    }
}

/// Runs every task once.
///
/// In strict mode the first collision fails the task. Otherwise the robot
/// keeps going from the resolved pose and only success or the horizon ends it.
pub fn run_eval<T: Real, P: Policy<T>>(
    map: &WorldMap<T>,
    sim: &SimConfig<T>,
    tasks: &EvalTaskSet<T>,
    policy: &mut P,
    t_max: u32,
    strict: bool,
    record_trajectories: bool,
) -> EvalResult {
    let mut records = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.tasks.iter().enumerate() {
        let mut env = NavEnv::new(map, sim.clone(), task);
        let mut obs = env.observe();
        let mut trajectory = Vec::new();
        let push_pose = |traj: &mut Vec<[f64; 3]>, env: &NavEnv<T>| {
            if record_trajectories {
                let p = env.pose();
                traj.push([p.x.as_f64(), p.y.as_f64(), p.theta.as_f64()]);
            }
        };
        push_pose(&mut trajectory, &env);
        let (mut steps, mut collisions, mut v_sum) = (0u32, 0u32, 0.0);
        let mut outcome = TaskOutcome::Timeout;
        while steps < t_max {
            let action = policy.act(&obs);
            let step = env.step(action);
            steps += 1;
            v_sum += Action::clamped(action.v, action.omega).v.as_f64();
            push_pose(&mut trajectory, &env);
            obs = step.next_obs;
            if step.outcome.collided {
                collisions += 1;
                if strict {
                    outcome = TaskOutcome::Collision;
                    break;
                }
            } else if step.outcome.goal_reached {
                outcome = TaskOutcome::Success;
                break;
            }
        }
        let success = outcome == TaskOutcome::Success;
        records.push(TaskRecord {
            task: i,
            outcome,
            steps,
            collisions,
            score: nav_score(success, steps, t_max),
            velocity_sum: v_sum,
            trajectory,
        });
    }
    EvalResult::from_records(records)
}

/// First step at which `sr >= threshold`, or `None`.
pub fn steps_to_threshold(points: &[(u64, f64)], threshold: f64) -> Option<u64> {
    points.iter().find(|(_, sr)| *sr >= threshold).map(|(s, _)| *s)
}

#[derive(Debug, PartialEq, thiserror::Error)]
#[error("curve steps must increase strictly: {previous} then {next}")]
pub struct CurveOrderError {
    pub previous: u64,
    pub next: u64,
}

/// Evaluation summaries at increasing training steps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    points: Vec<(u64, EvalSummary)>,
}

impl LearningCurve {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: u64, summary: EvalSummary) -> Result<(), CurveOrderError> {
        if let Some(&(previous, _)) = self.points.last() {
            if step <= previous {
                return Err(CurveOrderError { previous, next: step });
            }
        }
        self.points.push((step, summary));
        Ok(())
    }

    pub fn points(&self) -> &[(u64, EvalSummary)] {
        &self.points
    }

    pub fn success_rates(&self) -> Vec<(u64, f64)> {
        self.points.iter().map(|(s, e)| (*s, e.sr)).collect()
    }

    pub fn steps_to_threshold(&self, threshold: f64) -> Option<u64> {
        steps_to_threshold(&self.success_rates(), threshold)
    }

    pub fn last(&self) -> Option<&EvalSummary> {
        self.points.last().map(|(_, e)| e)
    }
}

/// Mean and population standard deviation. Empty input gives `(NaN, NaN)`.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-step mean and standard deviation of one metric across seeds. Only
/// steps present in every curve are reported.
pub fn seed_band(curves: &[&LearningCurve], metric: impl Fn(&EvalSummary) -> f64) -> Vec<(u64, f64, f64)> {
    let Some(first) = curves.first() else { return Vec::new() };
    first
        .points
        .iter()
        .filter_map(|(step, _)| {
            let vals: Option<Vec<f64>> =
                curves.iter().map(|c| c.points.iter().find(|(s, _)| s == step).map(|(_, e)| metric(e))).collect();
            vals.map(|v| {
                let (m, s) = mean_std(&v);
                (*step, m, s)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{load_map, MapSpec};

    fn empty_map() -> WorldMap<f64> {
        load_map(&MapSpec::builtin("empty").unwrap()).unwrap()
    }

    #[test]
    fn nav_score_cases() {
        assert_eq!(nav_score(true, 100, 200), 0.0);
        assert_eq!(nav_score(true, 50, 200), 0.5);
        assert_eq!(nav_score(false, 7, 200), -1.0);
    }

    #[test]
    fn spinning_policy_times_out() {
        let map = empty_map();
        let tasks = EvalTaskSet::generate(&map, &ScenarioConfig::default(), 3, 5).unwrap();
        let mut spin = |_: &RawObservation<f64>| Action::new(0.0, 1.0);
        let res = run_eval(&map, &SimConfig::default(), &tasks, &mut spin, 200, true, false);
        assert_eq!(res.summary.sr, 0.0);
        assert_eq!(res.summary.ans, -1.0);
        assert_eq!(res.summary.ael, 200.0);
        assert_eq!(res.summary.av, 0.0);
    }

    #[test]
    fn straight_line_oracle_succeeds_on_empty_map() {
        let map = empty_map();
        let tasks = EvalTaskSet::generate(&map, &ScenarioConfig::default(), 4, 20).unwrap();
        let mut steer = |o: &RawObservation<f64>| {
            let w = (2.0 * o.goal_bearing).clamp(-1.5, 1.5);
            let v = if o.goal_bearing.abs() < 0.3 { 0.5 } else { 0.0 };
            Action::new(v, w)
        };
        let res = run_eval(&map, &SimConfig::default(), &tasks, &mut steer, 200, true, true);
        assert_eq!(res.summary.sr, 1.0);
        let r = &res.tasks[0];
        assert_eq!(r.trajectory.len(), r.steps as usize + 1);
    }

    #[test]
    fn aggregation_recount() {
        let rec = |outcome, steps, v: f64| TaskRecord {
            task: 0,
            outcome,
            steps,
            collisions: 0,
            score: nav_score(outcome == TaskOutcome::Success, steps, 200),
            velocity_sum: v,
            trajectory: vec![],
        };
        let mut records: Vec<_> = (0..40).map(|_| rec(TaskOutcome::Success, 50, 20.0)).collect();
        records.extend((0..10).map(|_| rec(TaskOutcome::Collision, 10, 1.0)));
        let res = EvalResult::from_records(records);
        assert_eq!(res.summary.sr, 0.8);
        assert!((res.summary.ans - (40.0 * 0.5 - 10.0) / 50.0).abs() < 1e-15);
        assert!((res.summary.ael - 42.0).abs() < 1e-12);
        assert!((res.summary.av - 810.0 / 2100.0).abs() < 1e-15);
    }

    #[test]
    fn thresholds() {
        assert_eq!(steps_to_threshold(&[(2500, 0.2), (5000, 0.6)], 0.5), Some(5000));
        assert_eq!(steps_to_threshold(&[(1, 0.1), (2, 0.2), (3, 0.3)], 0.5), None);
        assert_eq!(steps_to_threshold(&[(1, 0.6), (2, 0.2), (3, 0.9)], 0.5), Some(1));
    }

    #[test]
    fn curve_rejects_unordered_steps() {
        let mut c = LearningCurve::new();
        c.push(10, EvalSummary::default()).unwrap();
        assert_eq!(c.push(10, EvalSummary::default()), Err(CurveOrderError { previous: 10, next: 10 }));
    }

    #[test]
    fn band_statistics() {
        let mk = |srs: &[f64]| {
            let mut c = LearningCurve::new();
            for (i, &sr) in srs.iter().enumerate() {
                c.push(i as u64 + 1, EvalSummary { sr, ..Default::default() }).unwrap();
            }
            c
        };
        let (a, b) = (mk(&[0.2, 0.4]), mk(&[0.4, 0.4]));
        let band = seed_band(&[&a, &b], |e| e.sr);
        assert!((band[0].1 - 0.3).abs() < 1e-15 && (band[0].2 - 0.1).abs() < 1e-15);
        assert_eq!(band[1].2, 0.0);
    }
}
