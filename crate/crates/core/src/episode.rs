//! Episode boundaries under a collision budget.
//!
//! Each step produces one [`EventKind`]. A [`ResetPolicy`] turns the event and
//! the per-episode counters into a [`StepDirective`]: the terminal flag used
//! for the value target, whether the transition is a post-collision bridge,
//! and whether the rollout continues in the same scene or the environment is
//! globally reset.
//!
//! [`CollisionBudget`] allows up to `K` collisions per episode; collisions
//! before the budget is spent are local terminations. [`SingleCollisionReset`]
//! is the conventional protocol where every collision resets the scene, and
//! it behaves exactly like a budget of one.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::SimOutcome;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Success,
    Collision,
    Timeout,
    None,
}

impl EventKind {
    pub const ALL: [EventKind; 4] = [EventKind::Success, EventKind::Collision, EventKind::Timeout, EventKind::None];

    /// Success and collision end the value recursion; timeout is a truncation.
    pub fn is_terminal(self) -> bool {
        matches!(self, EventKind::Success | EventKind::Collision)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetReason {
    Success,
    BudgetExhausted,
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    ContinueInScene,
    GlobalReset(ResetReason),
}

impl Control {
    pub fn is_reset(self) -> bool {
        matches!(self, Control::GlobalReset(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepDirective {
    /// `d_t`: drop the bootstrapped value in the critic target.
    pub terminal: bool,
    /// First non-collision step after a collision; kept out of replay.
    pub bridge: bool,
    pub control: Control,
}

/// Per-episode counters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeState {
    /// Index of the last processed step; 0 before the first step.
    pub t: u32,
    /// Collisions so far in this episode.
    pub collisions: u32,
    /// Whether the previous step was a collision.
    pub prev_collision: bool,
    /// Identifies the scenario (start, goal, map) the episode runs in.
    pub scenario_id: u64,
}

impl EpisodeState {
    /// Index of the step about to be taken.
    pub fn next_step(&self) -> u32 {
        self.t + 1
    }
}

pub fn begin_episode(scenario_id: u64) -> EpisodeState {
    EpisodeState { t: 0, collisions: 0, prev_collision: false, scenario_id }
}

/// Collision takes precedence over goal entry and over the horizon.
pub fn classify_event<T>(outcome: &SimOutcome<T>, t: u32, t_max: u32) -> EventKind {
    if outcome.collided {
        EventKind::Collision
    } else if outcome.goal_reached {
        EventKind::Success
    } else if t >= t_max {
        EventKind::Timeout
    } else {
        EventKind::None
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BudgetError {
    #[error("collision budget must be at least 1")]
    ZeroBudget,
    #[error("episode horizon must be at least 1 step")]
    ZeroHorizon,
}

pub trait ResetPolicy {
    fn t_max(&self) -> u32;

    /// Processes step `state.next_step()` with the given event.
    fn on_step(&self, state: &EpisodeState, event: EventKind) -> (EpisodeState, StepDirective);
}

/// Multi-collision budget: global reset on success, timeout, or the `K`-th collision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionBudget {
    budget: u32,
    t_max: u32,
}

impl CollisionBudget {
    pub fn new(budget: u32, t_max: u32) -> Result<Self, BudgetError> {
        if budget == 0 {
            return Err(BudgetError::ZeroBudget);
        }
        if t_max == 0 {
            return Err(BudgetError::ZeroHorizon);
        }
        Ok(Self { budget, t_max })
    }

    pub fn budget(&self) -> u32 {
        self.budget
    }
}

impl ResetPolicy for CollisionBudget {
    fn t_max(&self) -> u32 {
        self.t_max
    }

    fn on_step(&self, state: &EpisodeState, event: EventKind) -> (EpisodeState, StepDirective) {
        let t = state.next_step();
        let collided = event == EventKind::Collision;
        let collisions = state.collisions + u32::from(collided);
        let control = if event == EventKind::Success {
            Control::GlobalReset(ResetReason::Success)
        } else if collisions >= self.budget {
            Control::GlobalReset(ResetReason::BudgetExhausted)
        } else if t >= self.t_max || event == EventKind::Timeout {
            Control::GlobalReset(ResetReason::Timeout)
        } else {
            Control::ContinueInScene
        };
        let directive =
            StepDirective { terminal: event.is_terminal(), bridge: state.prev_collision && !collided, control };
        let next = EpisodeState { t, collisions, prev_collision: collided, scenario_id: state.scenario_id };
        (next, directive)
    }
}

/// Conventional protocol: the first collision resets the scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingleCollisionReset {
    t_max: u32,
}

impl SingleCollisionReset {
    pub fn new(t_max: u32) -> Result<Self, BudgetError> {
        if t_max == 0 {
            return Err(BudgetError::ZeroHorizon);
        }
        Ok(Self { t_max })
    }
}

impl ResetPolicy for SingleCollisionReset {
    fn t_max(&self) -> u32 {
        self.t_max
    }

    fn on_step(&self, state: &EpisodeState, event: EventKind) -> (EpisodeState, StepDirective) {
        let t = state.next_step();
        let control = match event {
            EventKind::Success => Control::GlobalReset(ResetReason::Success),
            EventKind::Collision => Control::GlobalReset(ResetReason::BudgetExhausted),
            _ if t >= self.t_max => Control::GlobalReset(ResetReason::Timeout),
            EventKind::Timeout => Control::GlobalReset(ResetReason::Timeout),
            EventKind::None => Control::ContinueInScene,
        };
        let collided = event == EventKind::Collision;
        let directive = StepDirective { terminal: event.is_terminal(), bridge: false, control };
        let next = EpisodeState {
            t,
            collisions: state.collisions + u32::from(collided),
            prev_collision: collided,
            scenario_id: state.scenario_id,
        };
        (next, directive)
    }
}

/// One audited step of an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub episode: u64,
    pub t: u32,
    pub event: EventKind,
    pub terminal: bool,
    pub bridge: bool,
    pub control: Control,
    pub collisions: u32,
    /// Replay decision for the step's transition.
    pub admission: crate::replay::Admission,
}

pub fn write_trace_jsonl<W: Write>(mut out: W, records: &[TraceRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mcb(k: u32) -> CollisionBudget {
        CollisionBudget::new(k, 200).unwrap()
    }

    fn state(c: u32, b: bool) -> EpisodeState {
        EpisodeState { t: 10, collisions: c, prev_collision: b, scenario_id: 1 }
    }

    #[test]
    fn begin_clears_counters() {
        let s = begin_episode(4);
        assert_eq!((s.t, s.collisions, s.prev_collision), (0, 0, false));
        assert_eq!(begin_episode(4), s);
    }

    #[test]
    fn first_collision_is_local() {
        let (s, d) = mcb(2).on_step(&state(0, false), EventKind::Collision);
        assert!(d.terminal && !d.bridge);
        assert_eq!(d.control, Control::ContinueInScene);
        assert_eq!(s.collisions, 1);
        assert!(s.prev_collision);
    }

    #[test]
    fn budget_exhaustion_resets() {
        let (s, d) = mcb(2).on_step(&state(1, true), EventKind::Collision);
        assert!(d.terminal && !d.bridge);
        assert_eq!(d.control, Control::GlobalReset(ResetReason::BudgetExhausted));
        assert_eq!(s.collisions, 2);
    }

    #[test]
    fn success_always_resets() {
        for c in 0..5 {
            let (_, d) = mcb(5).on_step(&state(c, false), EventKind::Success);
            assert!(d.terminal);
            assert_eq!(d.control, Control::GlobalReset(ResetReason::Success));
        }
    }

    #[test]
    fn bridge_after_collision() {
        let (_, d) = mcb(3).on_step(&state(1, true), EventKind::None);
        assert!(d.bridge && !d.terminal);
        assert_eq!(d.control, Control::ContinueInScene);
    }

    #[test]
    fn timeout_is_not_terminal() {
        let p = CollisionBudget::new(3, 5).unwrap();
        let s = EpisodeState { t: 4, collisions: 0, prev_collision: false, scenario_id: 0 };
        let (_, d) = p.on_step(&s, EventKind::Timeout);
        assert!(!d.terminal);
        assert_eq!(d.control, Control::GlobalReset(ResetReason::Timeout));
        // collision on the last step is penalised and still ends the episode
        let (_, d) = p.on_step(&s, EventKind::Collision);
        assert!(d.terminal);
        assert_eq!(d.control, Control::GlobalReset(ResetReason::Timeout));
    }

    #[test]
    fn scr_resets_on_first_collision() {
        let p = SingleCollisionReset::new(200).unwrap();
        let (_, d) = p.on_step(&begin_episode(0), EventKind::Collision);
        assert!(d.control.is_reset());
        let (_, d) = p.on_step(&begin_episode(0), EventKind::Success);
        assert_eq!(d.control, Control::GlobalReset(ResetReason::Success));
    }

    #[test]
    fn classify() {
        use crate::world::{LidarScan, RobotPose};
        let mk = |collided, goal_reached| SimOutcome {
            next_pose: RobotPose::new(0.0f64, 0.0, 0.0),
            collided,
            goal_reached,
            scan: LidarScan { ranges: vec![], max_range: 6.0 },
        };
        assert_eq!(classify_event(&mk(true, false), 3, 200), EventKind::Collision);
        assert_eq!(classify_event(&mk(false, true), 3, 200), EventKind::Success);
        assert_eq!(classify_event(&mk(false, false), 200, 200), EventKind::Timeout);
        assert_eq!(classify_event(&mk(false, false), 3, 200), EventKind::None);
        assert_eq!(classify_event(&mk(true, false), 200, 200), EventKind::Collision);
    }

    #[test]
    fn invalid_budgets() {
        assert_eq!(CollisionBudget::new(0, 10), Err(BudgetError::ZeroBudget));
        assert_eq!(CollisionBudget::new(1, 0), Err(BudgetError::ZeroHorizon));
    }
}
