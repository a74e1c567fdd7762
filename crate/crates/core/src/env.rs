//! A single navigation rollout: map, scenario, current pose and last command.

use crate::episode::EventKind;
use crate::observation::{compute_reward, goal_polar, RawObservation, RewardParams};
use crate::world::{
    advance, raycast_scan, Action, LidarScan, RobotPose, Scenario, SimConfig, SimOutcome, Vec2, WorldMap,
};
use crate::Real;

/// What one control period produced.
#[derive(Clone, Debug)]
pub struct EnvStep<T> {
    /// The command as applied, after clamping to the action box.
    pub action: Action<T>,
    pub outcome: SimOutcome<T>,
    /// Heading at the start of the step.
    pub heading: T,
    pub goal_distance_before: T,
    pub goal_distance_after: T,
    pub next_obs: RawObservation<T>,
}

impl<T: Real> EnvStep<T> {
    pub fn reward(&self, event: EventKind, params: &RewardParams<T>) -> T {
        compute_reward(event, self.goal_distance_before, self.goal_distance_after, params)
    }
}

#[derive(Clone, Debug)]
pub struct NavEnv<'m, T> {
    map: &'m WorldMap<T>,
    sim: SimConfig<T>,
    pose: RobotPose<T>,
    goal: Vec2<T>,
    velocity: Action<T>,
    scan: LidarScan<T>,
}

impl<'m, T: Real> NavEnv<'m, T> {
    pub fn new(map: &'m WorldMap<T>, sim: SimConfig<T>, scenario: &Scenario<T>) -> Self {
        let scan = raycast_scan(map, &scenario.start, &sim.lidar);
        Self { map, sim, pose: scenario.start, goal: scenario.goal, velocity: Action::default(), scan }
    }

    /// Moves to a new scenario with the robot at rest.
    pub fn reset(&mut self, scenario: &Scenario<T>) -> RawObservation<T> {
        self.pose = scenario.start;
        self.goal = scenario.goal;
        self.velocity = Action::default();
        self.scan = raycast_scan(self.map, &self.pose, &self.sim.lidar);
        self.observe()
    }

    pub fn observe(&self) -> RawObservation<T> {
        RawObservation::new(&self.scan, &self.pose, self.goal, self.velocity)
    }

    pub fn pose(&self) -> RobotPose<T> {
        self.pose
    }

    pub fn goal(&self) -> Vec2<T> {
        self.goal
    }

    pub fn sim(&self) -> &SimConfig<T> {
        &self.sim
    }

    pub fn map(&self) -> &'m WorldMap<T> {
        self.map
    }

    /// Applies `action` (clamped to the box) for one control period. After a
    /// contact the robot stays at the resolved pose.
    pub fn step(&mut self, action: Action<T>) -> EnvStep<T> {
        let action = Action::clamped(action.v, action.omega);
        let heading = self.pose.theta;
        let (before, _) = goal_polar(&self.pose, self.goal);
        let outcome = advance(self.map, self.pose, action, self.goal, &self.sim);
        self.pose = outcome.next_pose;
        self.velocity = action;
        self.scan = outcome.scan.clone();
        let (after, _) = goal_polar(&self.pose, self.goal);
        EnvStep {
            action,
            outcome,
            heading,
            goal_distance_before: before,
            goal_distance_after: after,
            next_obs: self.observe(),
        }
    }
}
