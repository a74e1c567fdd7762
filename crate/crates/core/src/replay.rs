//! Collision-aware replay construction.
//!
//! Every generated transition goes through [`PoseFilter::admit`] before it
//! reaches the buffer. Bridge transitions (the first non-collision step after
//! a local collision) are omitted. With the pose filter enabled, a collision
//! whose heading differs from the previous collision candidate of the same
//! episode by less than `tau` is dropped as redundant. [`CollisionStats`]
//! counts every decision.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::episode::EventKind;
use crate::observation::RawObservation;
use crate::world::Action;
use crate::Real;

/// Wrapped absolute heading change, in `[0, pi]`.
#[inline]
pub fn pose_delta<T: Real>(theta: T, prev: T) -> T {
    let d = theta - prev;
    d.sin().atan2(d.cos()).abs()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Admission {
    Store,
    OmitBridge,
    OmitPoseFilter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseFilter<T> {
    pub enabled: bool,
    /// Radians.
    pub tau: T,
    prev_collision_heading: Option<T>,
}

impl<T: Real> PoseFilter<T> {
    pub fn new(enabled: bool, tau: T) -> Self {
        Self { enabled, tau, prev_collision_heading: None }
    }

    pub fn disabled() -> Self {
        Self::new(false, T::zero())
    }

    pub fn from_degrees(tau_deg: Option<f64>) -> Self {
        match tau_deg {
            Some(deg) => Self::new(true, T::lit(deg.to_radians())),
            None => Self::disabled(),
        }
    }

    /// Forgets the reference heading; call on every global reset.
    pub fn reset(&mut self) {
        self.prev_collision_heading = None;
    }

    pub fn reference_heading(&self) -> Option<T> {
        self.prev_collision_heading
    }

    /// Decides whether a transition enters replay.
    ///
    /// `heading` is the robot heading at the step that produced the event.
    /// Every collision candidate, stored or filtered, becomes the new reference.
    pub fn admit(&mut self, event: EventKind, heading: T, bridge: bool) -> Admission {
        if bridge {
            return Admission::OmitBridge;
        }
        if event != EventKind::Collision {
            return Admission::Store;
        }
        let previous = self.prev_collision_heading.replace(heading);
        match previous {
            Some(prev) if self.enabled && pose_delta(heading, prev) < self.tau => Admission::OmitPoseFilter,
            _ => Admission::Store,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMeta<T> {
    pub event: EventKind,
    /// Heading at the step that produced the transition.
    pub heading: T,
    pub episode: u64,
    pub bridge: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition<T> {
    pub obs: RawObservation<T>,
    pub action: Action<T>,
    pub reward: T,
    pub next_obs: RawObservation<T>,
    pub done: bool,
    pub meta: TransitionMeta<T>,
}

/// Converts a transition between scalar types.
pub fn cast_transition<A: Real, B: Real>(t: &Transition<A>) -> Transition<B> {
    let c = |x: A| B::lit(x.as_f64());
    let obs = |o: &RawObservation<A>| RawObservation {
        ranges: o.ranges.iter().map(|&r| c(r)).collect(),
        goal_distance: c(o.goal_distance),
        goal_bearing: c(o.goal_bearing),
        v: c(o.v),
        omega: c(o.omega),
    };
    Transition {
        obs: obs(&t.obs),
        action: Action { v: c(t.action.v), omega: c(t.action.omega) },
        reward: c(t.reward),
        next_obs: obs(&t.next_obs),
        done: t.done,
        meta: TransitionMeta {
            event: t.meta.event,
            heading: c(t.meta.heading),
            episode: t.meta.episode,
            bridge: t.meta.bridge,
        },
    }
}

/// Cumulative admission counts since the buffer was created.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionStats {
    pub total_generated: u64,
    pub collision_candidates: u64,
    pub pf_filtered: u64,
    pub bridge_omitted: u64,
    pub stored_total: u64,
    pub stored_collisions: u64,
}

impl CollisionStats {
    pub fn record(&mut self, event: EventKind, admission: Admission) {
        self.total_generated += 1;
        if event == EventKind::Collision {
            self.collision_candidates += 1;
        }
        match admission {
            Admission::Store => {
                self.stored_total += 1;
                if event == EventKind::Collision {
                    self.stored_collisions += 1;
                }
            }
            Admission::OmitBridge => self.bridge_omitted += 1,
            Admission::OmitPoseFilter => self.pf_filtered += 1,
        }
    }

    pub fn merge(&mut self, other: &CollisionStats) {
        self.total_generated += other.total_generated;
        self.collision_candidates += other.collision_candidates;
        self.pf_filtered += other.pf_filtered;
        self.bridge_omitted += other.bridge_omitted;
        self.stored_total += other.stored_total;
        self.stored_collisions += other.stored_collisions;
    }

    pub fn identities_hold(&self) -> bool {
        self.stored_collisions + self.pf_filtered == self.collision_candidates
            && self.stored_total + self.pf_filtered + self.bridge_omitted == self.total_generated
    }

    pub fn report(&self) -> StatsReport {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        StatsReport {
            candidate_ratio: ratio(self.collision_candidates, self.total_generated),
            candidate_ratio_of_stored: ratio(self.collision_candidates, self.stored_total),
            pf_filtered_ratio: ratio(self.pf_filtered, self.collision_candidates),
            stored_collision_ratio: ratio(self.stored_collisions, self.stored_total),
        }
    }
}

/// Fractions in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    /// Collision candidates over all generated transitions.
    pub candidate_ratio: f64,
    /// Collision candidates over stored transitions (alternative denominator).
    pub candidate_ratio_of_stored: f64,
    /// Filtered collisions over collision candidates.
    pub pf_filtered_ratio: f64,
    /// Stored collisions over stored transitions.
    pub stored_collision_ratio: f64,
}

/// FIFO ring of transitions with uniform minibatch sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    items: VecDeque<Transition<T>>,
    capacity: usize,
    stats: CollisionStats,
}

impl<T: Real> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { items: VecDeque::with_capacity(capacity.min(1 << 16)), capacity, stats: CollisionStats::default() }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn stats(&self) -> &CollisionStats {
        &self.stats
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<T>> {
        self.items.iter()
    }

    /// Counts the transition and stores it when admitted.
    pub fn insert(&mut self, tr: Transition<T>, admission: Admission) {
        self.stats.record(tr.meta.event, admission);
        if admission == Admission::Store {
            self.push(tr);
        }
    }

    /// Appends, evicting the oldest entry at capacity. Does not touch the stats.
    pub fn push(&mut self, tr: Transition<T>) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(tr);
    }

    /// Uniform sample without replacement; `None` when the buffer is too small.
    pub fn sample_minibatch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Option<Vec<&Transition<T>>> {
        if batch_size == 0 || self.items.len() < batch_size {
            return None;
        }
        let idx = rand::seq::index::sample(rng, self.items.len(), batch_size);
        Some(idx.iter().map(|i| &self.items[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn deg(x: f64) -> f64 {
        x.to_radians()
    }

    fn tr(event: EventKind, id: u64) -> Transition<f64> {
        let obs = RawObservation { ranges: vec![1.0], goal_distance: 1.0, goal_bearing: 0.0, v: 0.0, omega: 0.0 };
        Transition {
            obs: obs.clone(),
            action: Action::new(0.1, 0.0),
            reward: 0.0,
            next_obs: obs,
            done: event.is_terminal(),
            meta: TransitionMeta { event, heading: 0.0, episode: id, bridge: false },
        }
    }

    #[test]
    fn pose_delta_wraps() {
        assert!((pose_delta(deg(350.0), deg(10.0)) - deg(20.0)).abs() < 1e-12);
        assert!((pose_delta(deg(10.0), deg(350.0)) - deg(20.0)).abs() < 1e-12);
        assert_eq!(pose_delta(0.7, 0.7), 0.0);
        assert!(pose_delta(std::f64::consts::PI, -std::f64::consts::PI) < 1e-12);
    }

    #[test]
    fn bridge_is_omitted() {
        let mut pf = PoseFilter::<f64>::disabled();
        assert_eq!(pf.admit(EventKind::None, 0.0, true), Admission::OmitBridge);
    }

    #[test]
    fn consecutive_collisions_stored_without_filter() {
        let mut pf = PoseFilter::<f64>::disabled();
        assert_eq!(pf.admit(EventKind::Collision, 0.1, false), Admission::Store);
        assert_eq!(pf.admit(EventKind::Collision, 0.1, false), Admission::Store);
    }

    #[test]
    fn small_heading_change_filtered() {
        let mut pf = PoseFilter::from_degrees(Some(3.0));
        assert_eq!(pf.admit(EventKind::Collision, deg(40.0), false), Admission::Store);
        assert_eq!(pf.admit(EventKind::Collision, deg(41.0), false), Admission::OmitPoseFilter);
        // the filtered candidate is the new reference
        assert_eq!(pf.reference_heading(), Some(deg(41.0)));
        assert_eq!(pf.admit(EventKind::Collision, deg(44.5), false), Admission::Store);
        pf.reset();
        assert_eq!(pf.admit(EventKind::Collision, deg(43.5), false), Admission::Store);
    }

    #[test]
    fn non_collision_does_not_move_reference() {
        let mut pf = PoseFilter::from_degrees(Some(3.0));
        pf.admit(EventKind::Collision, 1.0, false);
        assert_eq!(pf.admit(EventKind::Success, 2.0, false), Admission::Store);
        assert_eq!(pf.reference_heading(), Some(1.0));
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.insert(tr(EventKind::None, i), Admission::Store);
        }
        assert_eq!(buf.len(), 3);
        let ids: Vec<u64> = buf.iter().map(|t| t.meta.episode).collect();
        assert_eq!(ids, vec![2, 3, 4]);
        assert_eq!(buf.stats().stored_total, 5);
    }

    #[test]
    fn collision_push_counts() {
        let mut buf = ReplayBuffer::new(10);
        buf.insert(tr(EventKind::Collision, 0), Admission::Store);
        assert_eq!(buf.stats().stored_collisions, 1);
        assert_eq!(buf.stats().collision_candidates, 1);
    }

    #[test]
    fn too_small_for_batch() {
        let mut buf = ReplayBuffer::new(100);
        for i in 0..10 {
            buf.insert(tr(EventKind::None, i), Admission::Store);
        }
        assert!(buf.sample_minibatch(32, &mut ChaCha8Rng::seed_from_u64(0)).is_none());
    }

    #[test]
    fn seeded_sampling_repeats() {
        let mut buf = ReplayBuffer::new(100);
        for i in 0..50 {
            buf.insert(tr(EventKind::None, i), Admission::Store);
        }
        let ids = |seed| -> Vec<u64> {
            buf.sample_minibatch(16, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap()
                .iter()
                .map(|t| t.meta.episode)
                .collect()
        };
        assert_eq!(ids(5), ids(5));
        let mut unique = ids(5);
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), 16);
    }

    #[test]
    fn uniform_frequencies() {
        let mut buf = ReplayBuffer::new(100);
        for i in 0..100 {
            buf.insert(tr(EventKind::None, i), Admission::Store);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0u32; 100];
        let draws = 100_000;
        for _ in 0..draws / 10 {
            for t in buf.sample_minibatch(10, &mut rng).unwrap() {
                counts[t.meta.episode as usize] += 1;
            }
        }
        // each element is included with probability 10/100 per batch
        let n = (draws / 10) as f64;
        let p = 0.1;
        let mean = n * p;
        let sigma = (n * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!((c as f64 - mean).abs() < 4.0 * sigma, "count {c} vs {mean}±{sigma}");
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2) / mean).sum();
        // 99 dof; 3 sigma of chi2 is about 99 + 3 * sqrt(198)
        assert!(chi2 < 99.0 + 3.0 * 198f64.sqrt(), "chi2 = {chi2}");
    }

    #[test]
    fn report_ratios() {
        assert_eq!(CollisionStats::default().report(), StatsReport::default());
        let s = CollisionStats {
            total_generated: 52_500,
            collision_candidates: 231,
            pf_filtered: 0,
            bridge_omitted: 0,
            stored_total: 52_500,
            stored_collisions: 231,
        };
        assert!((s.report().candidate_ratio * 100.0 - 0.44).abs() < 0.005);
    }
}
