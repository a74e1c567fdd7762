//! Replay admission: counters, the pose filter and what may enter the buffer.

mod common;

use common::*;
use mcb_nav::episode::{begin_episode, CollisionBudget, EventKind, ResetPolicy};
use mcb_nav::replay::{pose_delta, Admission, CollisionStats, PoseFilter, ReplayBuffer, Transition};
use proptest::prelude::*;
use rand::Rng;

/// Feeds a synthetic event stream through the budget, filter and buffer the
/// way the training loop does.
fn simulate(seed: u64, steps: usize, k: u32, tau_deg: Option<f64>, capacity: usize) -> ReplayBuffer<f64> {
    let mut r = rng(seed);
    let policy = CollisionBudget::new(k, 40).unwrap();
    let mut filter = PoseFilter::<f64>::from_degrees(tau_deg);
    let mut buffer = ReplayBuffer::new(capacity);
    let mut state = begin_episode(0);
    let mut heading: f64 = 0.0;
    for _ in 0..steps {
        let t = state.next_step();
        let mut event = match r.random_range(0..20) {
            0 => EventKind::Success,
            1..=5 => EventKind::Collision,
            _ => EventKind::None,
        };
        if event == EventKind::None && t >= 40 {
            event = EventKind::Timeout;
        }
        // mostly small turns, so the filter has near-duplicates to reject
        heading += r.random_range(-0.1..0.1);
        let (next, dir) = policy.on_step(&state, event);
        let admission = filter.admit(event, heading, dir.bridge);
        let mut tr = toy_transition(&mut r, 3, dir.terminal);
        tr.meta.event = event;
        tr.meta.heading = heading;
        tr.meta.bridge = dir.bridge;
        tr.meta.episode = state.scenario_id;
        buffer.insert(tr, admission);
        state = if dir.control.is_reset() {
            filter.reset();
            begin_episode(state.scenario_id + 1)
        } else {
            next
        };
    }
    buffer
}

fn recount(items: &[&Transition<f64>]) -> (u64, u64) {
    let collisions = items.iter().filter(|t| t.meta.event == EventKind::Collision).count() as u64;
    (items.len() as u64, collisions)
}

#[test]
fn ten_thousand_pushes_recount() {
    for (k, tau) in [(1, None), (2, None), (5, Some(3.0)), (50, Some(10.0))] {
        let buf = simulate(41 + k as u64, 10_000, k, tau, 1_000_000);
        let s = buf.stats();
        let items: Vec<_> = buf.iter().collect();
        let (stored, collisions) = recount(&items);
        assert_eq!(s.total_generated, 10_000);
        assert_eq!(s.stored_total, stored);
        assert_eq!(s.stored_collisions, collisions);
        assert!(s.identities_hold(), "{s:?}");
        if tau.is_none() {
            assert_eq!(s.pf_filtered, 0);
        } else {
            assert!(s.pf_filtered > 0);
        }
        if k == 1 {
            assert_eq!(s.bridge_omitted, 0, "a single-collision reset never produces bridges");
        } else {
            assert!(s.bridge_omitted > 0);
        }
    }
}

#[test]
fn stats_survive_eviction() {
    let buf = simulate(47, 5_000, 3, Some(3.0), 100);
    assert_eq!(buf.len(), 100);
    assert_eq!(buf.stats().total_generated, 5_000);
    assert!(buf.stats().identities_hold());
}

#[test]
fn stored_transitions_are_sound() {
    let buf = simulate(48, 10_000, 3, Some(5.0), 1_000_000);
    for t in buf.iter() {
        assert!(!t.meta.bridge);
        assert_eq!(t.done, t.meta.event.is_terminal());
        if t.meta.event == EventKind::Timeout {
            assert!(!t.done, "timeouts are truncations");
        }
    }
}

#[test]
fn bridges_never_enter_replay() {
    let mut f = PoseFilter::<f64>::from_degrees(Some(3.0));
    for e in EventKind::ALL {
        assert_eq!(f.admit(e, 0.0, true), Admission::OmitBridge);
    }
    assert_eq!(f.reference_heading(), None, "an omitted bridge does not move the reference");
}

#[test]
fn merged_stats_add_up() {
    let a = *simulate(49, 3_000, 2, Some(3.0), 10).stats();
    let b = *simulate(50, 2_000, 5, None, 10).stats();
    let mut m = CollisionStats::default();
    m.merge(&a);
    m.merge(&b);
    assert_eq!(m.total_generated, 5_000);
    assert!(m.identities_hold());
}

/// Filtered count when every collision in `headings` is fed in order.
fn filtered(headings: &[f64], tau_deg: f64) -> usize {
    let mut f = PoseFilter::<f64>::from_degrees(Some(tau_deg));
    headings.iter().filter(|&&h| f.admit(EventKind::Collision, h, false) == Admission::OmitPoseFilter).count()
}

proptest! {
    #[test]
    fn filtering_is_monotone_in_tau(headings in prop::collection::vec(-10.0f64..10.0, 1..80), lo in 0.0f64..30.0, extra in 0.0f64..30.0) {
        prop_assert!(filtered(&headings, lo) <= filtered(&headings, lo + extra));
    }

    #[test]
    fn filter_matches_pairwise_oracle(headings in prop::collection::vec(-10.0f64..10.0, 1..80), tau in 0.0f64..45.0) {
        // every candidate is compared with the immediately preceding candidate
        let tau_rad = tau.to_radians();
        let expected = headings.windows(2).filter(|w| pose_delta(w[1], w[0]) < tau_rad).count();
        prop_assert_eq!(filtered(&headings, tau), expected);
    }

    #[test]
    fn pose_delta_is_wrapped_and_symmetric(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let d = pose_delta(a, b);
        prop_assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&d));
        prop_assert!((d - pose_delta(b, a)).abs() < 1e-9);
        prop_assert!(pose_delta(a + std::f64::consts::TAU, b) - d < 1e-9);
    }

    #[test]
    fn sampling_draws_distinct_stored_items(seed in any::<u64>(), n in 1usize..64) {
        let buf = simulate(seed, 300, 3, Some(3.0), 200);
        let mut r = rng(seed ^ 1);
        match buf.sample_minibatch(n, &mut r) {
            None => prop_assert!(buf.len() < n),
            Some(batch) => {
                prop_assert_eq!(batch.len(), n);
                let mut ptrs: Vec<_> = batch.iter().map(|t| *t as *const _).collect();
                ptrs.sort();
                ptrs.dedup();
                prop_assert_eq!(ptrs.len(), n);
            }
        }
    }
}
