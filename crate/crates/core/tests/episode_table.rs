//! Episode boundary logic against a direct transcription of the training loop.

mod common;

use common::*;
use mcb_nav::episode::{
    begin_episode, CollisionBudget, Control, EpisodeState, EventKind, ResetPolicy, ResetReason, SingleCollisionReset,
    StepDirective,
};
use proptest::prelude::*;
use rand::Rng;

const T_MAX: u32 = 6;

/// Events consistent with step `t`: timeout exists only at the horizon.
fn events_at(t: u32) -> Vec<EventKind> {
    let last = if t >= T_MAX { EventKind::Timeout } else { EventKind::None };
    vec![EventKind::Success, EventKind::Collision, last]
}

fn check(k: u32, state: &EpisodeState, e: EventKind, got: (EpisodeState, StepDirective)) {
    let exp = algorithm_step(k, T_MAX, state.collisions, state.prev_collision, state.next_step(), e);
    let (next, dir) = got;
    let ctx = format!("K={k} state={state:?} event={e:?}");
    assert_eq!(dir.terminal, exp.d, "{ctx}");
    assert_eq!(dir.bridge, exp.bridge, "{ctx}");
    assert_eq!(dir.control, exp.control, "{ctx}");
    assert_eq!(next.collisions, exp.c_next, "{ctx}");
    assert_eq!(next.prev_collision, exp.b_next, "{ctx}");
    assert_eq!(next.t, state.t + 1, "{ctx}");
}

#[test]
fn exhaustive_single_step_table() {
    let mut rows = 0;
    for k in [1, 2, 3, 5] {
        let policy = CollisionBudget::new(k, T_MAX).unwrap();
        for c in 0..k {
            for b in [false, true] {
                if b && c == 0 {
                    continue; // a collision flag implies at least one collision
                }
                for t in 0..T_MAX {
                    let state = EpisodeState { t, collisions: c, prev_collision: b, scenario_id: 9 };
                    for e in events_at(t + 1) {
                        check(k, &state, e, policy.on_step(&state, e));
                        rows += 1;
                    }
                }
            }
        }
    }
    assert!(rows > 300);
}

/// Drives a policy through an event stream, restarting after every global reset.
fn rollout(policy: &dyn ResetPolicy, events: &[EventKind]) -> Vec<StepDirective> {
    let mut state = begin_episode(0);
    let mut out = Vec::new();
    for &raw in events {
        let t = state.next_step();
        let e = match raw {
            EventKind::Timeout | EventKind::None if t >= policy.t_max() => EventKind::Timeout,
            EventKind::Timeout => EventKind::None,
            other => other,
        };
        let (next, dir) = policy.on_step(&state, e);
        state = if dir.control.is_reset() { begin_episode(state.scenario_id + 1) } else { next };
        out.push(dir);
    }
    out
}

fn random_events(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<EventKind> {
    (0..n)
        .map(|_| match r.random_range(0..10) {
            0 => EventKind::Success,
            1..=3 => EventKind::Collision,
            _ => EventKind::None,
        })
        .collect()
}

#[test]
fn single_reset_equals_budget_of_one_on_random_streams() {
    let scr = SingleCollisionReset::new(T_MAX).unwrap();
    let k1 = CollisionBudget::new(1, T_MAX).unwrap();
    let mut r = rng(31);
    for _ in 0..10_000 {
        let n = r.random_range(1..40);
        let ev = random_events(&mut r, n);
        assert_eq!(rollout(&scr, &ev), rollout(&k1, &ev));
    }
}

#[test]
fn single_reset_equals_budget_of_one_exhaustively() {
    let scr = SingleCollisionReset::new(T_MAX).unwrap();
    let k1 = CollisionBudget::new(1, T_MAX).unwrap();
    let alphabet = [EventKind::Success, EventKind::Collision, EventKind::None];
    for len in 1..=8u32 {
        for code in 0..3usize.pow(len) {
            let mut x = code;
            let ev: Vec<_> = (0..len)
                .map(|_| {
                    let e = alphabet[x % 3];
                    x /= 3;
                    e
                })
                .collect();
            assert_eq!(rollout(&scr, &ev), rollout(&k1, &ev), "{ev:?}");
        }
    }
}

#[test]
fn zero_budget_and_horizon_are_rejected() {
    assert!(CollisionBudget::new(0, 10).is_err());
    assert!(CollisionBudget::new(2, 0).is_err());
    assert!(SingleCollisionReset::new(0).is_err());
}

#[test]
fn budget_of_two_worked_example() {
    // collision, free step, collision: the second collision spends the budget
    let p = CollisionBudget::new(2, 50).unwrap();
    let ev = [EventKind::None, EventKind::Collision, EventKind::None, EventKind::Collision, EventKind::None];
    let dirs = rollout(&p, &ev);
    assert!(!dirs[0].terminal && dirs[0].control == Control::ContinueInScene);
    assert!(dirs[1].terminal && dirs[1].control == Control::ContinueInScene);
    assert!(dirs[2].bridge && !dirs[2].terminal);
    assert!(dirs[3].terminal && dirs[3].control == Control::GlobalReset(ResetReason::BudgetExhausted));
    assert!(!dirs[4].bridge, "the counters restart after a global reset");
}

proptest! {
    #[test]
    fn invariants_hold_on_any_stream(k in 1u32..6, seed in any::<u64>(), n in 1usize..200) {
        let p = CollisionBudget::new(k, 25).unwrap();
        let mut r = rng(seed);
        let ev = random_events(&mut r, n);
        let mut state = begin_episode(0);
        for &raw in &ev {
            let t = state.next_step();
            let e = if raw == EventKind::None && t >= 25 { EventKind::Timeout } else { raw };
            let (next, dir) = p.on_step(&state, e);
            // collision count never exceeds the budget and never resets mid-episode
            prop_assert!(next.collisions <= k);
            prop_assert!(next.collisions >= state.collisions);
            prop_assert!(next.t <= 25);
            // a bridge only follows a collision and is terminal only on success
            prop_assert!(!(dir.bridge && dir.terminal) || e == EventKind::Success);
            prop_assert!(!dir.bridge || state.prev_collision);
            // a timeout is never a terminal transition
            if e == EventKind::Timeout { prop_assert!(!dir.terminal); }
            if e == EventKind::Success { prop_assert_eq!(dir.control, Control::GlobalReset(ResetReason::Success)); }
            state = if dir.control.is_reset() { begin_episode(1) } else { next };
        }
    }
}
