//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use mcb_nav::episode::{Control, EventKind, ResetReason};
use mcb_nav::observation::RawObservation;
use mcb_nav::replay::{Transition, TransitionMeta};
use mcb_nav::sac::nn::{Activation, Mlp};
use mcb_nav::sac::{Batch, SacConfig, SacLearner};
use mcb_nav::world::{Action, MapSpec};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-5;
// absolute slack for near-zero components, where central differences of an
// O(100) loss carry ~1e-9 of rounding noise
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central difference of `f` in the `idx`-th flattened parameter of `net`.
pub fn fd_param(net: &Mlp<f64>, idx: usize, f: impl Fn(&Mlp<f64>) -> f64) -> f64 {
    let mut plus = net.clone();
    let mut minus = net.clone();
    *flat_mut(&mut plus, idx) += FD_STEP;
    *flat_mut(&mut minus, idx) -= FD_STEP;
    (f(&plus) - f(&minus)) / (2.0 * FD_STEP)
}

pub fn flat_mut(net: &mut Mlp<f64>, mut idx: usize) -> &mut f64 {
    for s in net.param_slices_mut() {
        if idx < s.len() {
            return &mut s[idx];
        }
        idx -= s.len();
    }
    panic!("parameter index out of range");
}

pub fn flat(grads: &[&[f64]]) -> Vec<f64> {
    grads.iter().flat_map(|s| s.iter().copied()).collect()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradReport {
    pub trials: usize,
    pub resampled: usize,
    pub checked: usize,
    pub max_rel: f64,
}

impl GradReport {
    fn absorb(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        self.max_rel = self.max_rel.max(rel_err(analytic, numeric));
    }
}

fn random_sizes(r: &mut ChaCha8Rng, input: usize, output: usize) -> Vec<usize> {
    let depth = r.random_range(1..=3);
    let mut sizes = vec![input];
    sizes.extend((0..depth).map(|_| r.random_range(2..=5)));
    sizes.push(output);
    sizes
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
}

/// Parameter and input gradients of `sum(W .* mlp(x))` for random `W`.
pub fn check_mlp_backward(trials: usize, seed: u64) -> GradReport {
    let mut r = rng(seed);
    let mut rep = GradReport::default();
    while rep.trials < trials {
        let (inputs, outputs) = (r.random_range(1..=4), r.random_range(1..=3));
        let sizes = random_sizes(&mut r, inputs, outputs);
        let act = if r.random_bool(0.5) { Activation::Relu } else { Activation::Tanh };
        let net = Mlp::<f64>::new(&sizes, act, 1.0, &mut r);
        let rows = r.random_range(1..=4);
        let x = random_matrix(&mut r, rows, inputs);
        if net.min_abs_preactivation(&x) < 1e-3 {
            rep.resampled += 1;
            continue;
        }
        let w = random_matrix(&mut r, rows, outputs);
        let loss = |n: &Mlp<f64>, x: &Array2<f64>| (&n.forward(x) * &w).sum();
        let (_, cache) = net.forward_cached(&x);
        let (grads, gx) = net.backward(&cache, &w, true);
        let g = flat(&grads.unwrap().slices());
        for (i, &a) in g.iter().enumerate() {
            rep.absorb(a, fd_param(&net, i, |n| loss(n, &x)));
        }
        for ((b, j), &a) in gx.indexed_iter() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[[b, j]] += FD_STEP;
            xm[[b, j]] -= FD_STEP;
            rep.absorb(a, (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * FD_STEP));
        }
        rep.trials += 1;
    }
    rep
}

pub fn toy_obs(r: &mut ChaCha8Rng, beams: usize) -> RawObservation<f64> {
    RawObservation {
        ranges: (0..beams).map(|_| r.random_range(0.3..6.0)).collect(),
        goal_distance: r.random_range(0.0..6.0),
        goal_bearing: r.random_range(-3.1..3.1),
        v: r.random_range(0.0..0.5),
        omega: r.random_range(-1.5..1.5),
    }
}

pub fn toy_transition(r: &mut ChaCha8Rng, beams: usize, done: bool) -> Transition<f64> {
    let obs = toy_obs(r, beams);
    let next_obs = toy_obs(r, beams);
    Transition {
        obs,
        action: Action::new(r.random_range(0.0..0.5), r.random_range(-1.5..1.5)),
        reward: r.random_range(-10.0..10.0),
        next_obs,
        done,
        meta: TransitionMeta {
            event: if done { EventKind::Collision } else { EventKind::None },
            heading: 0.0,
            episode: 0,
            bridge: false,
        },
    }
}

pub fn toy_batch(r: &mut ChaCha8Rng, rows: usize, beams: usize) -> Batch<f64> {
    let trs: Vec<_> = (0..rows)
        .map(|_| {
            let done = r.random_bool(0.3);
            toy_transition(r, beams, done)
        })
        .collect();
    Batch::from_transitions(&trs.iter().collect::<Vec<_>>())
}

/// A learner with small random networks, a random temperature and offset.
pub fn toy_learner(r: &mut ChaCha8Rng, beams: usize, rows: usize) -> SacLearner<f64> {
    let depth = r.random_range(1..=3);
    let hidden = (0..depth).map(|_| r.random_range(2..=5)).collect();
    let cfg = SacConfig { hidden, batch_size: rows, final_layer_scale: 1.0, ..SacConfig::default() };
    let mut l = SacLearner::new(beams + 4, cfg, r);
    l.log_alpha = r.random_range(-2.0..0.5);
    l.transform.set_beta(r.random_range(-0.3..0.1));
    l
}

fn state_actions(l: &SacLearner<f64>, b: &Batch<f64>) -> Array2<f64> {
    let (states, _) = mcb_nav::sac::encode_states(&b.ranges, &b.extras, &l.transform);
    ndarray::concatenate(ndarray::Axis(1), &[states.view(), b.actions.view()]).unwrap()
}

/// Critic regression loss against fixed targets.
pub fn check_critic_loss(trials: usize, seed: u64) -> GradReport {
    let mut r = rng(seed);
    let mut rep = GradReport::default();
    while rep.trials < trials {
        let (beams, rows) = (r.random_range(1..=3), r.random_range(2..=5));
        let l = toy_learner(&mut r, beams, rows);
        let b = toy_batch(&mut r, rows, beams);
        let sa = state_actions(&l, &b);
        if l.critic1.min_abs_preactivation(&sa) < 1e-3 {
            rep.resampled += 1;
            continue;
        }
        let targets = l.critic_targets(&b, &mut r);
        let (_, g) = SacLearner::critic_loss(&l.critic1, &sa, &targets);
        for (i, &a) in flat(&g.slices()).iter().enumerate() {
            rep.absorb(a, fd_param(&l.critic1, i, |n| SacLearner::critic_loss(n, &sa, &targets).0));
        }
        rep.trials += 1;
    }
    rep
}

/// Actor loss in the policy parameters and the lidar offset, with the policy
/// noise held fixed.
pub fn check_actor_loss(trials: usize, seed: u64) -> GradReport {
    let mut r = rng(seed);
    let mut rep = GradReport::default();
    while rep.trials < trials {
        let (beams, rows) = (r.random_range(1..=3), r.random_range(2..=5));
        let l = toy_learner(&mut r, beams, rows);
        let b = toy_batch(&mut r, rows, beams);
        let noise = Array2::from_shape_fn((rows, 2), |_| r.sample::<f64, _>(rand_distr::StandardNormal));
        if !actor_well_conditioned(&l, &b, &noise) {
            rep.resampled += 1;
            continue;
        }
        let base = l.actor_loss(&b, noise.clone());
        for (i, &a) in flat(&base.grads.slices()).iter().enumerate() {
            let n = fd_param(&l.actor.net, i, |net| {
                let mut m = l.clone();
                m.actor.net = net.clone();
                m.actor_loss(&b, noise.clone()).loss
            });
            rep.absorb(a, n);
        }
        let at_beta = |beta: f64| {
            let mut m = l.clone();
            m.transform.set_beta(beta);
            m.actor_loss(&b, noise.clone()).loss
        };
        let beta = l.transform.beta();
        rep.absorb(base.beta_grad, (at_beta(beta + FD_STEP) - at_beta(beta - FD_STEP)) / (2.0 * FD_STEP));
        rep.trials += 1;
    }
    rep
}

/// Away from every non-smooth point: ReLU kinks in all three networks, the
/// min of the twin critics, and the log-std clamp.
fn actor_well_conditioned(l: &SacLearner<f64>, b: &Batch<f64>, noise: &Array2<f64>) -> bool {
    let (states, _) = mcb_nav::sac::encode_states(&b.ranges, &b.extras, &l.transform);
    if l.actor.net.min_abs_preactivation(&states) < 1e-3 {
        return false;
    }
    let sample = l.actor.sample_uncached(&states, noise.clone());
    let lo = l.actor.log_std_min + 1e-3;
    let hi = l.actor.log_std_max - 1e-3;
    if sample.log_std.iter().any(|&v| v <= lo || v >= hi) {
        return false;
    }
    let sa = ndarray::concatenate(ndarray::Axis(1), &[states.view(), sample.actions.view()]).unwrap();
    if l.critic1.min_abs_preactivation(&sa) < 1e-3 || l.critic2.min_abs_preactivation(&sa) < 1e-3 {
        return false;
    }
    let (q1, q2) = (l.critic1.forward(&sa), l.critic2.forward(&sa));
    q1.iter().zip(q2.iter()).all(|(a, c)| (a - c).abs() >= 1e-3)
}

/// Temperature loss in `log_alpha`.
pub fn check_temperature(trials: usize, seed: u64) -> GradReport {
    let mut r = rng(seed);
    let mut rep = GradReport::default();
    for _ in 0..trials {
        let mut l = toy_learner(&mut r, 2, 3);
        let mean_log_prob = r.random_range(-5.0..5.0);
        let (_, g) = l.temperature_loss(mean_log_prob);
        let la = l.log_alpha;
        l.log_alpha = la + FD_STEP;
        let plus = l.temperature_loss(mean_log_prob).0;
        l.log_alpha = la - FD_STEP;
        let minus = l.temperature_loss(mean_log_prob).0;
        rep.absorb(g, (plus - minus) / (2.0 * FD_STEP));
        rep.trials += 1;
    }
    rep
}

// ---------------------------------------------------------------- geometry

/// Point inside a wall or obstacle of the map description (boundary counts).
pub fn inside_spec(spec: &MapSpec, x: f64, y: f64) -> bool {
    let b = &spec.bounds;
    if x <= b.min[0] || x >= b.max[0] || y <= b.min[1] || y >= b.max[1] {
        return true;
    }
    if spec.circles.iter().any(|c| (x - c.center[0]).hypot(y - c.center[1]) <= c.radius) {
        return true;
    }
    spec.polygons.iter().any(|p| {
        // convex: inside iff on the same side of every edge
        let n = p.vertices.len();
        let mut pos = true;
        let mut neg = true;
        for i in 0..n {
            let a = p.vertices[i];
            let c = p.vertices[(i + 1) % n];
            let cross = (c[0] - a[0]) * (y - a[1]) - (c[1] - a[1]) * (x - a[0]);
            pos &= cross >= 0.0;
            neg &= cross <= 0.0;
        }
        pos || neg
    })
}

/// First 1 mm step along the ray that lands inside something, refined by
/// bisection against the previous step, capped at `max_range`.
pub fn march_range(spec: &MapSpec, x: f64, y: f64, angle: f64, max_range: f64) -> f64 {
    let (dx, dy) = (angle.cos(), angle.sin());
    let steps = (max_range / 1e-3).round() as usize;
    for k in 1..=steps {
        let t = k as f64 * 1e-3;
        if inside_spec(spec, x + t * dx, y + t * dy) {
            let (mut lo, mut hi) = (t - 1e-3, t);
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if inside_spec(spec, x + mid * dx, y + mid * dy) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return hi;
        }
    }
    max_range
}

/// Points spaced at most `spacing` apart along every obstacle outline and the
/// boundary rectangle.
pub fn perimeter_samples(spec: &MapSpec, spacing: f64) -> Vec<[f64; 2]> {
    let mut pts = Vec::new();
    let mut segment = |a: [f64; 2], b: [f64; 2]| {
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let n = (len / spacing).ceil().max(1.0) as usize;
        for i in 0..n {
            let s = i as f64 / n as f64;
            pts.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
        }
    };
    let (lo, hi) = (spec.bounds.min, spec.bounds.max);
    let corners = [[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]];
    for i in 0..4 {
        segment(corners[i], corners[(i + 1) % 4]);
    }
    for p in &spec.polygons {
        let n = p.vertices.len();
        for i in 0..n {
            segment(p.vertices[i], p.vertices[(i + 1) % n]);
        }
    }
    for c in &spec.circles {
        let n = (std::f64::consts::TAU * c.radius / spacing).ceil() as usize;
        for i in 0..n {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            pts.push([c.center[0] + c.radius * a.cos(), c.center[1] + c.radius * a.sin()]);
        }
    }
    pts
}

/// Brute-force clearance: 0 inside anything, else distance to the nearest
/// perimeter sample.
pub fn brute_clearance(spec: &MapSpec, samples: &[[f64; 2]], x: f64, y: f64) -> f64 {
    if inside_spec(spec, x, y) {
        return 0.0;
    }
    samples.iter().map(|p| (p[0] - x).hypot(p[1] - y)).fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------- episodes

/// Expected outcome of one step under a budget, written straight from the
/// algorithm's pseudo-code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Expected {
    pub d: bool,
    pub bridge: bool,
    pub c_next: u32,
    pub b_next: bool,
    pub control: Control,
}

pub fn algorithm_step(k: u32, t_max: u32, c: u32, b: bool, t: u32, e: EventKind) -> Expected {
    let d = matches!(e, EventKind::Success | EventKind::Collision);
    let bridge = b && e != EventKind::Collision;
    let c_next = c + (e == EventKind::Collision) as u32;
    let control = if e == EventKind::Success {
        Control::GlobalReset(ResetReason::Success)
    } else if c_next >= k {
        Control::GlobalReset(ResetReason::BudgetExhausted)
    } else if t == t_max {
        Control::GlobalReset(ResetReason::Timeout)
    } else {
        Control::ContinueInScene
    };
    Expected { d, bridge, c_next, b_next: e == EventKind::Collision, control }
}
