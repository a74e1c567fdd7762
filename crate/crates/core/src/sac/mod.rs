//! Soft actor-critic with twin critics, automatic entropy temperature and a
//! trainable lidar offset.
//!
//! All networks are [`nn::Mlp`]s with hand-written backpropagation. The lidar
//! offset `beta` is shared by every observation and receives gradient from the
//! actor loss only (through both the policy input and the critic state input
//! of that loss).

pub mod checkpoint;
pub mod nn;
pub mod policy;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observation::{RawObservation, TransformParam};
use crate::replay::Transition;
use crate::world::Action;
use crate::Real;
use nn::{Activation, Adam, AdamConfig, Mlp, MlpGrads};
use policy::{SquashedGaussian, ACTION_DIM};

/// Learner hyperparameters. Defaults are the usual SAC settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    /// Learning rate of the lidar offset.
    pub beta_lr: f64,
    /// Target network retention per update: `target <- polyak*target + (1-polyak)*online`.
    pub polyak: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init_alpha: f64,
    /// Tune the temperature toward `target_entropy`; otherwise keep `init_alpha`.
    pub auto_alpha: bool,
    /// Defaults to `-(action dim)`.
    pub target_entropy: Option<f64>,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub final_layer_scale: f64,
    pub init_beta: f64,
    /// Minimum allowed `reading - beta`.
    pub beta_eps: f64,
    /// Smallest lidar reading in a collision-free pose (the robot radius).
    pub reading_floor: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            beta_lr: 3e-4,
            polyak: 0.995,
            batch_size: 128,
            hidden: vec![100, 100, 100],
            activation: Activation::Relu,
            init_alpha: 1.0,
            auto_alpha: true,
            target_entropy: None,
            log_std_min: -20.0,
            log_std_max: 2.0,
            final_layer_scale: 0.01,
            init_beta: 0.0,
            beta_eps: 0.05,
            reading_floor: 0.17,
        }
    }
}

impl SacConfig {
    pub fn target_entropy(&self) -> f64 {
        self.target_entropy.unwrap_or(-(ACTION_DIM as f64))
    }

    /// Every learning rate set to `lr`.
    pub fn with_lr(mut self, lr: f64) -> Self {
        self.actor_lr = lr;
        self.critic_lr = lr;
        self.alpha_lr = lr;
        self.beta_lr = lr;
        self
    }
}

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("non-finite {what} after update {update}; {dump}")]
    NonFinite { what: &'static str, update: u64, dump: String },
    #[error("batch has {got} rows, learner expects {expected}")]
    BatchSize { got: usize, expected: usize },
}

/// Column-major view of a minibatch with raw (untransformed) lidar ranges.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub ranges: Array2<T>,
    /// `[d_goal, phi_goal, v, omega]` per row.
    pub extras: Array2<T>,
    pub actions: Array2<T>,
    pub rewards: Array1<T>,
    /// 1 for terminal transitions, 0 otherwise.
    pub dones: Array1<T>,
    pub next_ranges: Array2<T>,
    pub next_extras: Array2<T>,
}

fn split_obs<T: Real>(obs: &[&RawObservation<T>]) -> (Array2<T>, Array2<T>) {
    let beams = obs[0].ranges.len();
    let ranges = Array2::from_shape_fn((obs.len(), beams), |(b, j)| obs[b].ranges[j]);
    let extras = Array2::from_shape_fn((obs.len(), 4), |(b, j)| {
        let o = obs[b];
        [o.goal_distance, o.goal_bearing, o.v, o.omega][j]
    });
    (ranges, extras)
}

impl<T: Real> Batch<T> {
    pub fn from_transitions(batch: &[&Transition<T>]) -> Self {
        assert!(!batch.is_empty(), "empty batch");
        let obs: Vec<_> = batch.iter().map(|t| &t.obs).collect();
        let next: Vec<_> = batch.iter().map(|t| &t.next_obs).collect();
        let (ranges, extras) = split_obs(&obs);
        let (next_ranges, next_extras) = split_obs(&next);
        Self {
            ranges,
            extras,
            actions: Array2::from_shape_fn((batch.len(), ACTION_DIM), |(b, j)| {
                let a = batch[b].action;
                [a.v, a.omega][j]
            }),
            rewards: batch.iter().map(|t| t.reward).collect(),
            dones: batch.iter().map(|t| if t.done { T::one() } else { T::zero() }).collect(),
            next_ranges,
            next_extras,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Applies the lidar transform. Also returns `d state / d beta` for the lidar
/// columns (zero where the singularity guard clamped).
pub fn encode_states<T: Real>(
    ranges: &Array2<T>,
    extras: &Array2<T>,
    param: &TransformParam<T>,
) -> (Array2<T>, Array2<T>) {
    let mut dbeta = Array2::zeros(ranges.raw_dim());
    let lidar = Array2::from_shape_fn(ranges.raw_dim(), |(b, j)| {
        let t = param.apply(ranges[[b, j]]);
        if !t.clamped {
            dbeta[[b, j]] = t.value * t.value;
        }
        t.value
    });
    (concatenate(Axis(1), &[lidar.view(), extras.view()]).expect("matching rows"), dbeta)
}

pub fn encode_observation<T: Real>(obs: &RawObservation<T>, param: &TransformParam<T>) -> Array2<T> {
    let state = obs.to_state(param);
    Array2::from_shape_vec((1, state.0.len()), state.0).expect("row vector")
}

/// Per-update diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    pub temperature: f64,
    pub alpha: f64,
    pub beta: f64,
    pub entropy: f64,
}

/// Actor loss with gradients for the policy parameters and `beta`.
#[derive(Clone, Debug)]
pub struct ActorLoss<T> {
    pub loss: T,
    pub grads: MlpGrads<T>,
    pub beta_grad: T,
    pub mean_log_prob: T,
}

#[derive(Clone, Debug)]
pub struct SacLearner<T> {
    cfg: SacConfig,
    pub actor: SquashedGaussian<T>,
    pub critic1: Mlp<T>,
    pub critic2: Mlp<T>,
    pub target1: Mlp<T>,
    pub target2: Mlp<T>,
    pub log_alpha: T,
    pub transform: TransformParam<T>,
    actor_opt: Adam<T>,
    critic1_opt: Adam<T>,
    critic2_opt: Adam<T>,
    alpha_opt: Adam<T>,
    beta_opt: Adam<T>,
    updates: u64,
}

impl<T: Real> SacLearner<T> {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, cfg: SacConfig, rng: &mut R) -> Self {
        let mut actor_sizes = vec![state_dim];
        actor_sizes.extend(&cfg.hidden);
        actor_sizes.push(2 * ACTION_DIM);
        let mut critic_sizes = vec![state_dim + ACTION_DIM];
        critic_sizes.extend(&cfg.hidden);
        critic_sizes.push(1);

        let actor_net = Mlp::new(&actor_sizes, cfg.activation, cfg.final_layer_scale, rng);
        let critic1 = Mlp::new(&critic_sizes, cfg.activation, 1.0, rng);
        let critic2 = Mlp::new(&critic_sizes, cfg.activation, 1.0, rng);
        let actor = SquashedGaussian::new(actor_net, T::lit(cfg.log_std_min), T::lit(cfg.log_std_max));
        Self::from_parts(
            cfg.clone(),
            actor,
            critic1.clone(),
            critic2.clone(),
            critic1,
            critic2,
            T::lit(cfg.init_alpha.ln()),
            TransformParam::new(T::lit(cfg.init_beta), T::lit(cfg.beta_eps), T::lit(cfg.reading_floor)),
            0,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        cfg: SacConfig,
        actor: SquashedGaussian<T>,
        critic1: Mlp<T>,
        critic2: Mlp<T>,
        target1: Mlp<T>,
        target2: Mlp<T>,
        log_alpha: T,
        transform: TransformParam<T>,
        updates: u64,
    ) -> Self {
        Self {
            actor_opt: Adam::for_mlp(AdamConfig::with_lr(cfg.actor_lr), &actor.net),
            critic1_opt: Adam::for_mlp(AdamConfig::with_lr(cfg.critic_lr), &critic1),
            critic2_opt: Adam::for_mlp(AdamConfig::with_lr(cfg.critic_lr), &critic2),
            alpha_opt: Adam::new(AdamConfig::with_lr(cfg.alpha_lr), &[1]),
            beta_opt: Adam::new(AdamConfig::with_lr(cfg.beta_lr), &[1]),
            cfg,
            actor,
            critic1,
            critic2,
            target1,
            target2,
            log_alpha,
            transform,
            updates,
        }
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn state_dim(&self) -> usize {
        self.actor.net.input_dim()
    }

    pub fn alpha(&self) -> T {
        self.log_alpha.exp()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &RawObservation<T>, rng: &mut R) -> Action<T> {
        self.actor.sample_action(&encode_observation(obs, &self.transform), rng)
    }

    pub fn act_deterministic(&self, obs: &RawObservation<T>) -> Action<T> {
        self.actor.mean_action(&encode_observation(obs, &self.transform))
    }

    /// Bellman targets with caller-supplied policy noise for the next action.
    pub fn critic_targets_with_noise(&self, batch: &Batch<T>, noise: Array2<T>) -> Array1<T> {
        let (next_states, _) = encode_states(&batch.next_ranges, &batch.next_extras, &self.transform);
        let next = self.actor.sample_uncached(&next_states, noise);
        let sa = concatenate(Axis(1), &[next_states.view(), next.actions.view()]).expect("rows");
        let q1 = self.target1.forward(&sa);
        let q2 = self.target2.forward(&sa);
        let gamma = T::lit(self.cfg.gamma);
        let alpha = self.alpha();
        Array1::from_shape_fn(batch.len(), |b| {
            let r = batch.rewards[b];
            if batch.dones[b] > T::zero() {
                // terminal: no bootstrap, whatever the next state holds
                r
            } else {
                let soft_value = q1[[b, 0]].min(q2[[b, 0]]) - alpha * next.log_prob[b];
                r + gamma * soft_value
            }
        })
    }

    pub fn critic_targets<R: Rng + ?Sized>(&self, batch: &Batch<T>, rng: &mut R) -> Array1<T> {
        self.critic_targets_with_noise(batch, SquashedGaussian::standard_noise(batch.len(), rng))
    }

    /// `0.5 * mean((Q(s, a) - y)^2)` and its parameter gradient.
    pub fn critic_loss(critic: &Mlp<T>, state_actions: &Array2<T>, targets: &Array1<T>) -> (T, MlpGrads<T>) {
        let (q, cache) = critic.forward_cached(state_actions);
        let n = T::lit(targets.len() as f64);
        let diff = &q.column(0) - targets;
        let loss = diff.mapv(|d| d * d).sum() * T::lit(0.5) / n;
        let grad_out = diff.mapv(|d| d / n).insert_axis(Axis(1));
        let (grads, _) = critic.backward(&cache, &grad_out, true);
        (loss, grads.expect("requested"))
    }

    /// `mean(alpha * log pi(a|s) - min(Q1, Q2)(s, a))` with `a` drawn from `noise`.
    pub fn actor_loss(&self, batch: &Batch<T>, noise: Array2<T>) -> ActorLoss<T> {
        let (states, dbeta) = encode_states(&batch.ranges, &batch.extras, &self.transform);
        let (sample, actor_cache) = self.actor.sample_with_noise(&states, noise);
        let sa = concatenate(Axis(1), &[states.view(), sample.actions.view()]).expect("rows");
        let (q1, c1) = self.critic1.forward_cached(&sa);
        let (q2, c2) = self.critic2.forward_cached(&sa);
        let rows = batch.len();
        let n = T::lit(rows as f64);
        let alpha = self.alpha();

        // route dL/dQ to whichever critic is smaller per row
        let mut g1 = Array2::zeros((rows, 1));
        let mut g2 = Array2::zeros((rows, 1));
        let mut loss = T::zero();
        for b in 0..rows {
            let (a, c) = (q1[[b, 0]], q2[[b, 0]]);
            let q = a.min(c);
            loss += alpha * sample.log_prob[b] - q;
            if a <= c {
                g1[[b, 0]] = -n.recip();
            } else {
                g2[[b, 0]] = -n.recip();
            }
        }
        loss /= n;
        let (_, d1) = self.critic1.backward(&c1, &g1, false);
        let (_, d2) = self.critic2.backward(&c2, &g2, false);
        let d_sa = d1 + d2;
        let state_dim = states.ncols();

        let half = SquashedGaussian::<T>::half_range();
        let two = T::lit(2.0);
        let mut grad_out = Array2::zeros((rows, 2 * ACTION_DIM));
        for b in 0..rows {
            for j in 0..ACTION_DIM {
                let y = sample.squashed[[b, j]];
                let std = sample.log_std[[b, j]].exp();
                let eps = sample.noise[[b, j]];
                let dl_da = d_sa[[b, state_dim + j]];
                let da_du = half[j] * (T::one() - y * y);
                // d logp / du = 2 tanh(u) with the noise held fixed
                let dl_du = alpha * two * y / n + dl_da * da_du;
                grad_out[[b, j]] = dl_du;
                if sample.log_std_free[[b, j]] {
                    grad_out[[b, ACTION_DIM + j]] = -alpha / n + dl_du * std * eps;
                }
            }
        }
        let (grads, d_states) = self.actor.net.backward(&actor_cache, &grad_out, true);
        let beams = dbeta.ncols();
        let d_lidar = &d_states.slice(s![.., ..beams]) + &d_sa.slice(s![.., ..beams]);
        let beta_grad = (&d_lidar * &dbeta).sum();
        ActorLoss { loss, grads: grads.expect("requested"), beta_grad, mean_log_prob: sample.log_prob.sum() / n }
    }

    /// Temperature loss `-log_alpha * (mean log pi + target_entropy)` and its gradient.
    pub fn temperature_loss(&self, mean_log_prob: T) -> (T, T) {
        let g = -(mean_log_prob + T::lit(self.cfg.target_entropy()));
        (self.log_alpha * g, g)
    }

    pub fn soft_update_targets(&mut self) {
        let polyak = T::lit(self.cfg.polyak);
        self.target1.soft_update_from(&self.critic1, polyak);
        self.target2.soft_update_from(&self.critic2, polyak);
    }

    /// One gradient step on critics, actor, temperature and `beta`, then a
    /// soft target update.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch<T>, rng: &mut R) -> Result<Losses, LearnerError> {
        if batch.len() != self.cfg.batch_size {
            return Err(LearnerError::BatchSize { got: batch.len(), expected: self.cfg.batch_size });
        }
        self.updates += 1;

        let targets = self.critic_targets(batch, rng);
        let (states, _) = encode_states(&batch.ranges, &batch.extras, &self.transform);
        let sa = concatenate(Axis(1), &[states.view(), batch.actions.view()]).expect("rows");
        let (l1, g1) = Self::critic_loss(&self.critic1, &sa, &targets);
        let (l2, g2) = Self::critic_loss(&self.critic2, &sa, &targets);
        self.critic1_opt.step(self.critic1.param_slices_mut(), g1.slices());
        self.critic2_opt.step(self.critic2.param_slices_mut(), g2.slices());

        let noise = SquashedGaussian::standard_noise(batch.len(), rng);
        let actor = self.actor_loss(batch, noise);
        self.actor_opt.step(self.actor.net.param_slices_mut(), actor.grads.slices());
        let mut beta = [self.transform.beta()];
        self.beta_opt.step(vec![&mut beta[..]], vec![&[actor.beta_grad][..]]);
        self.transform.set_beta(beta[0]);

        let (temp_loss, temp_grad) = self.temperature_loss(actor.mean_log_prob);
        if self.cfg.auto_alpha {
            let mut la = [self.log_alpha];
            self.alpha_opt.step(vec![&mut la[..]], vec![&[temp_grad][..]]);
            self.log_alpha = la[0];
        }
        self.soft_update_targets();

        let losses = Losses {
            critic1: l1.as_f64(),
            critic2: l2.as_f64(),
            actor: actor.loss.as_f64(),
            temperature: temp_loss.as_f64(),
            alpha: self.alpha().as_f64(),
            beta: self.transform.beta().as_f64(),
            entropy: -actor.mean_log_prob.as_f64(),
        };
        self.check_finite(&losses)?;
        Ok(losses)
    }

    fn check_finite(&self, losses: &Losses) -> Result<(), LearnerError> {
        let bad = [
            ("critic1 loss", losses.critic1.is_finite()),
            ("critic2 loss", losses.critic2.is_finite()),
            ("actor loss", losses.actor.is_finite()),
            ("temperature", losses.alpha.is_finite()),
            ("beta", losses.beta.is_finite()),
            ("actor parameters", self.actor.net.all_finite()),
            ("critic parameters", self.critic1.all_finite() && self.critic2.all_finite()),
        ]
        .into_iter()
        .find(|(_, ok)| !ok);
        match bad {
            None => Ok(()),
            Some((what, _)) => Err(LearnerError::NonFinite { what, update: self.updates, dump: self.param_summary() }),
        }
    }

    /// Compact per-network statistics for diagnostics.
    pub fn param_summary(&self) -> String {
        let stats = |name: &str, net: &Mlp<T>| {
            let (mut lo, mut hi, mut bad) = (f64::INFINITY, f64::NEG_INFINITY, 0usize);
            for v in net.param_slices().into_iter().flatten() {
                let v = v.as_f64();
                if v.is_finite() {
                    lo = lo.min(v);
                    hi = hi.max(v);
                } else {
                    bad += 1;
                }
            }
            format!("{name}: min={lo:.3e} max={hi:.3e} non_finite={bad}")
        };
        [
            stats("actor", &self.actor.net),
            stats("critic1", &self.critic1),
            stats("critic2", &self.critic2),
            format!("log_alpha={} beta={}", self.log_alpha, self.transform.beta()),
        ]
        .join("; ")
    }
}
