//! Mapless navigation workbench for comparing episode reset protocols in
//! deep reinforcement learning.
//!
//! The crate bundles a small 2D simulator ([`world`]), the policy
//! observation and reward ([`observation`]), episode management under a
//! collision budget ([`episode`]), collision-aware replay ([`replay`]), a
//! soft actor-critic learner ([`sac`]), fixed-task evaluation ([`eval`]) and
//! the experiment runner ([`experiment`]).
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! name the common instantiations.

pub mod env;
pub mod episode;
pub mod eval;
pub mod experiment;
pub mod observation;
pub mod replay;
pub mod sac;
pub mod scalar;
pub mod world;

pub use scalar::Real;

pub type WorldMap32 = world::WorldMap<f32>;
pub type WorldMap64 = world::WorldMap<f64>;
pub type SacLearner32 = sac::SacLearner<f32>;
pub type SacLearner64 = sac::SacLearner<f64>;
pub type ReplayBuffer32 = replay::ReplayBuffer<f32>;
pub type ReplayBuffer64 = replay::ReplayBuffer<f64>;
pub type Transition32 = replay::Transition<f32>;
pub type Transition64 = replay::Transition<f64>;
