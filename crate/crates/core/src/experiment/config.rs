//! Experiment configuration, profiles and the config hash.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::EvalConfig;
use crate::observation::RewardParams;
use crate::sac::SacConfig;
use crate::world::{ScenarioConfig, SimConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SCR")]
    Scr,
    #[serde(rename = "MCB")]
    Mcb,
    #[serde(rename = "MCB-PF")]
    McbPf,
}

impl std::str::FromStr for Method {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "SCR" => Ok(Method::Scr),
            "MCB" => Ok(Method::Mcb),
            "MCB-PF" | "MCB_PF" | "MCBPF" => Ok(Method::McbPf),
            _ => Err(ConfigError::Invalid(format!("unknown method '{s}' (expected SCR, MCB or MCB-PF)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    F32,
    F64,
}

/// Which checkpoints a run keeps on disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Retention {
    All,
    Last,
    None,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("unknown profile '{0}' (expected desk or paper)")]
    UnknownProfile(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub method: Method,
    /// Collision budget; forced to 1 for SCR.
    pub k: u32,
    /// Pose-filter threshold in degrees; required by MCB-PF, ignored otherwise.
    pub tau_deg: Option<f64>,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    pub eval_every: u64,
    pub t_max: u32,
    pub map: String,
    /// Evaluation map; defaults to the training map.
    pub eval_map: Option<String>,
    pub scalar: ScalarKind,
    /// Stored transitions required before gradient updates start.
    pub warmup: usize,
    pub replay_capacity: usize,
    pub checkpoints: Retention,
    pub record_traces: bool,
    pub sim: SimConfig<f64>,
    pub scenario: ScenarioConfig<f64>,
    pub reward: RewardParams<f64>,
    pub sac: SacConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// 15k steps, evaluation every 1k, five seeds.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            method: Method::Mcb,
            k: 2,
            tau_deg: None,
            seeds: (0..5).collect(),
            total_steps: 15_000,
            eval_every: 1_000,
            t_max: 200,
            map: "cluttered".into(),
            eval_map: None,
            scalar: ScalarKind::F32,
            warmup: 1_000,
            replay_capacity: 1_000_000,
            checkpoints: Retention::All,
            record_traces: true,
            sim: SimConfig::default(),
            scenario: ScenarioConfig::default(),
            reward: RewardParams::default(),
            sac: SacConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    /// 50k steps, checkpoints every 2.5k, ten seeds. Long-running.
    pub fn paper() -> Self {
        Self { name: "paper".into(), seeds: (0..10).collect(), total_steps: 50_000, eval_every: 2_500, ..Self::desk() }
    }

    pub fn profile(name: &str) -> Result<Self, ConfigError> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(ConfigError::UnknownProfile(other.to_string())),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Budget actually used by the episode manager.
    pub fn effective_k(&self) -> u32 {
        match self.method {
            Method::Scr => 1,
            _ => self.k,
        }
    }

    /// Filter threshold actually used, in degrees.
    pub fn effective_tau_deg(&self) -> Option<f64> {
        match self.method {
            Method::McbPf => self.tau_deg,
            _ => None,
        }
    }

    /// Short label such as `SCR`, `MCB-K2` or `MCB-K2-PF3`.
    pub fn label(&self) -> String {
        match self.method {
            Method::Scr => "SCR".into(),
            Method::Mcb => format!("MCB-K{}", self.k),
            Method::McbPf => format!("MCB-K{}-PF{}", self.k, fmt_tau(self.tau_deg.unwrap_or(f64::NAN))),
        }
    }

    pub fn eval_map_name(&self) -> &str {
        self.eval_map.as_deref().unwrap_or(&self.map)
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.method != Method::Scr && self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.method == Method::McbPf {
            match self.tau_deg {
                None => return bad("MCB-PF requires tau_deg".into()),
                Some(t) if !(t.is_finite() && t >= 0.0) => {
                    return bad(format!("tau_deg must be a non-negative number, got {t}"))
                }
                _ => {}
            }
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.total_steps == 0 || self.eval_every == 0 {
            return bad("total_steps and eval_every must be positive".into());
        }
        if !self.total_steps.is_multiple_of(self.eval_every) {
            return bad(format!("eval_every ({}) must divide total_steps ({})", self.eval_every, self.total_steps));
        }
        if self.t_max == 0 {
            return bad("t_max must be positive".into());
        }
        if self.replay_capacity < self.sac.batch_size {
            return bad("replay_capacity is smaller than the batch size".into());
        }
        let s = &self.sac;
        if !(s.gamma > 0.0 && s.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", s.gamma));
        }
        if !(s.polyak > 0.0 && s.polyak < 1.0) {
            return bad(format!("polyak must lie in (0, 1), got {}", s.polyak));
        }
        if s.batch_size == 0 || s.hidden.is_empty() || s.hidden.contains(&0) {
            return bad("batch_size and hidden sizes must be positive".into());
        }
        if !(s.init_alpha > 0.0) {
            return bad("init_alpha must be positive".into());
        }
        if self.sim.lidar.beams == 0 || self.sim.substeps == 0 || !(self.sim.dt > 0.0) {
            return bad("lidar beams, substeps and dt must be positive".into());
        }
        if !(self.reward.success > 0.0 && self.reward.collision < 0.0) {
            return bad("success reward must be positive and collision reward negative".into());
        }
        if self.eval.tasks == 0 {
            return bad("eval.tasks must be positive".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of everything that influences training and evaluation.
    ///
    /// Labels, names, the seed list and output options are excluded, so SCR
    /// and MCB with `k = 1` share a hash.
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            k: u32,
            tau_deg: Option<f64>,
            total_steps: u64,
            eval_every: u64,
            t_max: u32,
            map: &'a str,
            eval_map: &'a str,
            scalar: ScalarKind,
            warmup: usize,
            replay_capacity: usize,
            sim: &'a SimConfig<f64>,
            scenario: &'a ScenarioConfig<f64>,
            reward: &'a RewardParams<f64>,
            sac: &'a SacConfig,
            eval: (usize, u64, bool, bool),
        }
        let h = Hashed {
            k: self.effective_k(),
            tau_deg: self.effective_tau_deg(),
            total_steps: self.total_steps,
            eval_every: self.eval_every,
            t_max: self.t_max,
            map: &self.map,
            eval_map: self.eval_map_name(),
            scalar: self.scalar,
            warmup: self.warmup,
            replay_capacity: self.replay_capacity,
            sim: &self.sim,
            scenario: &self.scenario,
            reward: &self.reward,
            sac: &self.sac,
            eval: (self.eval.tasks, self.eval.task_seed, self.eval.strict, self.eval.sampled),
        };
        let json = serde_json::to_vec(&h).expect("hash input serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// Degrees without a trailing `.0`: `3`, `0.5`.
pub fn fmt_tau(tau: f64) -> String {
    if tau.fract() == 0.0 && tau.is_finite() {
        format!("{}", tau as i64)
    } else {
        format!("{tau}")
    }
}
