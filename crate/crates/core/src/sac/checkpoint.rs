//! Versioned JSON checkpoints of a [`SacLearner`].
//!
//! Files are written to a temporary sibling and renamed, so a crash never
//! leaves a half-written checkpoint under the final name. Loading parses and
//! validates everything before building a learner.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::nn::{Linear, Mlp};
use super::policy::SquashedGaussian;
use super::{SacConfig, SacLearner};
use crate::observation::TransformParam;
use crate::Real;

pub const FORMAT: &str = "mcbnav-sac";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint holds {found} parameters, expected {expected}")]
    ScalarMismatch { found: String, expected: String },
    #[error("shape mismatch in {net}: {detail}")]
    Shape { net: String, detail: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    inputs: usize,
    outputs: usize,
    /// Row-major `inputs x outputs`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NetRecord {
    layers: Vec<LayerRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    scalar: String,
    step: u64,
    updates: u64,
    config: SacConfig,
    beta: f64,
    log_alpha: f64,
    actor: NetRecord,
    critic1: NetRecord,
    critic2: NetRecord,
    target1: NetRecord,
    target2: NetRecord,
}

/// A restored learner plus the environment step it was saved at.
#[derive(Debug)]
pub struct Restored<T> {
    pub learner: SacLearner<T>,
    pub step: u64,
}

fn to_record<T: Real>(net: &Mlp<T>) -> NetRecord {
    NetRecord {
        layers: net
            .layers
            .iter()
            .map(|l| LayerRecord {
                inputs: l.inputs(),
                outputs: l.outputs(),
                weights: l.weight.iter().map(|w| w.as_f64()).collect(),
                bias: l.bias.iter().map(|b| b.as_f64()).collect(),
            })
            .collect(),
    }
}

fn from_record<T: Real>(
    name: &str,
    rec: &NetRecord,
    sizes: &[usize],
    cfg: &SacConfig,
) -> Result<Mlp<T>, CheckpointError> {
    let shape_err = |detail: String| CheckpointError::Shape { net: name.to_string(), detail };
    if rec.layers.len() + 1 != sizes.len() {
        return Err(shape_err(format!("{} layers, expected {}", rec.layers.len(), sizes.len() - 1)));
    }
    let mut layers = Vec::with_capacity(rec.layers.len());
    for (i, l) in rec.layers.iter().enumerate() {
        if (l.inputs, l.outputs) != (sizes[i], sizes[i + 1]) {
            return Err(shape_err(format!(
                "layer {i} is {}x{}, expected {}x{}",
                l.inputs,
                l.outputs,
                sizes[i],
                sizes[i + 1]
            )));
        }
        if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
            return Err(shape_err(format!("layer {i} has wrong element count")));
        }
        if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
            return Err(CheckpointError::Corrupt(format!("{name} layer {i} contains non-finite values")));
        }
        let weight = Array2::from_shape_vec((l.inputs, l.outputs), l.weights.iter().map(|&w| T::lit(w)).collect())
            .map_err(|e| shape_err(e.to_string()))?;
        let bias: Array1<T> = l.bias.iter().map(|&b| T::lit(b)).collect();
        layers.push(Linear { weight, bias });
    }
    Ok(Mlp { layers, activation: cfg.activation })
}

/// Serializes a learner to the checkpoint JSON text.
pub fn to_json<T: Real>(learner: &SacLearner<T>, step: u64) -> String {
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        version: VERSION,
        scalar: T::NAME.to_string(),
        step,
        updates: learner.updates(),
        config: learner.config().clone(),
        beta: learner.transform.beta().as_f64(),
        log_alpha: learner.log_alpha.as_f64(),
        actor: to_record(&learner.actor.net),
        critic1: to_record(&learner.critic1),
        critic2: to_record(&learner.critic2),
        target1: to_record(&learner.target1),
        target2: to_record(&learner.target2),
    };
    serde_json::to_string(&file).expect("checkpoint serializes")
}

/// Parses checkpoint JSON text. Optimizer moments are not stored; a restored
/// learner starts with fresh Adam state.
pub fn from_json<T: Real>(text: &str) -> Result<Restored<T>, CheckpointError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    if value.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
        return Err(CheckpointError::Corrupt("missing or unknown format tag".into()));
    }
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CheckpointError::Corrupt("missing version".into()))? as u32;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: VERSION });
    }
    let file: CheckpointFile = serde_json::from_value(value).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    if file.scalar != T::NAME {
        return Err(CheckpointError::ScalarMismatch { found: file.scalar, expected: T::NAME.to_string() });
    }
    let cfg = file.config;
    let state_dim = file
        .actor
        .layers
        .first()
        .map(|l| l.inputs)
        .ok_or_else(|| CheckpointError::Shape { net: "actor".into(), detail: "no layers".into() })?;
    let mut actor_sizes = vec![state_dim];
    actor_sizes.extend(&cfg.hidden);
    actor_sizes.push(2 * super::ACTION_DIM);
    let mut critic_sizes = vec![state_dim + super::ACTION_DIM];
    critic_sizes.extend(&cfg.hidden);
    critic_sizes.push(1);

    let actor = from_record::<T>("actor", &file.actor, &actor_sizes, &cfg)?;
    let critic1 = from_record::<T>("critic1", &file.critic1, &critic_sizes, &cfg)?;
    let critic2 = from_record::<T>("critic2", &file.critic2, &critic_sizes, &cfg)?;
    let target1 = from_record::<T>("target1", &file.target1, &critic_sizes, &cfg)?;
    let target2 = from_record::<T>("target2", &file.target2, &critic_sizes, &cfg)?;
    if !file.beta.is_finite() || !file.log_alpha.is_finite() {
        return Err(CheckpointError::Corrupt("non-finite beta or temperature".into()));
    }
    let mut transform = TransformParam::new(T::zero(), T::lit(cfg.beta_eps), T::lit(cfg.reading_floor));
    transform.set_beta(T::lit(file.beta));
    let policy = SquashedGaussian::new(actor, T::lit(cfg.log_std_min), T::lit(cfg.log_std_max));
    let learner = SacLearner::from_parts(
        cfg,
        policy,
        critic1,
        critic2,
        target1,
        target2,
        T::lit(file.log_alpha),
        transform,
        file.updates,
    );
    Ok(Restored { learner, step: file.step })
}

pub fn save<T: Real>(learner: &SacLearner<T>, step: u64, path: &Path) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, to_json(learner, step)).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn load<T: Real>(path: &Path) -> Result<Restored<T>, CheckpointError> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    from_json(&text)
}

/// The scalar type a checkpoint file was written with (`f32` or `f64`).
pub fn peek_scalar(path: &Path) -> Result<String, CheckpointError> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    value
        .get("scalar")
        .and_then(|s| s.as_str())
        .map(str::to_string)
        .ok_or_else(|| CheckpointError::Corrupt("missing scalar tag".into()))
}
