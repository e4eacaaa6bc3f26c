//! Per-unit left-to-right GMM-HMMs: flat-start initialization, embedded
//! re-estimation (Viterbi or Baum-Welch), forced alignment, unit-loop
//! recognition and forward likelihoods. All probabilities are natural logs.
//!
//! Each unit model is a chain of states without skips: state `i` either stays
//! (probability `a_i`) or moves to `i + 1` (probability `1 - a_i`); the last
//! state's leave probability is the model's exit. A model therefore occupies
//! at least `n_states` frames.

mod decode;
mod gmm;
mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{append_deltas, DspError, FeatureSequence, MfccConfig, MfccExtractor, Waveform};
use crate::score::{ScoreError, Unit, UnitTimeline};
use crate::rng::CounterRng;

pub use decode::{forward_log_likelihood, log_likelihood, recognize, viterbi_align, Network};
pub use gmm::Gmm;
pub use train::{flat_start_init, reestimate, InitConfig, ReestimationMode, TrainConfig, TrainItem, TrainReport};

pub const MODELSET_SCHEMA: &str = "scoreseg.modelset";
pub const MODELSET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unit '{0}' does not occur in the training corpus")]
    UnitAbsent(Unit),
    #[error("unit '{0}' is missing from the model set")]
    UnitMissing(Unit),
    #[error("feature dimension {got} does not match the model's {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("{frames} frames cannot fit the minimum duration {needed} of the unit sequence")]
    Infeasible { needed: usize, frames: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("invalid unit sequence: {0}")]
    Sequence(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Timeline(#[from] ScoreError),
    #[error(transparent)]
    Signal(#[from] DspError),
}

pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// 39-dim alignment features: resample to 16 kHz, 13 MFCCs, Δ and ΔΔ.
pub fn alignment_features(w: &Waveform) -> Result<FeatureSequence, DspError> {
    let cfg = MfccConfig::default();
    let rate = cfg.sample_rate;
    let x = MfccExtractor::new(cfg)?;
    let stat = x.extract(&w.resample_linear(rate)?)?;
    if stat.is_empty() {
        return Ok(FeatureSequence::new(Vec::new(), 3 * stat.dim(), stat.frame_shift_ms, stat.frame_length_ms));
    }
    Ok(append_deltas(&stat, 2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitHmm {
    pub unit: Unit,
    /// Per-state self-loop probability in (0, 1).
    pub self_loop: Vec<f64>,
    pub states: Vec<Gmm>,
}

impl UnitHmm {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    fn validate(&self, dim: usize, floor: &[f64]) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidModel(format!("{}: {m}", self.unit)));
        if self.states.is_empty() || self.self_loop.len() != self.states.len() {
            return bad(format!("{} states, {} self-loops", self.states.len(), self.self_loop.len()));
        }
        if self.self_loop.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return bad("self-loop probabilities must lie in (0, 1)".into());
        }
        for g in &self.states {
            if g.dim() != dim {
                return bad(format!("state dimension {} != {dim}", g.dim()));
            }
            if g.variances().iter().flatten().zip(floor.iter().cycle()).any(|(v, f)| v < f) {
                return bad("variance below floor".into());
            }
        }
        Ok(())
    }
}

/// One HMM per unit, all over the same feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSetFile", into = "ModelSetFile")]
pub struct ModelSet {
    feature_dim: usize,
    var_floor: Vec<f64>,
    models: BTreeMap<Unit, UnitHmm>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSetFile {
    schema: String,
    version: u32,
    feature_dim: usize,
    var_floor: Vec<f64>,
    models: BTreeMap<Unit, UnitHmm>,
}

impl TryFrom<ModelSetFile> for ModelSet {
    type Error = ModelError;

    fn try_from(f: ModelSetFile) -> Result<Self, Self::Error> {
        if f.schema != MODELSET_SCHEMA || f.version != MODELSET_VERSION {
            return Err(ModelError::Format(format!(
                "expected {MODELSET_SCHEMA} v{MODELSET_VERSION}, got {} v{}",
                f.schema, f.version
            )));
        }
        ModelSet::new(f.feature_dim, f.var_floor, f.models)
    }
}

impl From<ModelSet> for ModelSetFile {
    fn from(m: ModelSet) -> Self {
        ModelSetFile {
            schema: MODELSET_SCHEMA.into(),
            version: MODELSET_VERSION,
            feature_dim: m.feature_dim,
            var_floor: m.var_floor,
            models: m.models,
        }
    }
}

impl ModelSet {
    pub fn new(feature_dim: usize, var_floor: Vec<f64>, models: BTreeMap<Unit, UnitHmm>) -> Result<Self, ModelError> {
        if var_floor.len() != feature_dim || var_floor.iter().any(|v| !(*v > 0.0)) {
            return Err(ModelError::InvalidModel("variance floor must be positive per dimension".into()));
        }
        for u in Unit::ALL {
            let m = models.get(&u).ok_or(ModelError::UnitMissing(u))?;
            if m.unit != u {
                return Err(ModelError::InvalidModel(format!("model keyed {u} is labelled {}", m.unit)));
            }
            m.validate(feature_dim, &var_floor)?;
        }
        Ok(Self {
            feature_dim,
            var_floor,
            models,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn var_floor(&self) -> &[f64] {
        &self.var_floor
    }

    pub fn model(&self, unit: Unit) -> &UnitHmm {
        &self.models[&unit]
    }

    pub fn models(&self) -> impl Iterator<Item = &UnitHmm> {
        self.models.values()
    }

    pub(crate) fn models_mut(&mut self) -> impl Iterator<Item = &mut UnitHmm> {
        self.models.values_mut()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model sets serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))
    }

    /// Adds Gaussian noise of `scale` standard deviations to every mean.
    pub fn perturbed(&self, seed: u64, scale: f64) -> ModelSet {
        let mut out = self.clone();
        let mut rng = CounterRng::new(seed).split_str("perturb");
        for hmm in out.models.values_mut() {
            for g in &mut hmm.states {
                let sd: Vec<Vec<f64>> = g.variances().iter().map(|v| v.iter().map(|x| x.sqrt()).collect()).collect();
                g.shift_means(|m, d| scale * sd[m][d] * rng.normal());
            }
        }
        out
    }

    fn check_dim(&self, f: &FeatureSequence) -> Result<(), ModelError> {
        if !f.is_empty() && f.dim() != self.feature_dim {
            return Err(ModelError::DimMismatch {
                expected: self.feature_dim,
                got: f.dim(),
            });
        }
        Ok(())
    }
}

/// A decoded state path and the timeline it implies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub timeline: UnitTimeline,
    /// State index within its unit model, per frame.
    pub states: Vec<usize>,
    pub log_likelihood: f64,
}

#[cfg(test)]
mod tests;
