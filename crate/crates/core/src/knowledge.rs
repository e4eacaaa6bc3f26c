//! Frame-level cinematic activity knowledge and its low-dimensional projection.
//!
//! An [`ActivityVector`] holds seven bits in the order
//! `(speech, dialog, nonverbal, music, sfx, fg_sfx, bg_sfx)`. Only the five leaf
//! bits are free; `speech = dialog | nonverbal` and `sfx = fg_sfx | bg_sfx` are
//! always derived, so a constructed vector can never violate the hierarchy.
//!
//! A [`Projector`] maps the 7 bits to `k` real coordinates with an affine map;
//! the coordinates are appended to each frame's features before separation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::FeatureSequence;
use crate::rng::CounterRng;

#[derive(Debug, Error, PartialEq)]
pub enum KnowledgeError {
    #[error("activity bits violate the hierarchy: {0}")]
    Hierarchy(String),
    #[error("frame count mismatch: {features} feature frames, {embeddings} embeddings")]
    FrameMismatch { features: usize, embeddings: usize },
    #[error("embedding {frame} has dimension {got}, expected {expected}")]
    EmbeddingDim {
        frame: usize,
        got: usize,
        expected: usize,
    },
    #[error("{vectors} vectors but {targets} targets")]
    TargetMismatch { vectors: usize, targets: usize },
}

pub const ACTIVITY_DIM: usize = 7;
pub const BIT_NAMES: [&str; ACTIVITY_DIM] = [
    "speech", "dialog", "nonverbal", "music", "sfx", "fg_sfx", "bg_sfx",
];
/// Top-level categories, in the order used for stems and projector targets.
pub const CATEGORIES: [&str; 3] = ["speech", "music", "sfx"];

/// Five leaf categories; the numeric value is the bit position in the 5-bit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leaf {
    Dialog = 4,
    Nonverbal = 3,
    Music = 2,
    FgSfx = 1,
    BgSfx = 0,
}

impl Leaf {
    pub const ALL: [Leaf; 5] = [Leaf::Dialog, Leaf::Nonverbal, Leaf::Music, Leaf::FgSfx, Leaf::BgSfx];

    /// Index into [`CATEGORIES`].
    pub fn category(self) -> usize {
        match self {
            Leaf::Dialog | Leaf::Nonverbal => 0,
            Leaf::Music => 1,
            Leaf::FgSfx | Leaf::BgSfx => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "[u8; 7]", into = "[u8; 7]")]
pub struct ActivityVector {
    leaves: u8,
}

impl ActivityVector {
    pub fn silent() -> Self {
        Self::default()
    }

    /// Every leaf active: carries no gating information.
    pub fn all_on() -> Self {
        Self { leaves: 0b11111 }
    }

    /// From the 5-bit leaf code, dialog in the most significant bit.
    pub fn from_leaf_code(code: u8) -> Self {
        Self {
            leaves: code & 0b11111,
        }
    }

    pub fn from_leaves(dialog: bool, nonverbal: bool, music: bool, fg_sfx: bool, bg_sfx: bool) -> Self {
        let mut v = Self::default();
        for (on, leaf) in [dialog, nonverbal, music, fg_sfx, bg_sfx].into_iter().zip(Leaf::ALL) {
            if on {
                v.set(leaf);
            }
        }
        v
    }

    pub fn set(&mut self, leaf: Leaf) {
        self.leaves |= 1 << leaf as u8;
    }

    pub fn has(&self, leaf: Leaf) -> bool {
        self.leaves & (1 << leaf as u8) != 0
    }

    pub fn leaf_code(&self) -> u8 {
        self.leaves
    }

    pub fn speech(&self) -> bool {
        self.has(Leaf::Dialog) || self.has(Leaf::Nonverbal)
    }

    pub fn music(&self) -> bool {
        self.has(Leaf::Music)
    }

    pub fn sfx(&self) -> bool {
        self.has(Leaf::FgSfx) || self.has(Leaf::BgSfx)
    }

    /// `(speech, music, sfx)`.
    pub fn top_level(&self) -> [bool; 3] {
        [self.speech(), self.music(), self.sfx()]
    }

    pub fn bits(&self) -> [u8; 7] {
        [
            self.speech(),
            self.has(Leaf::Dialog),
            self.has(Leaf::Nonverbal),
            self.music(),
            self.sfx(),
            self.has(Leaf::FgSfx),
            self.has(Leaf::BgSfx),
        ]
        .map(u8::from)
    }

    pub fn as_f64(&self) -> [f64; 7] {
        self.bits().map(f64::from)
    }
}

impl TryFrom<[u8; 7]> for ActivityVector {
    type Error = KnowledgeError;

    fn try_from(bits: [u8; 7]) -> Result<Self, Self::Error> {
        if bits.iter().any(|&b| b > 1) {
            return Err(KnowledgeError::Hierarchy(format!("non-binary entry in {bits:?}")));
        }
        let v = Self::from_leaves(bits[1] == 1, bits[2] == 1, bits[3] == 1, bits[5] == 1, bits[6] == 1);
        if v.bits() != bits {
            return Err(KnowledgeError::Hierarchy(format!(
                "{bits:?}: speech must equal dialog|nonverbal and sfx must equal fg|bg"
            )));
        }
        Ok(v)
    }
}

impl From<ActivityVector> for [u8; 7] {
    fn from(v: ActivityVector) -> Self {
        v.bits()
    }
}

/// The 32 leaf assignments in counter order (code 0 = all silent).
pub fn enumerate_activity_vectors() -> Vec<ActivityVector> {
    (0u8..32).map(ActivityVector::from_leaf_code).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    /// `k` rows of 7 weights.
    pub matrix: Vec<[f64; 7]>,
    pub bias: Vec<f64>,
}

impl Projector {
    pub fn zeros(k: usize) -> Self {
        Self {
            matrix: vec![[0.0; 7]; k],
            bias: vec![0.0; k],
        }
    }

    /// Small seeded Gaussian weights, zero bias.
    pub fn seeded(k: usize, seed: u64) -> Self {
        let mut rng = CounterRng::new(seed).split_str("projector-init");
        let matrix = (0..k)
            .map(|_| std::array::from_fn(|_| 0.1 * rng.normal()))
            .collect();
        Self {
            matrix,
            bias: vec![0.0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.matrix.len()
    }

    pub fn project(&self, a: &ActivityVector) -> Vec<f64> {
        let x = a.as_f64();
        self.matrix
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectorTraining {
    pub n_iter: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for ProjectorTraining {
    fn default() -> Self {
        Self {
            n_iter: 2000,
            step: 0.5,
            seed: 0,
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean over vectors of the summed per-coordinate logistic losses.
pub fn projector_loss(p: &Projector, vectors: &[ActivityVector], targets: &[Vec<bool>]) -> f64 {
    let n = vectors.len().max(1) as f64;
    vectors
        .iter()
        .zip(targets)
        .map(|(v, t)| {
            p.project(v)
                .iter()
                .zip(t)
                .map(|(&z, &y)| softplus(z) - if y { z } else { 0.0 })
                .sum::<f64>()
        })
        .sum::<f64>()
        / n
}

/// Full-batch gradient descent on [`projector_loss`] from [`Projector::seeded`].
/// Coordinate `c` of the projection is trained to predict target bit `c`.
/// Returns the projector and the loss before each step plus the final loss.
pub fn train_projector(
    vectors: &[ActivityVector],
    targets: &[Vec<bool>],
    cfg: &ProjectorTraining,
) -> Result<(Projector, Vec<f64>), KnowledgeError> {
    if vectors.len() != targets.len() {
        return Err(KnowledgeError::TargetMismatch {
            vectors: vectors.len(),
            targets: targets.len(),
        });
    }
    let k = targets.first().map_or(CATEGORIES.len(), Vec::len);
    let mut p = Projector::seeded(k, cfg.seed);
    let n = vectors.len().max(1) as f64;
    let inputs: Vec<[f64; 7]> = vectors.iter().map(ActivityVector::as_f64).collect();
    let mut losses = Vec::with_capacity(cfg.n_iter + 1);
    for _ in 0..cfg.n_iter {
        losses.push(projector_loss(&p, vectors, targets));
        let mut gw = vec![[0.0; 7]; k];
        let mut gb = vec![0.0; k];
        for ((v, x), t) in vectors.iter().zip(&inputs).zip(targets) {
            for (c, z) in p.project(v).into_iter().enumerate() {
                let r = sigmoid(z) - if t[c] { 1.0 } else { 0.0 };
                for d in 0..7 {
                    gw[c][d] += r * x[d] / n;
                }
                gb[c] += r / n;
            }
        }
        for c in 0..k {
            for d in 0..7 {
                p.matrix[c][d] -= cfg.step * gw[c][d];
            }
            p.bias[c] -= cfg.step * gb[c];
        }
    }
    losses.push(projector_loss(&p, vectors, targets));
    Ok((p, losses))
}

/// Canonical training set: the 32 vectors and their `(speech, music, sfx)` bits.
pub fn canonical_training_set() -> (Vec<ActivityVector>, Vec<Vec<bool>>) {
    let vectors = enumerate_activity_vectors();
    let targets = vectors.iter().map(|v| v.top_level().to_vec()).collect();
    (vectors, targets)
}

/// Appends per-frame embeddings after the features: output dim = dim + k.
pub fn concat_features(
    features: &FeatureSequence,
    embeddings: &[Vec<f64>],
) -> Result<FeatureSequence, KnowledgeError> {
    if features.n_frames() != embeddings.len() {
        return Err(KnowledgeError::FrameMismatch {
            features: features.n_frames(),
            embeddings: embeddings.len(),
        });
    }
    let k = embeddings.first().map_or(0, Vec::len);
    let dim = features.dim() + k;
    let mut data = Vec::with_capacity(features.n_frames() * dim);
    for (t, (frame, emb)) in features.frames().zip(embeddings).enumerate() {
        if emb.len() != k {
            return Err(KnowledgeError::EmbeddingDim {
                frame: t,
                got: emb.len(),
                expected: k,
            });
        }
        data.extend_from_slice(frame);
        data.extend_from_slice(emb);
    }
    Ok(FeatureSequence::new(
        data,
        dim,
        features.frame_shift_ms,
        features.frame_length_ms,
    ))
}

/// Inverse of [`concat_features`]: the last `k` columns are the embeddings.
pub fn split_features(conditioned: &FeatureSequence, k: usize) -> (FeatureSequence, Vec<Vec<f64>>) {
    let dim = conditioned.dim() - k;
    let mut data = Vec::with_capacity(conditioned.n_frames() * dim);
    let mut embeddings = Vec::with_capacity(conditioned.n_frames());
    for frame in conditioned.frames() {
        data.extend_from_slice(&frame[..dim]);
        embeddings.push(frame[dim..].to_vec());
    }
    (
        FeatureSequence::new(data, dim.max(1), conditioned.frame_shift_ms, conditioned.frame_length_ms),
        embeddings,
    )
}

/// One row per vector: 7 input bits, `k` projected coordinates, 3 top-level labels.
pub fn projection_csv(p: &Projector, vectors: &[ActivityVector]) -> String {
    let mut out = String::new();
    out.push_str(&BIT_NAMES.join(","));
    for c in 0..p.k() {
        let _ = write!(out, ",proj_{c}");
    }
    out.push_str(",label_speech,label_music,label_sfx\n");
    for v in vectors {
        let bits: Vec<String> = v.bits().iter().map(u8::to_string).collect();
        out.push_str(&bits.join(","));
        for z in p.project(v) {
            let _ = write!(out, ",{z}");
        }
        for l in v.top_level() {
            let _ = write!(out, ",{}", u8::from(l));
        }
        out.push('\n');
    }
    out
}
