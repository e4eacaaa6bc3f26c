use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scoreseg_core::acoustic_model::ReestimationMode;
use scoreseg_core::mixgen::AugmentationConfig;
use scoreseg_core::score::Instrument;
use scoreseg_core::separator::SeparatorConfig;

pub const MANIFEST_SCHEMA: &str = "scoreseg.run";

/// The shipped default manifest.
pub const DEFAULT_MANIFEST: &str = include_str!("../manifests/default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema: String,
    pub seed: u64,
    /// Relative paths are resolved against the manifest's directory.
    pub output_dir: PathBuf,
    /// Optional existing corpora; when absent, `synth` writes them under the output directory.
    #[serde(default)]
    pub corpus: CorpusPaths,
    pub instrument_map: BTreeMap<String, Instrument>,
    pub synth: SynthSettings,
    pub model: ModelSettings,
    pub segment: SegmentSettings,
    pub mixgen: MixgenSettings,
    pub separator: SeparatorConfig,
    pub knowledge: KnowledgeSettings,
    pub acceptance: AcceptanceSettings,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    pub music: Option<PathBuf>,
    pub cinematic: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSettings {
    pub sample_rate: u32,
    pub n_train: usize,
    pub n_test: usize,
    pub timbre_distance: f64,
    pub n_cinematic_train: usize,
    pub n_cinematic_test: usize,
    pub cinematic_duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    pub n_states: usize,
    pub n_mix: usize,
    pub n_iter: usize,
    pub mode: ReestimationMode,
    pub loop_penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSettings {
    pub min_len_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixgenSettings {
    pub n_draws: u64,
    pub augmentation: AugmentationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeSettings {
    pub k: usize,
    pub n_iter: usize,
    pub step: f64,
}

/// Corpus sizes for the acceptance pipeline run by `repro`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceSettings {
    pub toy_hmms: usize,
    pub em_inits: usize,
    pub em_iters: usize,
    pub em_clips: usize,
    pub alignment_clips: usize,
    pub separation_train_clips: usize,
    pub separation_test_clips: usize,
    pub cinematic_train_clips: usize,
    pub cinematic_test_clips: usize,
    pub nmf_problems: usize,
    pub nmf_iters: usize,
    pub mixgen_draws: u64,
    pub timbre_sweep: Vec<f64>,
    pub timbre_sweep_clips: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest is not valid JSON for this schema: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("manifest has {} problem(s): {}", .0.len(), .0.join("; "))]
    Invalid(Vec<String>),
}

impl RunManifest {
    pub fn from_json(text: &str) -> Result<Self, ManifestError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn default_manifest() -> Self {
        Self::from_json(DEFAULT_MANIFEST).expect("the shipped manifest parses")
    }

    /// Loads and resolves relative paths against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut m = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        m.resolve(base);
        Ok(m)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(p) = self.corpus.music.as_mut() {
            fix(p);
        }
        if let Some(p) = self.corpus.cinematic.as_mut() {
            fix(p);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifests serialize")
    }

    /// Every problem found, not just the first.
    pub fn validate(&self) -> Result<(), ManifestError> {
        let mut p = Vec::new();
        if self.schema != MANIFEST_SCHEMA {
            p.push(format!("schema must be '{MANIFEST_SCHEMA}', got '{}'", self.schema));
        }
        for (name, path) in [("corpus.music", &self.corpus.music), ("corpus.cinematic", &self.corpus.cinematic)] {
            if let Some(path) = path {
                if !path.join("manifest.jsonl").is_file() {
                    p.push(format!("{name}: {} has no manifest.jsonl", path.display()));
                }
            }
        }
        if self.instrument_map.is_empty() {
            p.push("instrument_map is empty".into());
        }
        for inst in Instrument::ALL {
            if !self.instrument_map.values().any(|i| *i == inst) {
                p.push(format!("instrument_map has no track for {inst}"));
            }
        }
        let s = &self.synth;
        if s.sample_rate < 16_000 {
            p.push(format!("synth.sample_rate {} is below 16000", s.sample_rate));
        }
        if s.n_train == 0 || s.n_test == 0 {
            p.push("synth.n_train and synth.n_test must be positive".into());
        }
        if !(0.0..=1.0).contains(&s.timbre_distance) {
            p.push(format!("synth.timbre_distance {} outside [0, 1]", s.timbre_distance));
        }
        if !(s.cinematic_duration_s >= 2.0) {
            p.push(format!("synth.cinematic_duration_s {} is below 2", s.cinematic_duration_s));
        }
        let m = &self.model;
        if m.n_states == 0 || m.n_mix == 0 {
            p.push("model.n_states and model.n_mix must be positive".into());
        }
        if !m.loop_penalty.is_finite() {
            p.push("model.loop_penalty must be finite".into());
        }
        if let Err(e) = self.mixgen.augmentation.validate() {
            p.push(format!("mixgen: {e}"));
        }
        let sep = &self.separator;
        if sep.n_bases == 0 || sep.max_train_frames == 0 {
            p.push("separator.n_bases and separator.max_train_frames must be positive".into());
        }
        if let Err(e) = sep.stft.validate() {
            p.push(format!("separator.stft: {e}"));
        }
        if self.knowledge.k == 0 || !(self.knowledge.step > 0.0) {
            p.push("knowledge.k and knowledge.step must be positive".into());
        }
        let a = &self.acceptance;
        if a.alignment_clips == 0 || a.separation_train_clips == 0 || a.separation_test_clips == 0 {
            p.push("acceptance corpus sizes must be positive".into());
        }
        if a.cinematic_train_clips == 0 || a.cinematic_test_clips == 0 || a.em_clips == 0 {
            p.push("acceptance cinematic and EM corpus sizes must be positive".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(ManifestError::Invalid(p))
        }
    }
}
