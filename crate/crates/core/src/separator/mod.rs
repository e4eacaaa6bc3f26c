//! Template-based separation. Each source gets a KL-NMF basis learned from
//! its solo material; a mixture is separated by fitting activations with the
//! bases fixed and applying soft masks to the complex STFT. Knowledge (a unit
//! timeline or activity vectors) gates which sources may be active in each
//! STFT frame: no active source routes nothing, one routes the whole frame,
//! several share it through the masks.

pub mod nmf;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{DspError, Spectrogram, StftConfig, StftProcessor, Waveform};
use crate::knowledge::ActivityVector;
use crate::knowledge::CATEGORIES;
use crate::score::{Unit, UnitTimeline};
use crate::synthsim::ACTIVITY_SHIFT_S;
use crate::wav::{write_wav_file, SampleFormat, WavError};
use nmf::Factorization;

pub const TEMPLATE_SCHEMA: &str = "scoreseg.templates";
pub const MASK_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SeparatorError {
    #[error("source '{0}' has no solo material; no template can be learned")]
    NoMaterial(String),
    #[error("knowledge names source '{0}', which the template model lacks")]
    UnknownSource(String),
    #[error("template model has {0} sources; at most 64 are supported")]
    TooManySources(usize),
    #[error("invalid template model: {0}")]
    InvalidModel(String),
    #[error("sample rate {got} Hz differs from the template model's {expected} Hz")]
    SampleRate { expected: u32, got: u32 },
    #[error(transparent)]
    Signal(#[from] DspError),
    #[error(transparent)]
    Wav(#[from] WavError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparatorConfig {
    pub n_bases: usize,
    pub learn_iter: usize,
    pub fit_iter: usize,
    /// Training frames per source are subsampled evenly down to this many.
    pub max_train_frames: usize,
    pub stft: StftConfig,
    pub seed: u64,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        Self {
            n_bases: 12,
            learn_iter: 80,
            fit_iter: 40,
            max_train_frames: 1200,
            stft: StftConfig::default(),
            seed: 0,
        }
    }
}

/// Per-source bases, each stored as `n_bases` rows of `n_freq` L1-normalized
/// nonnegative values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TemplateFile", into = "TemplateFile")]
pub struct TemplateModel {
    stft: StftConfig,
    sample_rate: u32,
    fit_iter: usize,
    sources: BTreeMap<String, Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    schema: String,
    stft: StftConfig,
    sample_rate: u32,
    fit_iter: usize,
    sources: BTreeMap<String, Vec<Vec<f64>>>,
}

impl TryFrom<TemplateFile> for TemplateModel {
    type Error = SeparatorError;

    fn try_from(f: TemplateFile) -> Result<Self, Self::Error> {
        if f.schema != TEMPLATE_SCHEMA {
            return Err(SeparatorError::InvalidModel(format!("schema '{}'", f.schema)));
        }
        TemplateModel::new(f.stft, f.sample_rate, f.fit_iter, f.sources)
    }
}

impl From<TemplateModel> for TemplateFile {
    fn from(m: TemplateModel) -> Self {
        TemplateFile {
            schema: TEMPLATE_SCHEMA.into(),
            stft: m.stft,
            sample_rate: m.sample_rate,
            fit_iter: m.fit_iter,
            sources: m.sources,
        }
    }
}

impl TemplateModel {
    pub fn new(
        stft: StftConfig,
        sample_rate: u32,
        fit_iter: usize,
        sources: BTreeMap<String, Vec<Vec<f64>>>,
    ) -> Result<Self, SeparatorError> {
        stft.validate()?;
        let bad = |m: String| Err(SeparatorError::InvalidModel(m));
        if sources.is_empty() {
            return bad("no sources".into());
        }
        if sources.len() > 64 {
            return Err(SeparatorError::TooManySources(sources.len()));
        }
        for (name, bases) in &sources {
            if bases.is_empty() {
                return bad(format!("{name}: no bases"));
            }
            for b in bases {
                if b.len() != stft.n_bins() {
                    return bad(format!("{name}: basis has {} bins, expected {}", b.len(), stft.n_bins()));
                }
                if b.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return bad(format!("{name}: negative or non-finite entry"));
                }
                let s: f64 = b.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return bad(format!("{name}: basis sums to {s}"));
                }
            }
        }
        Ok(Self {
            stft,
            sample_rate,
            fit_iter,
            sources,
        })
    }

    pub fn stft(&self) -> &StftConfig {
        &self.stft
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn source_names(&self) -> Vec<&str> {
        self.sources.keys().map(String::as_str).collect()
    }

    pub fn bases(&self, source: &str) -> Option<&[Vec<f64>]> {
        self.sources.get(source).map(Vec::as_slice)
    }

    fn source_index(&self, name: &str) -> Result<usize, SeparatorError> {
        self.sources
            .keys()
            .position(|k| k == name)
            .ok_or_else(|| SeparatorError::UnknownSource(name.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("template models serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, SeparatorError> {
        serde_json::from_str(text).map_err(|e| SeparatorError::InvalidModel(e.to_string()))
    }
}

fn mono_magnitudes(proc: &StftProcessor, w: &Waveform) -> (Vec<Spectrogram>, Vec<f64>) {
    let specs: Vec<Spectrogram> = w.channels().iter().map(|c| proc.stft(c)).collect();
    let n = specs[0].data.len();
    let scale = 1.0 / specs.len() as f64;
    let mut mag = vec![0.0; n];
    for s in &specs {
        for (m, c) in mag.iter_mut().zip(&s.data) {
            *m += c.norm() * scale;
        }
    }
    (specs, mag)
}

/// Learns one basis set per source from its solo segments.
pub fn learn_templates(
    solo: &BTreeMap<String, Vec<Waveform>>,
    cfg: &SeparatorConfig,
) -> Result<TemplateModel, SeparatorError> {
    let proc = StftProcessor::new(cfg.stft)?;
    let nf = cfg.stft.n_bins();
    let mut rate = None;
    for (name, segs) in solo {
        if segs.iter().all(|s| s.n_samples() == 0 || s.is_silent()) {
            return Err(SeparatorError::NoMaterial(name.clone()));
        }
        for s in segs {
            match rate {
                None => rate = Some(s.sample_rate()),
                Some(r) if r != s.sample_rate() => {
                    return Err(SeparatorError::SampleRate {
                        expected: r,
                        got: s.sample_rate(),
                    })
                }
                _ => {}
            }
        }
    }
    let Some(sample_rate) = rate else {
        return Err(SeparatorError::InvalidModel("no sources".into()));
    };
    let entries: Vec<(&String, &Vec<Waveform>)> = solo.iter().collect();
    let learned: Vec<(String, Vec<Vec<f64>>)> = entries
        .par_iter()
        .enumerate()
        .map(|(i, &(name, segs))| {
            let mut frames: Vec<&[f64]> = Vec::new();
            let mags: Vec<Vec<f64>> = segs.iter().map(|s| mono_magnitudes(&proc, s).1).collect();
            for m in &mags {
                frames.extend(m.chunks(nf).filter(|f| f.iter().any(|x| *x > 0.0)));
            }
            let n = frames.len();
            let keep = cfg.max_train_frames.max(1).min(n);
            let mut v = Vec::with_capacity(keep * nf);
            for j in 0..keep {
                v.extend_from_slice(frames[j * n / keep]);
            }
            let mut fz = Factorization::seeded(&v, nf, cfg.n_bases, cfg.seed.wrapping_add(i as u64));
            fz.fit(&v, cfg.learn_iter, true, false);
            fz.normalize();
            (name.clone(), fz.w.chunks(nf).map(|c| c.to_vec()).collect())
        })
        .collect();
    TemplateModel::new(cfg.stft, sample_rate, cfg.fit_iter, learned.into_iter().collect())
}

/// Frame-routing statistics of one separation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatingStats {
    pub frames: usize,
    pub silent_frames: usize,
    pub single_source_frames: usize,
    pub multi_source_frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StemSet {
    pub stems: BTreeMap<String, Waveform>,
    pub gating: GatingStats,
}

impl StemSet {
    pub fn sum(&self) -> Waveform {
        let mut it = self.stems.values();
        let first = it.next().expect("at least one stem").clone();
        let sr = first.sample_rate();
        let mut chans = first.into_channels();
        for w in it {
            for (a, b) in chans.iter_mut().zip(w.channels()) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
        Waveform::new(chans, sr).expect("stems share a shape")
    }

    /// Writes `<clip>.<source>.wav` per stem.
    pub fn write(&self, dir: &Path, clip: &str) -> Result<(), SeparatorError> {
        for (name, w) in &self.stems {
            write_wav_file(&dir.join(format!("{clip}.{name}.wav")), w, SampleFormat::Float32)?;
        }
        Ok(())
    }
}

/// Active-source bitmask (bit i = i-th source of the model) per 10 ms frame.
struct FrameGates {
    masks: Vec<u64>,
    shift_s: f64,
}

impl FrameGates {
    /// Union over the knowledge frames overlapping the sample span.
    fn union(&self, start: i64, end: i64, sr: u32) -> u64 {
        let n = self.masks.len();
        let to_frame = |s: i64| (s.max(0) as f64 / sr as f64 / self.shift_s).floor() as usize;
        let a = to_frame(start).min(n - 1);
        let b = (to_frame(end - 1) + 1).clamp(a + 1, n);
        self.masks[a..b].iter().fold(0, |acc, m| acc | m)
    }
}

/// Soft masks of one separation, frame-major per source, plus the active-source
/// bitmask of each STFT frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub n_frames: usize,
    pub n_bins: usize,
    pub sources: Vec<String>,
    pub active: Vec<u64>,
    pub masks: Vec<Vec<f64>>,
}

fn separate_gated(
    mixture: &Waveform,
    gates: Option<FrameGates>,
    tm: &TemplateModel,
) -> Result<(StemSet, MaskSet), SeparatorError> {
    if mixture.sample_rate() != tm.sample_rate {
        return Err(SeparatorError::SampleRate {
            expected: tm.sample_rate,
            got: mixture.sample_rate(),
        });
    }
    let proc = StftProcessor::new(tm.stft)?;
    let nf = tm.stft.n_bins();
    let names: Vec<&String> = tm.sources.keys().collect();
    let ns = names.len();
    let all: u64 = if ns == 64 { u64::MAX } else { (1u64 << ns) - 1 };
    let (specs, mag) = mono_magnitudes(&proc, mixture);
    let n_frames = specs[0].n_frames;
    let active: Vec<u64> = (0..n_frames)
        .map(|t| match (&gates, mixture.n_samples()) {
            (Some(g), n) if n > 0 && !g.masks.is_empty() => {
                let (a, b) = tm.stft.frame_span(t);
                g.union(a, b, tm.sample_rate)
            }
            _ => all,
        })
        .collect();

    let mut gating = GatingStats {
        frames: n_frames,
        ..Default::default()
    };
    for m in &active {
        match m.count_ones() {
            0 => gating.silent_frames += 1,
            1 => gating.single_source_frames += 1,
            _ => gating.multi_source_frames += 1,
        }
    }

    // Activation fitting on the frames several sources share.
    let multi: Vec<usize> = (0..n_frames).filter(|&t| active[t].count_ones() > 1).collect();
    let owner: Vec<usize> = tm.sources.values().enumerate().flat_map(|(i, b)| std::iter::repeat_n(i, b.len())).collect();
    let k = owner.len();
    let mut masks: Vec<Vec<f64>> = vec![vec![0.0; n_frames * nf]; ns];
    if !multi.is_empty() {
        let mut v = Vec::with_capacity(multi.len() * nf);
        for &t in &multi {
            v.extend_from_slice(&mag[t * nf..(t + 1) * nf]);
        }
        let mut fz = Factorization::seeded(&v, nf, k, 0);
        fz.w = tm.sources.values().flatten().flatten().copied().collect();
        for (row, &t) in multi.iter().enumerate() {
            for j in 0..k {
                if active[t] >> owner[j] & 1 == 0 {
                    fz.h[row * k + j] = 0.0;
                }
            }
        }
        fz.fit(&v, tm.fit_iter, false, false);
        let mut per_source = vec![vec![0.0; nf]; ns];
        for (row, &t) in multi.iter().enumerate() {
            per_source.iter_mut().for_each(|p| p.iter_mut().for_each(|x| *x = 0.0));
            for j in 0..k {
                let h = fz.h[row * k + j];
                if h != 0.0 {
                    for (o, w) in per_source[owner[j]].iter_mut().zip(&fz.w[j * nf..(j + 1) * nf]) {
                        *o += h * w;
                    }
                }
            }
            let srcs: Vec<usize> = (0..ns).filter(|&s| active[t] >> s & 1 == 1).collect();
            for f in 0..nf {
                let den: f64 = srcs.iter().map(|&s| per_source[s][f]).sum();
                for &s in &srcs {
                    masks[s][t * nf + f] = if den < MASK_EPS {
                        1.0 / srcs.len() as f64
                    } else {
                        per_source[s][f] / den
                    };
                }
            }
        }
    }
    for t in 0..n_frames {
        if active[t].count_ones() == 1 {
            let s = active[t].trailing_zeros() as usize;
            masks[s][t * nf..(t + 1) * nf].iter_mut().for_each(|x| *x = 1.0);
        }
    }

    let mut stems = BTreeMap::new();
    for (s, name) in names.iter().enumerate() {
        let mut chans = Vec::with_capacity(specs.len());
        for spec in &specs {
            let mut masked = spec.clone();
            for (c, m) in masked.data.iter_mut().zip(&masks[s]) {
                *c *= *m;
            }
            chans.push(proc.istft(&masked)?);
        }
        stems.insert((*name).clone(), Waveform::new(chans, mixture.sample_rate())?);
    }
    let masks = MaskSet {
        n_frames,
        n_bins: nf,
        sources: names.into_iter().cloned().collect(),
        active,
        masks,
    };
    Ok((StemSet { stems, gating }, masks))
}

/// The two-instrument sources a unit activates.
pub fn unit_sources(u: Unit) -> &'static [&'static str] {
    match u {
        Unit::Silence => &[],
        Unit::Piano => &["piano"],
        Unit::Bass => &["bass"],
        Unit::Mixture => &["piano", "bass"],
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Knowledge<'a> {
    None,
    Timeline(&'a UnitTimeline),
    Activity(&'a [ActivityVector]),
}

fn gates(knowledge: Knowledge<'_>, tm: &TemplateModel) -> Result<Option<FrameGates>, SeparatorError> {
    Ok(match knowledge {
        Knowledge::None => None,
        Knowledge::Timeline(tl) => {
            let mut bits = [0u64; 4];
            for u in Unit::ALL {
                for s in unit_sources(u) {
                    bits[u.index()] |= 1 << tm.source_index(s)?;
                }
            }
            Some(FrameGates {
                masks: tl.labels().iter().map(|u| bits[u.index()]).collect(),
                shift_s: tl.frame_shift_ms / 1000.0,
            })
        }
        Knowledge::Activity(activity) => {
            let idx: Vec<usize> = CATEGORIES.iter().map(|c| tm.source_index(c)).collect::<Result<_, _>>()?;
            let masks = activity
                .iter()
                .map(|a| {
                    let top = a.top_level();
                    (0..3).filter(|&c| top[c]).fold(0u64, |m, c| m | 1 << idx[c])
                })
                .collect();
            Some(FrameGates {
                masks,
                shift_s: ACTIVITY_SHIFT_S,
            })
        }
    })
}

/// Separation that also returns the masks it applied.
pub fn separate_detailed(
    mixture: &Waveform,
    knowledge: Knowledge<'_>,
    tm: &TemplateModel,
) -> Result<(StemSet, MaskSet), SeparatorError> {
    separate_gated(mixture, gates(knowledge, tm)?, tm)
}

/// Separates with an optional unit timeline gating the sources.
pub fn separate(mixture: &Waveform, knowledge: Option<&UnitTimeline>, tm: &TemplateModel) -> Result<StemSet, SeparatorError> {
    let k = knowledge.map_or(Knowledge::None, Knowledge::Timeline);
    Ok(separate_detailed(mixture, k, tm)?.0)
}

/// Separates with per-frame (10 ms) activity vectors gating the speech,
/// music and sfx sources by their top-level bits.
pub fn conditioned_separate(
    mixture: &Waveform,
    activity: &[ActivityVector],
    tm: &TemplateModel,
) -> Result<StemSet, SeparatorError> {
    Ok(separate_detailed(mixture, Knowledge::Activity(activity), tm)?.0)
}

#[cfg(test)]
mod tests;
