//! Synthetic labelled corpora.
//!
//! [`music`] renders piano/bass/mixture/silence clips with ground-truth stems,
//! scores and unit timelines; [`cinematic`] renders speech/music/sfx clips with
//! per-frame activity vectors; [`corpus`] writes either kind to disk with a
//! JSON-lines manifest.
//!
//! Everything is a pure function of the seed: all randomness comes from
//! [`CounterRng`](crate::rng::CounterRng) streams split by fixed labels.

pub mod cinematic;
pub mod corpus;
pub mod music;

use thiserror::Error;

use crate::dsp::{frame_count, DspError, MfccConfig};
use crate::score::ScoreError;

pub use cinematic::{ACTIVITY_SHIFT_S, random_activity_plan, synth_cinematic_clip, ActivityPlan, CinematicClip};
pub use music::{synth_music_clip, ClipSpec, LabeledClip};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible section plan: {0}")]
    Infeasible(String),
    #[error("invalid clip spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Signal(#[from] DspError),
}

/// MFCC frame count for a clip of `n_samples` at `sample_rate` once it has been
/// brought to the alignment rate (default MFCC geometry).
pub fn alignment_frames(n_samples: usize, sample_rate: u32) -> usize {
    let cfg = MfccConfig::default();
    let n = (n_samples as u64 * u64::from(cfg.sample_rate) / u64::from(sample_rate)) as usize;
    frame_count(n, cfg.win_samples(), cfg.hop_samples())
}

pub(crate) fn midi_to_hz(pitch: f64) -> f64 {
    440.0 * 2f64.powf((pitch - 69.0) / 12.0)
}

pub(crate) fn ms_to_samples(ms: u64, sample_rate: u32) -> usize {
    ((ms as u128 * u128::from(sample_rate) + 500) / 1000) as usize
}

/// Attack ramp, exponential decay, linear release ending exactly at the note end.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Envelope {
    pub attack_s: f64,
    pub decay_tau_s: f64,
    pub release_s: f64,
}

impl Envelope {
    pub fn gain(&self, t: f64, dur: f64) -> f64 {
        let a = if self.attack_s > 0.0 {
            (t / self.attack_s).min(1.0)
        } else {
            1.0
        };
        let d = if self.decay_tau_s.is_finite() {
            (-t / self.decay_tau_s).exp()
        } else {
            1.0
        };
        let r = if self.release_s > 0.0 {
            ((dur - t) / self.release_s).clamp(0.0, 1.0)
        } else {
            1.0
        };
        a * d * r
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Partial {
    pub freq: f64,
    pub amp: f64,
    pub phase: f64,
}

/// Adds a sum of sinusoids under `env` into `out[start..end)`. Partials at or
/// above 0.45 × sample rate are skipped.
pub(crate) fn render_partials(
    out: &mut [f64],
    sample_rate: u32,
    start: usize,
    end: usize,
    partials: &[Partial],
    env: Envelope,
) {
    let end = end.min(out.len());
    if start >= end {
        return;
    }
    let sr = f64::from(sample_rate);
    let dur = (end - start) as f64 / sr;
    let live: Vec<&Partial> = partials.iter().filter(|p| p.freq < 0.45 * sr).collect();
    for (k, o) in out[start..end].iter_mut().enumerate() {
        let t = k as f64 / sr;
        let g = env.gain(t, dur);
        if g == 0.0 {
            continue;
        }
        let s: f64 = live
            .iter()
            .map(|p| p.amp * (std::f64::consts::TAU * p.freq * t + p.phase).sin())
            .sum();
        *o += g * s;
    }
}
