//! Signal containers, framing, windows and resampling.
//!
//! Feature extraction lives in [`mfcc`], spectral analysis/synthesis in [`stft`].

pub mod mfcc;
pub mod stft;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mfcc::{append_deltas, dct_matrix, mel_filterbank, FeatureSequence, MfccConfig, MfccExtractor};
pub use stft::{Spectrogram, StftConfig, StftProcessor};

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("waveform needs at least one channel")]
    NoChannels,
    #[error("channel {channel} has {len} samples, expected {expected}")]
    ChannelLengthMismatch {
        channel: usize,
        len: usize,
        expected: usize,
    },
    #[error("sample rate {got} Hz does not match the configured {expected} Hz")]
    SampleRateMismatch { got: u32, expected: u32 },
    #[error("window {window_size} / hop {hop} is not constant-overlap-add (ripple {ripple:.3e})")]
    NotCola {
        window_size: usize,
        hop: usize,
        ripple: f64,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("spectrogram shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Multichannel audio. Samples are `f64`; nominal range is [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::ZeroSampleRate);
        }
        let Some(first) = channels.first() else {
            return Err(DspError::NoChannels);
        };
        let expected = first.len();
        for (channel, c) in channels.iter().enumerate() {
            if c.len() != expected {
                return Err(DspError::ChannelLengthMismatch {
                    channel,
                    len: c.len(),
                    expected,
                });
            }
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn silent(n_samples: usize, n_channels: usize, sample_rate: u32) -> Result<Self, DspError> {
        Self::new(vec![vec![0.0; n_samples]; n_channels], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.channels[0].len()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / f64::from(self.sample_rate)
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.channels[idx]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channels_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Channel mean. A mono waveform is returned as a clone.
    pub fn to_mono(&self) -> Waveform {
        if self.channels.len() == 1 {
            return self.clone();
        }
        let n = self.n_samples();
        let scale = 1.0 / self.channels.len() as f64;
        let mut out = vec![0.0; n];
        for c in &self.channels {
            for (o, &x) in out.iter_mut().zip(c) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|x| *x *= scale);
        Waveform {
            channels: vec![out],
            sample_rate: self.sample_rate,
        }
    }

    /// Samples `[start, end)` of every channel; bounds are clamped.
    pub fn slice(&self, start: usize, end: usize) -> Waveform {
        let n = self.n_samples();
        let end = end.min(n);
        let start = start.min(end);
        Waveform {
            channels: self.channels.iter().map(|c| c[start..end].to_vec()).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn energy(&self) -> f64 {
        self.channels.iter().flatten().map(|x| x * x).sum()
    }

    pub fn is_silent(&self) -> bool {
        self.channels.iter().flatten().all(|&x| x == 0.0)
    }

    pub fn peak(&self) -> f64 {
        self.channels.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Linear-interpolation resampling. No anti-alias filtering is applied.
    pub fn resample_linear(&self, target_rate: u32) -> Result<Waveform, DspError> {
        if target_rate == 0 {
            return Err(DspError::ZeroSampleRate);
        }
        if target_rate == self.sample_rate {
            return Ok(self.clone());
        }
        let n = self.n_samples();
        let n_out = (n as u64 * u64::from(target_rate) / u64::from(self.sample_rate)) as usize;
        let step = f64::from(self.sample_rate) / f64::from(target_rate);
        let channels = self
            .channels
            .iter()
            .map(|c| {
                (0..n_out)
                    .map(|m| {
                        let pos = m as f64 * step;
                        let i = pos.floor() as usize;
                        let frac = pos - i as f64;
                        let a = c[i.min(n - 1)];
                        let b = c[(i + 1).min(n - 1)];
                        a + (b - a) * frac
                    })
                    .collect()
            })
            .collect();
        Ok(Waveform {
            channels,
            sample_rate: target_rate,
        })
    }
}

/// Number of full frames: `floor((n - win) / hop) + 1` when `n >= win`, else 0.
pub fn frame_count(n_samples: usize, win: usize, hop: usize) -> usize {
    if win == 0 || hop == 0 || n_samples < win {
        0
    } else {
        (n_samples - win) / hop + 1
    }
}

/// Frame `i` covers samples `[i * hop, i * hop + win)`. Partial trailing frames are dropped.
pub fn frame_signal(samples: &[f64], win: usize, hop: usize) -> Vec<&[f64]> {
    (0..frame_count(samples.len(), win, hop))
        .map(|i| &samples[i * hop..i * hop + win])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    #[default]
    Hamming,
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Symmetric windows divide by `n - 1` (HTK framing); periodic ones by `n` (STFT).
    pub fn build(self, n: usize, periodic: bool) -> Vec<f64> {
        if n == 1 {
            return vec![1.0];
        }
        let denom = if periodic { n } else { n - 1 } as f64;
        (0..n)
            .map(|i| {
                let phase = 2.0 * std::f64::consts::PI * i as f64 / denom;
                match self {
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }
}
