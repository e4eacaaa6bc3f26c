//! HTK-style MFCC extraction with regression deltas.

use std::sync::Arc;

use rustfft::{num_complex::Complex64, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{frame_count, DspError, Waveform, WindowKind};

/// Frame-indexed feature matrix, row-major `n_frames x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Vec<f64>,
    n_frames: usize,
    dim: usize,
    pub frame_shift_ms: f64,
    pub frame_length_ms: f64,
}

impl FeatureSequence {
    pub fn new(data: Vec<f64>, dim: usize, frame_shift_ms: f64, frame_length_ms: f64) -> Self {
        assert!(dim > 0, "feature dim must be positive");
        assert_eq!(data.len() % dim, 0, "data length not a multiple of dim");
        Self {
            n_frames: data.len() / dim,
            data,
            dim,
            frame_shift_ms,
            frame_length_ms,
        }
    }

    /// Frames with the default 10 ms / 25 ms geometry.
    pub fn from_frames(frames: &[Vec<f64>], dim: usize) -> Self {
        let mut data = Vec::with_capacity(frames.len() * dim);
        for f in frames {
            assert_eq!(f.len(), dim);
            data.extend_from_slice(f);
        }
        Self::new(data, dim, 10.0, 25.0)
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.n_frames == 0
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Frames `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> FeatureSequence {
        FeatureSequence {
            data: self.data[start * self.dim..end * self.dim].to_vec(),
            n_frames: end - start,
            dim: self.dim,
            frame_shift_ms: self.frame_shift_ms,
            frame_length_ms: self.frame_length_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfccConfig {
    pub sample_rate: u32,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub n_static: usize,
    pub preemphasis: f64,
    pub log_floor: f64,
    pub low_hz: f64,
    /// Upper filterbank edge; Nyquist when absent.
    pub high_hz: Option<f64>,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            n_fft: 512,
            n_mels: 26,
            n_static: 13,
            preemphasis: 0.97,
            log_floor: 1e-10,
            low_hz: 0.0,
            high_hz: None,
        }
    }
}

impl MfccConfig {
    pub fn win_samples(&self) -> usize {
        (f64::from(self.sample_rate) * self.frame_length_ms / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (f64::from(self.sample_rate) * self.frame_shift_ms / 1000.0).round() as usize
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * ((mel / 1127.0).exp() - 1.0)
}

/// Triangular filters on the HTK mel scale, evaluated at the `n_fft / 2 + 1`
/// bin frequencies. Returned as `n_mels` rows of per-bin weights.
pub fn mel_filterbank(
    n_mels: usize,
    n_fft: usize,
    sample_rate: u32,
    low_hz: f64,
    high_hz: f64,
) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let lo = hz_to_mel(low_hz);
    let hi = hz_to_mel(high_hz);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| lo + (hi - lo) * i as f64 / (n_mels + 1) as f64)
        .collect();
    let bin_hz = f64::from(sample_rate) / n_fft as f64;
    (0..n_mels)
        .map(|m| {
            let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let mel = hz_to_mel(k as f64 * bin_hz);
                    if mel <= left || mel >= right {
                        0.0
                    } else if mel <= centre {
                        (mel - left) / (centre - left)
                    } else {
                        (right - mel) / (right - centre)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal-scaled DCT-II rows: `sqrt(2/n_in) * cos(pi * k * (n + 0.5) / n_in)`.
pub fn dct_matrix(n_out: usize, n_in: usize) -> Vec<Vec<f64>> {
    let scale = (2.0 / n_in as f64).sqrt();
    (0..n_out)
        .map(|k| {
            (0..n_in)
                .map(|n| {
                    scale * (std::f64::consts::PI * k as f64 * (n as f64 + 0.5) / n_in as f64).cos()
                })
                .collect()
        })
        .collect()
}

/// Precomputed filterbank, DCT and FFT plan for one [`MfccConfig`].
pub struct MfccExtractor {
    cfg: MfccConfig,
    window: Vec<f64>,
    filterbank: Vec<Vec<f64>>,
    dct: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor").field("cfg", &self.cfg).finish()
    }
}

impl MfccExtractor {
    pub fn new(cfg: MfccConfig) -> Result<Self, DspError> {
        let win = cfg.win_samples();
        if cfg.sample_rate == 0 {
            return Err(DspError::ZeroSampleRate);
        }
        if win == 0 || cfg.hop_samples() == 0 {
            return Err(DspError::InvalidConfig("frame length and shift must be positive".into()));
        }
        if cfg.n_fft < win {
            return Err(DspError::InvalidConfig(format!(
                "n_fft {} shorter than frame length {win}",
                cfg.n_fft
            )));
        }
        if cfg.n_mels < cfg.n_static || cfg.n_static == 0 {
            return Err(DspError::InvalidConfig(format!(
                "need 0 < n_static ({}) <= n_mels ({})",
                cfg.n_static, cfg.n_mels
            )));
        }
        let nyquist = f64::from(cfg.sample_rate) / 2.0;
        let high = cfg.high_hz.unwrap_or(nyquist).min(nyquist);
        let filterbank = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.low_hz, high);
        let dct = dct_matrix(cfg.n_static, cfg.n_mels);
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(Self {
            window: WindowKind::Hamming.build(win, false),
            filterbank,
            dct,
            fft,
            cfg,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    /// Log mel filterbank energies per frame (before the DCT).
    pub fn log_mel_frames(&self, w: &Waveform) -> Result<Vec<Vec<f64>>, DspError> {
        Ok(self.analyse(w)?.into_iter().map(|(logmel, _)| logmel).collect())
    }

    /// Static MFCCs; coefficient 0 is replaced by the log frame energy.
    /// Multichannel input is downmixed to mono first.
    pub fn extract(&self, w: &Waveform) -> Result<FeatureSequence, DspError> {
        let frames = self.analyse(w)?;
        let n_static = self.cfg.n_static;
        let mut data = Vec::with_capacity(frames.len() * n_static);
        for (logmel, log_energy) in frames {
            data.push(log_energy);
            for row in &self.dct[1..] {
                data.push(row.iter().zip(&logmel).map(|(a, b)| a * b).sum());
            }
        }
        Ok(FeatureSequence::new(
            data,
            n_static,
            self.cfg.frame_shift_ms,
            self.cfg.frame_length_ms,
        ))
    }

    fn analyse(&self, w: &Waveform) -> Result<Vec<(Vec<f64>, f64)>, DspError> {
        if w.sample_rate() != self.cfg.sample_rate {
            return Err(DspError::SampleRateMismatch {
                got: w.sample_rate(),
                expected: self.cfg.sample_rate,
            });
        }
        let mono = w.to_mono();
        let x = mono.channel(0);
        let win = self.cfg.win_samples();
        let hop = self.cfg.hop_samples();
        let n_frames = frame_count(x.len(), win, hop);
        let n_bins = self.cfg.n_fft / 2 + 1;
        let floor = self.cfg.log_floor;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.cfg.n_fft];
        let mut mags = vec![0.0; n_bins];
        let mut out = Vec::with_capacity(n_frames);
        for i in 0..n_frames {
            let frame = &x[i * hop..i * hop + win];
            let energy: f64 = frame.iter().map(|v| v * v).sum();
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for n in 0..win {
                let prev = if n == 0 { frame[0] } else { frame[n - 1] };
                let emph = frame[n] - self.cfg.preemphasis * prev;
                buf[n] = Complex64::new(emph * self.window[n], 0.0);
            }
            self.fft.process(&mut buf);
            for (m, c) in mags.iter_mut().zip(&buf) {
                *m = c.norm();
            }
            let logmel = self
                .filterbank
                .iter()
                .map(|filt| {
                    let e: f64 = filt.iter().zip(&mags).map(|(a, b)| a * b).sum();
                    e.max(floor).ln()
                })
                .collect();
            out.push((logmel, energy.max(floor).ln()));
        }
        Ok(out)
    }
}

/// Appends first- and second-order regression deltas:
/// `d_t = sum_{k=1..K} k (c_{t+k} - c_{t-k}) / (2 sum k^2)` with edge replication.
/// The output dimension is three times the input dimension.
pub fn append_deltas(f: &FeatureSequence, delta_window: usize) -> FeatureSequence {
    let delta = regression_delta(f, delta_window);
    let accel = regression_delta(&delta, delta_window);
    let dim = f.dim();
    let mut data = Vec::with_capacity(f.n_frames() * dim * 3);
    for t in 0..f.n_frames() {
        data.extend_from_slice(f.frame(t));
        data.extend_from_slice(delta.frame(t));
        data.extend_from_slice(accel.frame(t));
    }
    FeatureSequence::new(data, dim * 3, f.frame_shift_ms, f.frame_length_ms)
}

fn regression_delta(f: &FeatureSequence, window: usize) -> FeatureSequence {
    let n = f.n_frames();
    let dim = f.dim();
    let mut data = vec![0.0; n * dim];
    if n > 1 && window > 0 {
        let norm = 2.0 * (1..=window).map(|k| (k * k) as f64).sum::<f64>();
        for t in 0..n {
            let out = &mut data[t * dim..(t + 1) * dim];
            for k in 1..=window {
                let fwd = f.frame((t + k).min(n - 1));
                let back = f.frame(t.saturating_sub(k));
                for d in 0..dim {
                    out[d] += k as f64 * (fwd[d] - back[d]);
                }
            }
            out.iter_mut().for_each(|v| *v /= norm);
        }
    }
    FeatureSequence::new(data, dim, f.frame_shift_ms, f.frame_length_ms)
}
