//! Short-time Fourier analysis and overlap-add resynthesis.
//!
//! The signal is left-padded by `window_size - hop` zeros and right-padded to a
//! whole number of hops, so every original sample lies under a full complement
//! of frames. Resynthesis overlap-adds the inverse transforms without a
//! synthesis window and divides by the constant overlap sum of the analysis
//! window, which is exact for COLA configurations.

use std::sync::Arc;

use rustfft::{num_complex::Complex64, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{DspError, WindowKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: WindowKind,
}

impl Default for StftConfig {
    /// 4096-sample periodic Hamming window, 1024-sample hop.
    fn default() -> Self {
        Self {
            window_size: 4096,
            hop: 1024,
            window: WindowKind::Hamming,
        }
    }
}

impl StftConfig {
    pub fn new(window_size: usize, hop: usize, window: WindowKind) -> Result<Self, DspError> {
        let cfg = Self {
            window_size,
            hop,
            window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    pub fn pad_left(&self) -> usize {
        self.window_size - self.hop
    }

    /// Overlap sum of the periodic analysis window across one hop period.
    pub fn overlap_sum(&self) -> Vec<f64> {
        let w = self.window.build(self.window_size, true);
        (0..self.hop)
            .map(|n| w.iter().skip(n).step_by(self.hop).sum())
            .collect()
    }

    /// Checks `0 < hop <= window_size` and the constant-overlap-add property.
    pub fn validate(&self) -> Result<(), DspError> {
        if self.window_size == 0 || self.hop == 0 || self.hop > self.window_size {
            return Err(DspError::InvalidConfig(format!(
                "need 0 < hop ({}) <= window_size ({})",
                self.hop, self.window_size
            )));
        }
        let sums = self.overlap_sum();
        let max = sums.iter().cloned().fold(f64::MIN, f64::max);
        let min = sums.iter().cloned().fold(f64::MAX, f64::min);
        let ripple = (max - min) / max.abs().max(f64::MIN_POSITIVE);
        if !(ripple < 1e-9) || max <= 0.0 {
            return Err(DspError::NotCola {
                window_size: self.window_size,
                hop: self.hop,
                ripple,
            });
        }
        Ok(())
    }

    /// Number of frames for a signal of `n_samples`.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples == 0 {
            0
        } else {
            (n_samples + self.pad_left()).div_ceil(self.hop)
        }
    }

    /// Sample span `[start, end)` of frame `i` in original (unpadded) coordinates.
    /// `start` may be negative for the leading frames.
    pub fn frame_span(&self, i: usize) -> (i64, i64) {
        let start = (i * self.hop) as i64 - self.pad_left() as i64;
        (start, start + self.window_size as i64)
    }
}

/// One-sided complex spectrogram, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub n_frames: usize,
    pub n_bins: usize,
    /// Length of the analysed signal, needed to trim the resynthesis.
    pub n_samples: usize,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        &mut self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn zeros_like(&self) -> Spectrogram {
        Spectrogram {
            data: vec![Complex64::new(0.0, 0.0); self.data.len()],
            ..*self
        }
    }
}

/// Cached FFT plans and window for one [`StftConfig`].
#[derive(Clone)]
pub struct StftProcessor {
    cfg: StftConfig,
    window: Vec<f64>,
    gain: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftProcessor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftProcessor").field("cfg", &self.cfg).finish()
    }
}

impl StftProcessor {
    pub fn new(cfg: StftConfig) -> Result<Self, DspError> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        let sums = cfg.overlap_sum();
        Ok(Self {
            window: cfg.window.build(cfg.window_size, true),
            gain: sums.iter().sum::<f64>() / sums.len() as f64,
            forward: planner.plan_fft_forward(cfg.window_size),
            inverse: planner.plan_fft_inverse(cfg.window_size),
            cfg,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn stft(&self, x: &[f64]) -> Spectrogram {
        let n_frames = self.cfg.n_frames(x.len());
        let n_bins = self.cfg.n_bins();
        let n = self.cfg.window_size;
        let mut data = Vec::with_capacity(n_frames * n_bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n_frames {
            let (start, _) = self.cfg.frame_span(i);
            for (k, slot) in buf.iter_mut().enumerate() {
                let idx = start + k as i64;
                let v = if idx >= 0 && (idx as usize) < x.len() {
                    x[idx as usize]
                } else {
                    0.0
                };
                *slot = Complex64::new(v * self.window[k], 0.0);
            }
            self.forward.process(&mut buf);
            data.extend_from_slice(&buf[..n_bins]);
        }
        Spectrogram {
            n_frames,
            n_bins,
            n_samples: x.len(),
            data,
        }
    }

    pub fn istft(&self, spec: &Spectrogram) -> Result<Vec<f64>, DspError> {
        let n = self.cfg.window_size;
        if spec.n_bins != self.cfg.n_bins() {
            return Err(DspError::ShapeMismatch(format!(
                "{} bins, expected {}",
                spec.n_bins,
                self.cfg.n_bins()
            )));
        }
        if spec.n_frames != self.cfg.n_frames(spec.n_samples) {
            return Err(DspError::ShapeMismatch(format!(
                "{} frames for {} samples, expected {}",
                spec.n_frames,
                spec.n_samples,
                self.cfg.n_frames(spec.n_samples)
            )));
        }
        let mut out = vec![0.0; spec.n_samples];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let scale = 1.0 / (n as f64 * self.gain);
        for i in 0..spec.n_frames {
            let frame = spec.frame(i);
            buf[..frame.len()].copy_from_slice(frame);
            for k in frame.len()..n {
                buf[k] = frame[n - k].conj();
            }
            self.inverse.process(&mut buf);
            let (start, _) = self.cfg.frame_span(i);
            for (k, c) in buf.iter().enumerate() {
                let idx = start + k as i64;
                if idx >= 0 && (idx as usize) < out.len() {
                    out[idx as usize] += c.re * scale;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use proptest::prelude::*;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut r = CounterRng::new(seed);
        (0..n).map(|_| r.uniform_range(-1.0, 1.0)).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = a.iter().map(|x| x * x).sum();
        (num / den).sqrt()
    }

    #[test]
    fn hamming_quarter_hop_is_cola() {
        assert!(StftConfig::default().validate().is_ok());
        assert!(StftConfig::new(1024, 512, WindowKind::Hann).is_ok());
    }

    #[test]
    fn non_cola_is_rejected() {
        let err = StftConfig::new(4096, 1000, WindowKind::Hamming).unwrap_err();
        assert!(matches!(err, DspError::NotCola { .. }));
        assert!(StftConfig::new(64, 128, WindowKind::Hann).is_err());
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let p = StftProcessor::new(StftConfig::default()).unwrap();
        let s = p.stft(&vec![0.0; 10_000]);
        assert!(s.n_frames > 0);
        assert!(s.data.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn white_noise_round_trip() {
        let p = StftProcessor::new(StftConfig::default()).unwrap();
        let x = noise(44_100, 5);
        let y = p.istft(&p.stft(&x)).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(rel_err(&x, &y) < 1e-6, "rel err {}", rel_err(&x, &y));
    }

    #[test]
    fn parseval_per_frame() {
        let cfg = StftConfig::new(256, 64, WindowKind::Hamming).unwrap();
        let p = StftProcessor::new(cfg).unwrap();
        let x = noise(3000, 8);
        let s = p.stft(&x);
        let mut time_energy = 0.0;
        for i in 0..s.n_frames {
            let (start, _) = cfg.frame_span(i);
            for k in 0..cfg.window_size {
                let idx = start + k as i64;
                if idx >= 0 && (idx as usize) < x.len() {
                    time_energy += (x[idx as usize] * p.window()[k]).powi(2);
                }
            }
        }
        let mut spec_energy = 0.0;
        for i in 0..s.n_frames {
            let f = s.frame(i);
            for (k, c) in f.iter().enumerate() {
                let weight = if k == 0 || k == f.len() - 1 { 1.0 } else { 2.0 };
                spec_energy += weight * c.norm_sqr();
            }
        }
        spec_energy /= cfg.window_size as f64;
        assert!((time_energy - spec_energy).abs() / time_energy < 1e-10);
    }

    #[test]
    fn istft_rejects_wrong_shape() {
        let p = StftProcessor::new(StftConfig::new(256, 64, WindowKind::Hann).unwrap()).unwrap();
        let mut s = p.stft(&noise(1000, 1));
        s.n_samples += 5000;
        assert!(matches!(p.istft(&s), Err(DspError::ShapeMismatch(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip_on_random_signals(
            n in 1usize..3000,
            seed in any::<u64>(),
            shape in 0usize..4,
        ) {
            let (win, hop, kind) = [
                (256, 64, WindowKind::Hamming),
                (256, 128, WindowKind::Hamming),
                (128, 64, WindowKind::Hann),
                (64, 64, WindowKind::Rectangular),
            ][shape];
            let p = StftProcessor::new(StftConfig::new(win, hop, kind).unwrap()).unwrap();
            let x = noise(n, seed);
            let y = p.istft(&p.stft(&x)).unwrap();
            prop_assert!(rel_err(&x, &y) < 1e-6);
        }
    }
}
