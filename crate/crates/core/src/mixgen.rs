//! Pseudo-mixture generation from detected solo segments: random crop,
//! uniform dB gain, channel swap and source dropping, all drawn from a
//! counter-based stream keyed by `(seed, draw_index)`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{DspError, Waveform};
use crate::rng::CounterRng;
use crate::score::Instrument;
use crate::segmenter::InventorySegment;
use crate::wav::{write_atomic, write_wav_file, SampleFormat, WavError};

#[derive(Debug, Error)]
pub enum MixgenError {
    #[error("invalid augmentation config: {0}")]
    Config(String),
    #[error("the {0} pool is empty")]
    EmptyPool(&'static str),
    #[error("segment {id} has {got} samples, a {need}-sample crop does not fit")]
    SegmentTooShort { id: String, got: usize, need: usize },
    #[error("pool segments disagree on sample rate or channel count ({0})")]
    Format(String),
    #[error(transparent)]
    Signal(#[from] DspError),
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropMode {
    /// Each source is dropped independently with `drop_prob`.
    #[default]
    Independent,
    /// With `drop_prob`, exactly one of the two sources (chosen uniformly) is dropped.
    ExactlyOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub crop_s: f64,
    pub min_seg_s: f64,
    pub gain_range_db: (f64, f64),
    pub channel_swap_prob: f64,
    pub drop_prob: f64,
    pub drop_mode: DropMode,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            crop_s: 3.0,
            min_seg_s: 3.0,
            gain_range_db: (-10.0, 10.0),
            channel_swap_prob: 0.5,
            drop_prob: 0.1,
            drop_mode: DropMode::Independent,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<(), MixgenError> {
        let mut problems = Vec::new();
        for (name, p) in [("channel_swap_prob", self.channel_swap_prob), ("drop_prob", self.drop_prob)] {
            if !(0.0..=1.0).contains(&p) {
                problems.push(format!("{name} = {p} outside [0, 1]"));
            }
        }
        let (lo, hi) = self.gain_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            problems.push(format!("gain range [{lo}, {hi}] dB"));
        }
        if !(self.crop_s > 0.0) {
            problems.push(format!("crop_s = {} must be positive", self.crop_s));
        }
        if !(self.crop_s <= self.min_seg_s) {
            problems.push(format!("crop_s {} exceeds min_seg_s {}", self.crop_s, self.min_seg_s));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(MixgenError::Config(problems.join("; ")))
        }
    }
}

/// Inventory segments of `instrument`'s solo unit lasting at least `min_seg_s`.
pub fn build_pool(inventory: &[InventorySegment], instrument: Instrument, min_seg_s: f64) -> Vec<InventorySegment> {
    inventory
        .iter()
        .filter(|s| s.unit == instrument.solo_unit() && s.duration_s() >= min_seg_s - 1e-9)
        .cloned()
        .collect()
}

/// A pool segment with its audio.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub id: String,
    pub audio: Waveform,
}

impl PoolEntry {
    /// Cuts the segment's span out of the clip audio it was detected in.
    pub fn cut(seg: &InventorySegment, clip_audio: &Waveform) -> PoolEntry {
        let sr = clip_audio.sample_rate() as f64;
        let n = clip_audio.n_samples();
        let a = ((seg.start_s * sr).round() as usize).min(n);
        let b = ((seg.end_s * sr).round() as usize).clamp(a, n);
        PoolEntry {
            id: seg.id(),
            audio: clip_audio.slice(a, b),
        }
    }
}

/// One source's share of a draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDraw {
    pub segment_id: String,
    pub pool_index: usize,
    pub offset_samples: usize,
    pub gain_db: f64,
    pub swapped: bool,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub draw_index: u64,
    pub target: SourceDraw,
    pub perturbation: SourceDraw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoMixture {
    pub mixture: Waveform,
    pub target_clean: Waveform,
    pub perturbation_clean: Waveform,
    pub provenance: Provenance,
}

/// Checks pool formats and lengths; run once before drawing.
pub fn check_pools(target: &[PoolEntry], perturbation: &[PoolEntry], cfg: &AugmentationConfig) -> Result<(), MixgenError> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(MixgenError::EmptyPool("target"));
    }
    if perturbation.is_empty() {
        return Err(MixgenError::EmptyPool("perturbation"));
    }
    let first = &target[0].audio;
    let need = crop_len(cfg, first.sample_rate());
    for e in target.iter().chain(perturbation) {
        if e.audio.sample_rate() != first.sample_rate() || e.audio.n_channels() != first.n_channels() {
            return Err(MixgenError::Format(e.id.clone()));
        }
        if e.audio.n_samples() < need {
            return Err(MixgenError::SegmentTooShort {
                id: e.id.clone(),
                got: e.audio.n_samples(),
                need,
            });
        }
    }
    Ok(())
}

fn crop_len(cfg: &AugmentationConfig, sr: u32) -> usize {
    (cfg.crop_s * sr as f64).round() as usize
}

fn draw_source(
    rng: &mut CounterRng,
    pool: &[PoolEntry],
    cfg: &AugmentationConfig,
    len: usize,
) -> Result<SourceDraw, MixgenError> {
    let pool_index = rng.below(pool.len());
    let entry = &pool[pool_index];
    if entry.audio.n_samples() < len {
        return Err(MixgenError::SegmentTooShort {
            id: entry.id.clone(),
            got: entry.audio.n_samples(),
            need: len,
        });
    }
    let offset_samples = rng.below(entry.audio.n_samples() - len + 1);
    let (lo, hi) = cfg.gain_range_db;
    let gain_db = rng.uniform_range(lo, hi);
    let swapped = rng.bernoulli(cfg.channel_swap_prob);
    Ok(SourceDraw {
        segment_id: entry.id.clone(),
        pool_index,
        offset_samples,
        gain_db,
        swapped,
        dropped: false,
    })
}

fn render(entry: &PoolEntry, d: &SourceDraw, len: usize) -> Waveform {
    let sr = entry.audio.sample_rate();
    let mut chans: Vec<Vec<f64>> = if d.dropped {
        vec![vec![0.0; len]; entry.audio.n_channels()]
    } else {
        let g = 10f64.powf(d.gain_db / 20.0);
        entry
            .audio
            .channels()
            .iter()
            .map(|c| c[d.offset_samples..d.offset_samples + len].iter().map(|x| x * g).collect())
            .collect()
    };
    if d.swapped && chans.len() >= 2 {
        chans.swap(0, 1);
    }
    Waveform::new(chans, sr).expect("crop keeps channel lengths equal")
}

/// Deterministic in `(cfg.seed, draw_index)`. Pools should have passed
/// [`check_pools`]; an empty pool is still reported here.
pub fn make_pseudo_mixture(
    target: &[PoolEntry],
    perturbation: &[PoolEntry],
    cfg: &AugmentationConfig,
    draw_index: u64,
) -> Result<PseudoMixture, MixgenError> {
    if target.is_empty() {
        return Err(MixgenError::EmptyPool("target"));
    }
    if perturbation.is_empty() {
        return Err(MixgenError::EmptyPool("perturbation"));
    }
    let len = crop_len(cfg, target[0].audio.sample_rate());
    let mut rng = CounterRng::new(cfg.seed).split(draw_index);
    let mut t = draw_source(&mut rng, target, cfg, len)?;
    let mut p = draw_source(&mut rng, perturbation, cfg, len)?;
    match cfg.drop_mode {
        DropMode::Independent => {
            t.dropped = rng.bernoulli(cfg.drop_prob);
            p.dropped = rng.bernoulli(cfg.drop_prob);
        }
        DropMode::ExactlyOne => {
            if rng.bernoulli(cfg.drop_prob) {
                if rng.bernoulli(0.5) {
                    t.dropped = true;
                } else {
                    p.dropped = true;
                }
            }
        }
    }
    let target_clean = render(&target[t.pool_index], &t, len);
    let perturbation_clean = render(&perturbation[p.pool_index], &p, len);
    let mixed: Vec<Vec<f64>> = target_clean
        .channels()
        .iter()
        .zip(perturbation_clean.channels())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();
    Ok(PseudoMixture {
        mixture: Waveform::new(mixed, target_clean.sample_rate())?,
        target_clean,
        perturbation_clean,
        provenance: Provenance {
            seed: cfg.seed,
            draw_index,
            target: t,
            perturbation: p,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub config: AugmentationConfig,
    pub target_pool: Vec<String>,
    pub perturbation_pool: Vec<String>,
    pub draws: Vec<String>,
}

/// Writes `draw_NNNNNN.{mix,target,perturbation}.wav` plus a JSON provenance
/// sidecar per draw, and `batch.json` listing everything needed to regenerate.
pub fn write_batch(
    dir: &Path,
    target: &[PoolEntry],
    perturbation: &[PoolEntry],
    cfg: &AugmentationConfig,
    n_draws: u64,
) -> Result<BatchManifest, MixgenError> {
    check_pools(target, perturbation, cfg)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| MixgenError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut draws = Vec::new();
    for i in 0..n_draws {
        let pm = make_pseudo_mixture(target, perturbation, cfg, i)?;
        let stem = format!("draw_{i:06}");
        for (suffix, w) in [("mix", &pm.mixture), ("target", &pm.target_clean), ("perturbation", &pm.perturbation_clean)] {
            write_wav_file(&dir.join(format!("{stem}.{suffix}.wav")), w, SampleFormat::Float32)?;
        }
        let side = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&pm.provenance).expect("provenance serializes");
        write_atomic(&side, text.as_bytes()).map_err(io(&side))?;
        draws.push(stem);
    }
    let manifest = BatchManifest {
        config: cfg.clone(),
        target_pool: target.iter().map(|e| e.id.clone()).collect(),
        perturbation_pool: perturbation.iter().map(|e| e.id.clone()).collect(),
        draws,
    };
    let path = dir.join("batch.json");
    write_atomic(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes()).map_err(io(&path))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Unit;
    use proptest::prelude::*;

    fn entry(id: &str, n: usize, seed: u64, stereo: bool) -> PoolEntry {
        let mut rng = CounterRng::new(seed);
        let chans = if stereo { 2 } else { 1 };
        let data = (0..chans).map(|_| (0..n).map(|_| rng.uniform_range(-0.5, 0.5)).collect()).collect();
        PoolEntry {
            id: id.into(),
            audio: Waveform::new(data, 100).unwrap(),
        }
    }

    fn pools() -> (Vec<PoolEntry>, Vec<PoolEntry>) {
        (
            vec![entry("t0", 400, 1, true), entry("t1", 350, 2, true)],
            vec![entry("p0", 300, 3, true), entry("p1", 500, 4, true)],
        )
    }

    fn seg(unit: Unit, a: f64, b: f64) -> InventorySegment {
        InventorySegment {
            clip: "c".into(),
            unit,
            start_frame: (a * 100.0) as usize,
            end_frame: (b * 100.0) as usize,
            start_s: a,
            end_s: b,
        }
    }

    #[test]
    fn pool_filters_by_unit_and_length() {
        let inv = vec![
            seg(Unit::Piano, 0.0, 2.0),
            seg(Unit::Piano, 2.0, 6.0),
            seg(Unit::Mixture, 6.0, 12.0),
            seg(Unit::Silence, 12.0, 20.0),
            seg(Unit::Bass, 20.0, 23.0),
        ];
        let p = build_pool(&inv, Instrument::Piano, 3.0);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].start_s, 2.0);
        assert_eq!(build_pool(&inv, Instrument::Bass, 3.0).len(), 1);
        assert!(build_pool(&[], Instrument::Piano, 3.0).is_empty());
    }

    #[test]
    fn all_dropped_is_silent() {
        let (t, p) = pools();
        let cfg = AugmentationConfig {
            drop_prob: 1.0,
            ..Default::default()
        };
        let m = make_pseudo_mixture(&t, &p, &cfg, 5).unwrap();
        assert!(m.mixture.is_silent());
        assert_eq!(m.mixture.n_samples(), 300);
    }

    #[test]
    fn identity_configuration_sums_segments() {
        let t = vec![entry("t", 300, 1, false)];
        let p = vec![entry("p", 300, 2, false)];
        let cfg = AugmentationConfig {
            gain_range_db: (0.0, 0.0),
            channel_swap_prob: 0.0,
            drop_prob: 0.0,
            ..Default::default()
        };
        let m = make_pseudo_mixture(&t, &p, &cfg, 0).unwrap();
        assert_eq!(m.provenance.target.offset_samples, 0);
        let want: Vec<f64> = t[0].audio.channel(0).iter().zip(p[0].audio.channel(0)).map(|(a, b)| a + b).collect();
        assert_eq!(m.mixture.channel(0), &want[..]);
    }

    #[test]
    fn empty_pool_and_bad_config() {
        let (t, _) = pools();
        assert!(matches!(
            make_pseudo_mixture(&t, &[], &AugmentationConfig::default(), 0),
            Err(MixgenError::EmptyPool("perturbation"))
        ));
        let cfg = AugmentationConfig {
            drop_prob: 1.5,
            crop_s: 4.0,
            ..Default::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("drop_prob") && msg.contains("crop_s"));
        let short = vec![entry("s", 200, 9, true)];
        assert!(matches!(
            check_pools(&short, &t, &AugmentationConfig::default()),
            Err(MixgenError::SegmentTooShort { .. })
        ));
    }

    #[test]
    fn swap_exchanges_channels() {
        let t = vec![entry("t", 300, 1, true)];
        let p = vec![entry("p", 300, 2, true)];
        let cfg = AugmentationConfig {
            gain_range_db: (0.0, 0.0),
            channel_swap_prob: 1.0,
            drop_prob: 0.0,
            ..Default::default()
        };
        let m = make_pseudo_mixture(&t, &p, &cfg, 0).unwrap();
        assert_eq!(m.target_clean.channel(0), t[0].audio.channel(1));
        assert_eq!(m.target_clean.channel(1), t[0].audio.channel(0));
    }

    #[test]
    fn exactly_one_never_drops_both() {
        let (t, p) = pools();
        let cfg = AugmentationConfig {
            drop_prob: 1.0,
            drop_mode: DropMode::ExactlyOne,
            ..Default::default()
        };
        for i in 0..50 {
            let m = make_pseudo_mixture(&t, &p, &cfg, i).unwrap();
            assert!(m.provenance.target.dropped != m.provenance.perturbation.dropped);
        }
    }

    #[test]
    fn batch_writes_triplets() {
        let (t, p) = pools();
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("batch");
        let m = write_batch(&dir, &t, &p, &AugmentationConfig::default(), 3).unwrap();
        assert_eq!(m.draws.len(), 3);
        for f in ["draw_000002.mix.wav", "draw_000002.target.wav", "draw_000002.perturbation.wav", "draw_000002.json", "batch.json"] {
            assert!(dir.join(f).exists(), "{f}");
        }
        let prov: Provenance = serde_json::from_str(&fs::read_to_string(dir.join("draw_000001.json")).unwrap()).unwrap();
        assert_eq!(prov, make_pseudo_mixture(&t, &p, &m.config, 1).unwrap().provenance);
    }

    proptest! {
        #[test]
        fn additive_deterministic_and_in_bounds(seed in any::<u64>(), idx in any::<u64>()) {
            let (t, p) = pools();
            let cfg = AugmentationConfig { seed, ..Default::default() };
            let a = make_pseudo_mixture(&t, &p, &cfg, idx).unwrap();
            let b = make_pseudo_mixture(&t, &p, &cfg, idx).unwrap();
            prop_assert_eq!(&a, &b);
            for c in 0..2 {
                for ((m, x), y) in a.mixture.channel(c).iter().zip(a.target_clean.channel(c)).zip(a.perturbation_clean.channel(c)) {
                    prop_assert_eq!(*m - (x + y), 0.0);
                }
            }
            for (d, pool) in [(&a.provenance.target, &t), (&a.provenance.perturbation, &p)] {
                prop_assert!(d.offset_samples + 300 <= pool[d.pool_index].audio.n_samples());
                prop_assert!((-10.0..10.0).contains(&d.gain_db));
            }
        }
    }
}
