//! Three-category soundtrack clips: speech, music and sound effects.
//!
//! Speech is formant-shaped harmonic voicing gated into syllables (dialog) or
//! longer, higher, breathier vocalisations (nonverbal). Music is sustained
//! triads. Foreground effects are band-passed noise bursts, background effects
//! a quiet low-passed bed. None of it aims at realism.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{midi_to_hz, render_partials, Envelope, Partial, SynthError};
use crate::dsp::Waveform;
use crate::knowledge::{ActivityVector, Leaf, CATEGORIES};
use crate::rng::CounterRng;

/// Activity frames use the same 10 ms grid as the unit timelines.
pub const ACTIVITY_SHIFT_S: f64 = 0.01;

const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [660.0, 1720.0, 2410.0],
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub leaf: Leaf,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivityPlan {
    pub intervals: Vec<Interval>,
}

impl ActivityPlan {
    /// Per leaf, overlapping or touching intervals merged; empty ones dropped.
    /// Sorted by leaf then start.
    pub fn merged(&self) -> ActivityPlan {
        let mut by_leaf: BTreeMap<Leaf, Vec<(f64, f64)>> = BTreeMap::new();
        for iv in &self.intervals {
            if iv.end_s > iv.start_s {
                by_leaf.entry(iv.leaf).or_default().push((iv.start_s, iv.end_s));
            }
        }
        let mut intervals = Vec::new();
        for (leaf, mut spans) in by_leaf.into_iter().rev() {
            spans.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut cur = spans[0];
            for &(s, e) in &spans[1..] {
                if s <= cur.1 {
                    cur.1 = cur.1.max(e);
                } else {
                    intervals.push(Interval {
                        leaf,
                        start_s: cur.0,
                        end_s: cur.1,
                    });
                    cur = (s, e);
                }
            }
            intervals.push(Interval {
                leaf,
                start_s: cur.0,
                end_s: cur.1,
            });
        }
        ActivityPlan { intervals }
    }

    /// Activity per 10 ms frame: a leaf is on iff the frame centre lies in one of its intervals.
    pub fn activity(&self, n_frames: usize) -> Vec<ActivityVector> {
        (0..n_frames)
            .map(|i| {
                let c = (i as f64 + 0.5) * ACTIVITY_SHIFT_S;
                let mut v = ActivityVector::silent();
                for iv in &self.intervals {
                    if iv.start_s <= c && c < iv.end_s {
                        v.set(iv.leaf);
                    }
                }
                v
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct CinematicClip {
    pub mixture: Waveform,
    /// Keyed by top-level category: speech, music, sfx.
    pub stems: BTreeMap<String, Waveform>,
    pub activity: Vec<ActivityVector>,
    /// The merged plan actually rendered.
    pub plan: ActivityPlan,
}

fn quantize(s: f64) -> f64 {
    (s * 100.0).round() / 100.0
}

/// A seeded plan with every leaf drawn independently; all times on the 10 ms grid.
pub fn random_activity_plan(seed: u64, duration_s: f64) -> ActivityPlan {
    let root = CounterRng::new(seed).split_str("activity-plan");
    let d = quantize(duration_s);
    let mut intervals = Vec::new();
    for leaf in Leaf::ALL {
        let mut rng = root.split(leaf as u64);
        let (count, min_len, max_len) = match leaf {
            Leaf::Dialog => (1 + rng.below(3), 1.0, 3.0),
            Leaf::Nonverbal => (rng.below(2), 0.5, 1.5),
            Leaf::Music => (1 + rng.below(2), 1.5, 0.5 * d),
            Leaf::FgSfx => (1 + rng.below(3), 0.3, 1.5),
            Leaf::BgSfx => (rng.below(2), 1.5, 4.0),
        };
        for _ in 0..count {
            let len = quantize(rng.uniform_range(min_len, max_len.max(min_len)).min(d));
            let start = quantize(rng.uniform_range(0.0, (d - len).max(0.0)));
            intervals.push(Interval {
                leaf,
                start_s: start,
                end_s: (start + len).min(d),
            });
        }
    }
    ActivityPlan { intervals }
}

fn span(iv: &Interval, sr: u32, n: usize) -> (usize, usize) {
    let f = |t: f64| ((t * f64::from(sr)).round().max(0.0) as usize).min(n);
    (f(iv.start_s), f(iv.end_s))
}

fn formant_gain(freq: f64, formants: &[f64; 3]) -> f64 {
    formants
        .iter()
        .map(|&fc| {
            let bw = 80.0 + 0.06 * fc;
            1.0 / (1.0 + ((freq - fc) / bw).powi(2))
        })
        .sum()
}

fn voiced(out: &mut [f64], sr: u32, a: usize, b: usize, f0: f64, formants: &[f64; 3], level: f64, rng: &mut CounterRng) {
    let top = 4000f64.min(0.45 * f64::from(sr));
    let mut partials: Vec<Partial> = (1..=40)
        .map(|k| k as f64 * f0)
        .take_while(|&f| f < top)
        .map(|f| Partial {
            freq: f,
            amp: formant_gain(f, formants) / (f / f0).sqrt(),
            phase: rng.uniform_range(0.0, std::f64::consts::TAU),
        })
        .collect();
    let norm: f64 = partials.iter().map(|p| p.amp).sum::<f64>().max(1e-12);
    partials.iter_mut().for_each(|p| p.amp *= level / norm);
    let env = Envelope {
        attack_s: 0.02,
        decay_tau_s: f64::INFINITY,
        release_s: 0.03,
    };
    render_partials(out, sr, a, b, &partials, env);
}

fn render_speech(out: &mut [f64], sr: u32, a: usize, b: usize, nonverbal: bool, rng: &mut CounterRng) {
    let srf = f64::from(sr);
    let base = if nonverbal {
        rng.uniform_range(250.0, 450.0)
    } else {
        rng.uniform_range(100.0, 180.0)
    };
    let mut t = a;
    while t < b {
        let (lo, hi) = if nonverbal { (0.3, 0.8) } else { (0.12, 0.3) };
        let len = (rng.uniform_range(lo, hi) * srf) as usize;
        let end = (t + len).min(b);
        let f0 = base * rng.uniform_range(0.9, 1.1);
        if nonverbal {
            voiced(out, sr, t, end, f0, &[800.0, 1200.0, 2500.0], 0.15, rng);
            // Breath noise under the same syllable envelope.
            let dur = (end - t) as f64 / srf;
            let env = Envelope {
                attack_s: 0.02,
                decay_tau_s: f64::INFINITY,
                release_s: 0.03,
            };
            for (k, o) in out[t..end].iter_mut().enumerate() {
                *o += 0.03 * env.gain(k as f64 / srf, dur) * rng.normal();
            }
        } else {
            let formants = VOWELS[rng.below(VOWELS.len())];
            voiced(out, sr, t, end, f0, &formants, 0.2, rng);
        }
        let gap = (rng.uniform_range(0.02, 0.06) * srf) as usize;
        t = end + gap;
    }
}

fn render_music(out: &mut [f64], sr: u32, a: usize, b: usize, rng: &mut CounterRng) {
    let srf = f64::from(sr);
    let mut t = a;
    while t < b {
        let len = (rng.uniform_range(0.8, 1.6) * srf) as usize;
        let end = (t + len).min(b);
        let root = 55 + rng.below(13);
        let third = if rng.bernoulli(0.5) { 4 } else { 3 };
        let mut partials = Vec::new();
        for interval in [0, third, 7] {
            let f0 = midi_to_hz((root + interval) as f64);
            for k in 1..=6 {
                partials.push(Partial {
                    freq: k as f64 * f0,
                    amp: 0.12 / (3.0 * 2.45 * k as f64),
                    phase: rng.uniform_range(0.0, std::f64::consts::TAU),
                });
            }
        }
        let env = Envelope {
            attack_s: 0.05,
            decay_tau_s: 3.0,
            release_s: 0.04,
        };
        render_partials(out, sr, t, end, &partials, env);
        t = end;
    }
}

/// RBJ band-pass (0 dB peak) or one-pole low-pass noise, scaled to `rms`.
fn filtered_noise(len: usize, sr: u32, centre_hz: Option<f64>, rms: f64, rng: &mut CounterRng) -> Vec<f64> {
    let srf = f64::from(sr);
    let white: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
    let mut y = vec![0.0; len];
    match centre_hz {
        Some(fc) => {
            let w0 = std::f64::consts::TAU * fc.min(0.45 * srf) / srf;
            let alpha = w0.sin() / (2.0 * 1.5);
            let a0 = 1.0 + alpha;
            let (b0, b2) = (alpha / a0, -alpha / a0);
            let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
            let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
            for (o, &x) in y.iter_mut().zip(&white) {
                let v = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
                x2 = x1;
                x1 = x;
                y2 = y1;
                y1 = v;
                *o = v;
            }
        }
        None => {
            let k = 1.0 - (-std::f64::consts::TAU * 400.0 / srf).exp();
            let mut s = 0.0;
            for (o, &x) in y.iter_mut().zip(&white) {
                s += k * (x - s);
                *o = s;
            }
        }
    }
    let cur = (y.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if cur > 0.0 {
        y.iter_mut().for_each(|v| *v *= rms / cur);
    }
    y
}

fn render_sfx(out: &mut [f64], sr: u32, a: usize, b: usize, foreground: bool, rng: &mut CounterRng) {
    let srf = f64::from(sr);
    if !foreground {
        let bed = filtered_noise(b - a, sr, None, 0.03, rng);
        let dur = (b - a) as f64 / srf;
        let env = Envelope {
            attack_s: 0.05,
            decay_tau_s: f64::INFINITY,
            release_s: 0.05,
        };
        for (k, (o, v)) in out[a..b].iter_mut().zip(bed).enumerate() {
            *o += env.gain(k as f64 / srf, dur) * v;
        }
        return;
    }
    let mut t = a;
    while t < b {
        let len = (rng.uniform_range(0.08, 0.4) * srf) as usize;
        let end = (t + len).min(b);
        let centre = rng.uniform_range(800.0, 6000.0);
        let burst = filtered_noise(end - t, sr, Some(centre), 0.12, rng);
        let dur = (end - t) as f64 / srf;
        let env = Envelope {
            attack_s: 0.005,
            decay_tau_s: (dur / 3.0).max(1e-3),
            release_s: 0.01,
        };
        for (k, (o, v)) in out[t..end].iter_mut().zip(burst).enumerate() {
            *o += env.gain(k as f64 / srf, dur) * v;
        }
        t = end + (rng.uniform_range(0.05, 0.3) * srf) as usize;
    }
}

pub fn synth_cinematic_clip(
    seed: u64,
    duration_s: f64,
    plan: &ActivityPlan,
    sample_rate: u32,
) -> Result<CinematicClip, SynthError> {
    if sample_rate == 0 || !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(SynthError::InvalidSpec(format!(
            "duration {duration_s} s at {sample_rate} Hz"
        )));
    }
    let n = (duration_s * f64::from(sample_rate)).round() as usize;
    let n_frames = (duration_s / ACTIVITY_SHIFT_S + 1e-9).floor() as usize;
    let plan = plan.merged();
    let root = CounterRng::new(seed).split_str("cinematic");
    let mut bufs = vec![vec![0.0; n]; CATEGORIES.len()];
    for (j, iv) in plan.intervals.iter().enumerate() {
        let (a, b) = span(iv, sample_rate, n);
        if a >= b {
            continue;
        }
        let mut rng = root.split(j as u64);
        let buf = &mut bufs[iv.leaf.category()];
        match iv.leaf {
            Leaf::Dialog => render_speech(buf, sample_rate, a, b, false, &mut rng),
            Leaf::Nonverbal => render_speech(buf, sample_rate, a, b, true, &mut rng),
            Leaf::Music => render_music(buf, sample_rate, a, b, &mut rng),
            Leaf::FgSfx => render_sfx(buf, sample_rate, a, b, true, &mut rng),
            Leaf::BgSfx => render_sfx(buf, sample_rate, a, b, false, &mut rng),
        }
    }
    let mut mix = vec![0.0; n];
    for buf in &bufs {
        for (m, x) in mix.iter_mut().zip(buf) {
            *m += x;
        }
    }
    let mut stems = BTreeMap::new();
    for (name, buf) in CATEGORIES.iter().zip(bufs) {
        stems.insert(name.to_string(), Waveform::mono(buf, sample_rate)?);
    }
    Ok(CinematicClip {
        mixture: Waveform::mono(mix, sample_rate)?,
        stems,
        activity: plan.activity(n_frames),
        plan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_plan_is_silent() {
        let c = synth_cinematic_clip(1, 2.0, &ActivityPlan::default(), 16_000).unwrap();
        assert!(c.mixture.is_silent());
        assert_eq!(c.activity.len(), 200);
        assert!(c.activity.iter().all(|a| *a == ActivityVector::silent()));
    }

    #[test]
    fn speech_only_mixture_equals_speech_stem() {
        let plan = ActivityPlan {
            intervals: vec![Interval {
                leaf: Leaf::Dialog,
                start_s: 0.5,
                end_s: 1.5,
            }],
        };
        let c = synth_cinematic_clip(2, 2.0, &plan, 16_000).unwrap();
        assert_eq!(c.mixture.channel(0), c.stems["speech"].channel(0));
        assert!(!c.mixture.is_silent());
        assert!(c.stems["music"].is_silent() && c.stems["sfx"].is_silent());
    }

    #[test]
    fn overlapping_intervals_merge() {
        let iv = |s, e| Interval {
            leaf: Leaf::FgSfx,
            start_s: s,
            end_s: e,
        };
        let plan = ActivityPlan {
            intervals: vec![iv(1.0, 2.0), iv(0.5, 1.2), iv(3.0, 3.0), iv(2.5, 2.7)],
        };
        let m = plan.merged();
        assert_eq!(m.intervals, vec![iv(0.5, 2.0), iv(2.5, 2.7)]);
    }

    #[test]
    fn activity_is_hierarchical_and_stems_silent_when_inactive() {
        for seed in 0..5 {
            let plan = random_activity_plan(seed, 6.0);
            let c = synth_cinematic_clip(seed, 6.0, &plan, 16_000).unwrap();
            assert_eq!(c.activity.len(), 600);
            for (i, a) in c.activity.iter().enumerate() {
                let b = a.bits();
                assert_eq!(b[0], b[1] | b[2]);
                assert_eq!(b[4], b[5] | b[6]);
                let frame = &c.stems["music"].channel(0)[i * 160..(i + 1) * 160];
                // Interval edges are on the frame grid, so inactive frames are exactly zero.
                if !a.music() {
                    assert!(frame.iter().all(|&x| x == 0.0));
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let plan = random_activity_plan(9, 4.0);
        let a = synth_cinematic_clip(9, 4.0, &plan, 16_000).unwrap();
        let b = synth_cinematic_clip(9, 4.0, &plan, 16_000).unwrap();
        assert_eq!(a.mixture, b.mixture);
        assert_eq!(a.activity, b.activity);
    }
}
