//! Piano/bass clips built from 3–5 s sections of silence, solo piano, solo bass
//! and their mixture.
//!
//! The "piano" is a bright, decaying additive tone in the middle register and
//! the "bass" a slow-attack near-sinusoid in the low register. `timbre_distance`
//! (1 = far apart, 0 = close) reduces the piano's partial count and pulls the
//! two registers together. Notes are legato and confined to their sections, so
//! in a solo section the other stem is exactly zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{alignment_frames, midi_to_hz, ms_to_samples, render_partials, Envelope, Partial, SynthError};
use crate::dsp::Waveform;
use crate::rng::CounterRng;
use crate::score::{
    default_instrument_map, timeline_from_score, Instrument, Note, Score, Segment, TempoChange, Track, Unit,
    UnitTimeline, FRAME_SHIFT_MS,
};

/// 480 ticks per quarter at 480000 µs per quarter: one tick per millisecond.
pub const SYNTH_TPQ: u16 = 480;
pub const SYNTH_US_PER_QUARTER: u32 = 480_000;

const PIANO_PITCHES: [u8; 8] = [60, 62, 64, 65, 67, 69, 71, 72];
const BASS_PITCHES: [u8; 7] = [28, 31, 33, 35, 36, 38, 40];
const MAX_PLAN_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub seed: u64,
    /// Empty means a seeded permutation of all four units.
    pub section_order: Vec<Unit>,
    pub section_dur_s: (f64, f64),
    pub total_dur_s: (f64, f64),
    pub sample_rate: u32,
    pub timbre_distance: f64,
}

impl ClipSpec {
    pub fn new(seed: u64, sample_rate: u32) -> Self {
        Self {
            seed,
            section_order: Vec::new(),
            section_dur_s: (3.0, 5.0),
            total_dur_s: (12.0, 15.0),
            sample_rate,
            timbre_distance: 1.0,
        }
    }

    pub fn with_order(mut self, order: Vec<Unit>) -> Self {
        self.section_order = order;
        self
    }

    pub fn with_timbre_distance(mut self, d: f64) -> Self {
        self.timbre_distance = d;
        self
    }
}

#[derive(Debug, Clone)]
pub struct LabeledClip {
    pub mixture: Waveform,
    /// Keyed by instrument name.
    pub stems: BTreeMap<String, Waveform>,
    /// Ground truth on the MFCC frame grid (see [`alignment_frames`]).
    pub timeline: UnitTimeline,
    pub score: Score,
    /// Section plan in 10 ms frames, before truncation to the MFCC grid.
    pub sections: Vec<Segment>,
}

impl LabeledClip {
    pub fn stem(&self, inst: Instrument) -> &Waveform {
        &self.stems[inst.name()]
    }
}

fn validate(spec: &ClipSpec) -> Result<(), SynthError> {
    let bad = |m: String| Err(SynthError::InvalidSpec(m));
    if spec.sample_rate == 0 {
        return bad("sample rate must be positive".into());
    }
    if !(0.0..=1.0).contains(&spec.timbre_distance) {
        return bad(format!("timbre distance {} outside [0, 1]", spec.timbre_distance));
    }
    for (name, (lo, hi)) in [("section", spec.section_dur_s), ("total", spec.total_dur_s)] {
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("{name} duration range ({lo}, {hi}) is invalid"));
        }
    }
    for w in spec.section_order.windows(2) {
        if w[0] == w[1] {
            return bad(format!("adjacent sections share unit {}", w[0].name()));
        }
    }
    Ok(())
}

/// Section units and durations in centiseconds (10 ms frames).
pub fn plan_sections(spec: &ClipSpec) -> Result<Vec<(Unit, u64)>, SynthError> {
    validate(spec)?;
    let rng = CounterRng::new(spec.seed);
    let order = if spec.section_order.is_empty() {
        let mut o = Unit::ALL.to_vec();
        rng.split_str("order").shuffle(&mut o);
        o
    } else {
        spec.section_order.clone()
    };
    let cs = |s: f64| (s * 100.0).round() as u64;
    let (lo, hi) = (cs(spec.section_dur_s.0), cs(spec.section_dur_s.1));
    let (tlo, thi) = (cs(spec.total_dur_s.0), cs(spec.total_dur_s.1));
    let k = order.len() as u64;
    if k * lo > thi || k * hi < tlo {
        return Err(SynthError::Infeasible(format!(
            "{k} sections of {}..{} s cannot total {}..{} s",
            spec.section_dur_s.0, spec.section_dur_s.1, spec.total_dur_s.0, spec.total_dur_s.1
        )));
    }
    let mut rng = rng.split_str("durations");
    for _ in 0..MAX_PLAN_ATTEMPTS {
        let durs: Vec<u64> = (0..k).map(|_| lo + rng.below((hi - lo + 1) as usize) as u64).collect();
        let total: u64 = durs.iter().sum();
        if (tlo..=thi).contains(&total) {
            return Ok(order.into_iter().zip(durs).collect());
        }
    }
    Err(SynthError::Infeasible(format!(
        "no duration draw satisfied the total range in {MAX_PLAN_ATTEMPTS} attempts"
    )))
}

/// Legato notes covering `[start_ms, end_ms)` exactly.
fn section_notes(
    rng: &mut CounterRng,
    inst: Instrument,
    start_ms: u64,
    end_ms: u64,
    distance: f64,
    out: &mut Vec<Note>,
) {
    let (min_cs, max_cs): (u64, u64) = match inst {
        Instrument::Piano => (20, 60),
        Instrument::Bass => (40, 100),
    };
    let pitches: Vec<u8> = match inst {
        Instrument::Piano => {
            let shift = (12.0 * (1.0 - distance)).round() as u8;
            PIANO_PITCHES.iter().map(|p| p - shift).collect()
        }
        Instrument::Bass => {
            let shift = (24.0 * (1.0 - distance)).round() as u8;
            BASS_PITCHES.iter().map(|p| p + shift).collect()
        }
    };
    let mut t = start_ms;
    while t < end_ms {
        let mut dur = 10 * (min_cs + rng.below((max_cs - min_cs + 1) as usize) as u64);
        if end_ms - t < dur + 10 * min_cs {
            dur = end_ms - t;
        }
        let pitch = pitches[rng.below(pitches.len())];
        let velocity = match inst {
            Instrument::Piano => 70 + rng.below(31) as u8,
            Instrument::Bass => 80 + rng.below(31) as u8,
        };
        out.push(Note {
            onset_ticks: t,
            offset_ticks: t + dur,
            pitch,
            velocity,
        });
        if inst == Instrument::Piano && rng.bernoulli(0.3) {
            let interval = [3u8, 4, 7][rng.below(3)];
            out.push(Note {
                onset_ticks: t,
                offset_ticks: t + dur,
                pitch: pitch + interval,
                velocity: velocity - 10,
            });
        }
        t += dur;
    }
}

fn render_note(out: &mut [f64], sr: u32, inst: Instrument, note: &Note, distance: f64, rng: &mut CounterRng) {
    let f0 = midi_to_hz(f64::from(note.pitch));
    let (weights, env, level): (Vec<(f64, f64)>, Envelope, f64) = match inst {
        Instrument::Piano => {
            let n = 4 + (4.0 * distance).round() as usize;
            let w = (1..=n)
                .map(|k| {
                    let k = k as f64;
                    (k * (1.0 + 4e-4 * k * k).sqrt(), 1.0 / k)
                })
                .collect();
            let env = Envelope {
                attack_s: 0.005,
                decay_tau_s: 0.5,
                release_s: 0.03,
            };
            (w, env, 0.25)
        }
        Instrument::Bass => {
            let w = [(1.0, 1.0), (2.0, 0.08 + 0.4 * (1.0 - distance)), (3.0, 0.3 * (1.0 - distance))]
                .into_iter()
                .filter(|&(_, a)| a > 0.0)
                .collect();
            let env = Envelope {
                attack_s: 0.06,
                decay_tau_s: 2.0,
                release_s: 0.04,
            };
            (w, env, 0.35)
        }
    };
    let norm: f64 = weights.iter().map(|w| w.1).sum();
    let gain = level * f64::from(note.velocity) / 127.0 / norm;
    let partials: Vec<Partial> = weights
        .iter()
        .map(|&(mult, a)| Partial {
            freq: f0 * mult,
            amp: gain * a,
            phase: rng.uniform_range(0.0, std::f64::consts::TAU),
        })
        .collect();
    let start = ms_to_samples(note.onset_ticks, sr);
    let end = ms_to_samples(note.offset_ticks, sr);
    render_partials(out, sr, start, end, &partials, env);
}

pub fn synth_music_clip(spec: &ClipSpec) -> Result<LabeledClip, SynthError> {
    let plan = plan_sections(spec)?;
    let sr = spec.sample_rate;
    let root = CounterRng::new(spec.seed);
    let total_ms: u64 = plan.iter().map(|(_, d)| d * 10).sum();
    let n_samples = ms_to_samples(total_ms, sr);

    let mut sections = Vec::with_capacity(plan.len());
    let mut notes: BTreeMap<Instrument, Vec<Note>> = BTreeMap::new();
    let mut frame = 0usize;
    for (i, &(unit, cs)) in plan.iter().enumerate() {
        let (start_ms, end_ms) = (frame as u64 * 10, (frame as u64 + cs) * 10);
        for &inst in unit.instruments() {
            let mut rng = root.split_str(inst.name()).split(i as u64);
            section_notes(&mut rng, inst, start_ms, end_ms, spec.timbre_distance, notes.entry(inst).or_default());
        }
        sections.push(Segment {
            unit,
            start: frame,
            end: frame + cs as usize,
        });
        frame += cs as usize;
    }

    let mut stems = BTreeMap::new();
    let mut tracks = Vec::new();
    for inst in Instrument::ALL {
        let list = notes.remove(&inst).unwrap_or_default();
        let mut buf = vec![0.0; n_samples];
        let mut rng = root.split_str(inst.name()).split_str("phases");
        for note in &list {
            render_note(&mut buf, sr, inst, note, spec.timbre_distance, &mut rng);
        }
        stems.insert(inst.name().to_string(), Waveform::mono(buf, sr)?);
        tracks.push(Track {
            name: inst.name().to_string(),
            notes: list,
        });
    }
    let piano = stems["piano"].channel(0);
    let bass = stems["bass"].channel(0);
    let mix: Vec<f64> = piano.iter().zip(bass).map(|(a, b)| a + b).collect();
    let mixture = Waveform::mono(mix, sr)?;

    let score = Score::new(
        SYNTH_TPQ,
        vec![TempoChange {
            tick: 0,
            us_per_quarter: SYNTH_US_PER_QUARTER,
        }],
        tracks,
    )?;
    let total_frames = alignment_frames(n_samples, sr);
    if total_frames == 0 {
        return Err(SynthError::Infeasible("clip shorter than one analysis frame".into()));
    }
    let timeline = timeline_from_score(&score, &default_instrument_map(), FRAME_SHIFT_MS, total_frames)?;
    Ok(LabeledClip {
        mixture,
        stems,
        timeline,
        score,
        sections,
    })
}
