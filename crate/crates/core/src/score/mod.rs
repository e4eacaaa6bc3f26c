//! Musical knowledge: scores, tempo maps and frame-level unit timelines.

mod json;
mod smf;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use json::{parse_score_json, score_to_json};
pub use smf::{parse_smf, write_smf};

pub const DEFAULT_US_PER_QUARTER: u32 = 500_000;

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("SMF parse error at byte {offset}: {msg}")]
    Smf { offset: usize, msg: String },
    #[error("unsupported SMF at byte {offset}: {msg}")]
    UnsupportedSmf { offset: usize, msg: String },
    #[error("score schema error at {path}: {msg}")]
    Schema { path: String, msg: String },
    #[error("track '{track}' not in score (available: {})", available.join(", "))]
    UnknownTrack {
        track: String,
        available: Vec<String>,
    },
    #[error("invalid score: {0}")]
    InvalidScore(String),
    #[error("invalid timeline: {0}")]
    InvalidTimeline(String),
}

/// Segment categories, in the fixed order used for tie-breaking and tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Silence,
    Piano,
    Mixture,
    Bass,
}

impl Unit {
    pub const ALL: [Unit; 4] = [Unit::Silence, Unit::Piano, Unit::Mixture, Unit::Bass];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Unit {
        Unit::ALL[i]
    }

    pub fn from_activity(piano: bool, bass: bool) -> Unit {
        match (piano, bass) {
            (false, false) => Unit::Silence,
            (true, false) => Unit::Piano,
            (false, true) => Unit::Bass,
            (true, true) => Unit::Mixture,
        }
    }

    /// Instruments sounding in this unit.
    pub fn instruments(self) -> &'static [Instrument] {
        match self {
            Unit::Silence => &[],
            Unit::Piano => &[Instrument::Piano],
            Unit::Bass => &[Instrument::Bass],
            Unit::Mixture => &[Instrument::Piano, Instrument::Bass],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Unit::Silence => "silence",
            Unit::Piano => "piano",
            Unit::Mixture => "mixture",
            Unit::Bass => "bass",
        }
    }

    pub fn parse(s: &str) -> Option<Unit> {
        Unit::ALL.into_iter().find(|u| u.name() == s)
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Instrument {
    Piano,
    Bass,
}

impl Instrument {
    pub const ALL: [Instrument; 2] = [Instrument::Piano, Instrument::Bass];

    pub fn name(self) -> &'static str {
        match self {
            Instrument::Piano => "piano",
            Instrument::Bass => "bass",
        }
    }

    pub fn solo_unit(self) -> Unit {
        match self {
            Instrument::Piano => Unit::Piano,
            Instrument::Bass => Unit::Bass,
        }
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Note {
    pub onset_ticks: u64,
    pub offset_ticks: u64,
    pub pitch: u8,
    pub velocity: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub name: String,
    pub notes: Vec<Note>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TempoChange {
    pub tick: u64,
    pub us_per_quarter: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub ticks_per_quarter: u16,
    /// Sorted by tick; first entry at tick 0.
    pub tempo_map: Vec<TempoChange>,
    pub tracks: Vec<Track>,
}

impl Score {
    /// Validates notes, sorts the tempo map and inserts the default tempo at
    /// tick 0 when the map does not start there. Later entries at the same tick win.
    pub fn new(
        ticks_per_quarter: u16,
        mut tempo_map: Vec<TempoChange>,
        tracks: Vec<Track>,
    ) -> Result<Self, ScoreError> {
        if ticks_per_quarter == 0 {
            return Err(ScoreError::InvalidScore("ticks per quarter must be positive".into()));
        }
        for t in &tracks {
            for n in &t.notes {
                if n.offset_ticks <= n.onset_ticks {
                    return Err(ScoreError::InvalidScore(format!(
                        "track '{}': note at tick {} has non-positive duration",
                        t.name, n.onset_ticks
                    )));
                }
                if n.pitch > 127 {
                    return Err(ScoreError::InvalidScore(format!("pitch {} > 127", n.pitch)));
                }
            }
            if tempo_map.iter().any(|c| c.us_per_quarter == 0) {
                return Err(ScoreError::InvalidScore("zero tempo".into()));
            }
        }
        tempo_map.sort_by_key(|c| c.tick);
        let mut dedup: Vec<TempoChange> = Vec::with_capacity(tempo_map.len() + 1);
        for c in tempo_map {
            match dedup.last_mut() {
                Some(last) if last.tick == c.tick => *last = c,
                _ => dedup.push(c),
            }
        }
        if dedup.first().is_none_or(|c| c.tick != 0) {
            dedup.insert(
                0,
                TempoChange {
                    tick: 0,
                    us_per_quarter: DEFAULT_US_PER_QUARTER,
                },
            );
        }
        Ok(Self {
            ticks_per_quarter,
            tempo_map: dedup,
            tracks,
        })
    }

    pub fn track(&self, name: &str) -> Option<&Track> {
        self.tracks.iter().find(|t| t.name == name)
    }

    pub fn track_names(&self) -> Vec<String> {
        self.tracks.iter().map(|t| t.name.clone()).collect()
    }

    pub fn n_notes(&self) -> usize {
        self.tracks.iter().map(|t| t.notes.len()).sum()
    }

    pub fn tick_to_seconds(&self, tick: u64) -> f64 {
        let tpq = f64::from(self.ticks_per_quarter);
        let mut secs = 0.0;
        for (i, change) in self.tempo_map.iter().enumerate() {
            if change.tick >= tick {
                break;
            }
            let seg_end = self
                .tempo_map
                .get(i + 1)
                .map_or(tick, |next| next.tick.min(tick));
            secs += (seg_end - change.tick) as f64 * f64::from(change.us_per_quarter) / tpq * 1e-6;
        }
        secs
    }

    /// Same notes per track regardless of order; used to compare parser outputs.
    pub fn canonical(&self) -> Score {
        let mut s = self.clone();
        for t in &mut s.tracks {
            t.notes.sort();
        }
        s.tracks.sort_by(|a, b| a.name.cmp(&b.name));
        s
    }
}

/// A maximal run of one unit over frames `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(Unit, usize, usize)", into = "(Unit, usize, usize)")]
pub struct Segment {
    pub unit: Unit,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

impl From<(Unit, usize, usize)> for Segment {
    fn from((unit, start, end): (Unit, usize, usize)) -> Self {
        Segment { unit, start, end }
    }
}

impl From<Segment> for (Unit, usize, usize) {
    fn from(s: Segment) -> Self {
        (s.unit, s.start, s.end)
    }
}

pub const FRAME_SHIFT_MS: f64 = 10.0;

/// Contiguous, maximally merged unit segments starting at frame 0.
/// Serialized as `[[unit, start_frame, end_frame], ...]` on the 10 ms grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Segment>", into = "Vec<Segment>")]
pub struct UnitTimeline {
    segments: Vec<Segment>,
    pub frame_shift_ms: f64,
}

impl TryFrom<Vec<Segment>> for UnitTimeline {
    type Error = ScoreError;

    fn try_from(segments: Vec<Segment>) -> Result<Self, Self::Error> {
        UnitTimeline::new(segments, FRAME_SHIFT_MS)
    }
}

impl From<UnitTimeline> for Vec<Segment> {
    fn from(t: UnitTimeline) -> Self {
        t.segments
    }
}

impl UnitTimeline {
    pub fn new(segments: Vec<Segment>, frame_shift_ms: f64) -> Result<Self, ScoreError> {
        if segments.is_empty() {
            return Err(ScoreError::InvalidTimeline("no segments".into()));
        }
        if segments[0].start != 0 {
            return Err(ScoreError::InvalidTimeline("first segment must start at frame 0".into()));
        }
        for (i, s) in segments.iter().enumerate() {
            if s.end <= s.start {
                return Err(ScoreError::InvalidTimeline(format!("segment {i} is empty")));
            }
            if let Some(next) = segments.get(i + 1) {
                if next.start != s.end {
                    return Err(ScoreError::InvalidTimeline(format!(
                        "gap or overlap between segments {i} and {}",
                        i + 1
                    )));
                }
                if next.unit == s.unit {
                    return Err(ScoreError::InvalidTimeline(format!(
                        "segments {i} and {} share unit {} (not maximal)",
                        i + 1,
                        s.unit
                    )));
                }
            }
        }
        Ok(Self {
            segments,
            frame_shift_ms,
        })
    }

    /// Merges per-frame labels into maximal runs. `labels` must be non-empty.
    pub fn from_labels(labels: &[Unit], frame_shift_ms: f64) -> Result<Self, ScoreError> {
        let mut segments: Vec<Segment> = Vec::new();
        for (t, &u) in labels.iter().enumerate() {
            match segments.last_mut() {
                Some(last) if last.unit == u => last.end = t + 1,
                _ => segments.push(Segment {
                    unit: u,
                    start: t,
                    end: t + 1,
                }),
            }
        }
        Self::new(segments, frame_shift_ms)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    pub fn labels(&self) -> Vec<Unit> {
        let mut out = Vec::with_capacity(self.total_frames());
        for s in &self.segments {
            out.extend(std::iter::repeat_n(s.unit, s.len()));
        }
        out
    }

    pub fn unit_sequence(&self) -> Vec<Unit> {
        self.segments.iter().map(|s| s.unit).collect()
    }

    /// Unit at `frame`, clamped to the last frame.
    pub fn unit_at(&self, frame: usize) -> Unit {
        let idx = self.segments.partition_point(|s| s.end <= frame);
        self.segments[idx.min(self.segments.len() - 1)].unit
    }

    /// Internal boundaries as `(frame, previous unit, next unit)`.
    pub fn boundaries(&self) -> Vec<(usize, Unit, Unit)> {
        self.segments
            .windows(2)
            .map(|w| (w[0].end, w[0].unit, w[1].unit))
            .collect()
    }
}

/// Frame labels from note activity: an instrument is active in frame `i` iff
/// one of its notes covers the frame centre `(i + 0.5) * shift`.
pub fn timeline_from_score(
    score: &Score,
    instrument_map: &BTreeMap<String, Instrument>,
    frame_shift_ms: f64,
    total_frames: usize,
) -> Result<UnitTimeline, ScoreError> {
    if total_frames == 0 {
        return Err(ScoreError::InvalidTimeline("total_frames must be at least 1".into()));
    }
    let mut active = [vec![false; total_frames], vec![false; total_frames]];
    let shift_s = frame_shift_ms / 1000.0;
    for (track_name, inst) in instrument_map {
        let track = score.track(track_name).ok_or_else(|| ScoreError::UnknownTrack {
            track: track_name.clone(),
            available: score.track_names(),
        })?;
        let flags = &mut active[*inst as usize];
        for note in &track.notes {
            let on = score.tick_to_seconds(note.onset_ticks) / shift_s - 0.5;
            let off = score.tick_to_seconds(note.offset_ticks) / shift_s - 0.5;
            let first = on.ceil().max(0.0) as usize;
            let last = (off.ceil().max(0.0) as usize).min(total_frames);
            for f in flags.iter_mut().take(last).skip(first) {
                *f = true;
            }
        }
    }
    let labels: Vec<Unit> = (0..total_frames)
        .map(|i| Unit::from_activity(active[0][i], active[1][i]))
        .collect();
    UnitTimeline::from_labels(&labels, frame_shift_ms)
}

/// `{"piano": Piano, "bass": Bass}`.
pub fn default_instrument_map() -> BTreeMap<String, Instrument> {
    Instrument::ALL
        .into_iter()
        .map(|i| (i.name().to_string(), i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn note(on: u64, off: u64) -> Note {
        Note {
            onset_ticks: on,
            offset_ticks: off,
            pitch: 60,
            velocity: 90,
        }
    }

    /// 480 tpq at 480 000 us/quarter: one tick per millisecond.
    fn ms_score(piano: Vec<Note>, bass: Vec<Note>) -> Score {
        Score::new(
            480,
            vec![TempoChange {
                tick: 0,
                us_per_quarter: 480_000,
            }],
            vec![
                Track {
                    name: "piano".into(),
                    notes: piano,
                },
                Track {
                    name: "bass".into(),
                    notes: bass,
                },
            ],
        )
        .unwrap()
    }

    fn segs(t: &UnitTimeline) -> Vec<(Unit, usize, usize)> {
        t.segments().iter().map(|&s| s.into()).collect()
    }

    #[test]
    fn empty_score_is_all_silence() {
        let t = timeline_from_score(&ms_score(vec![], vec![]), &default_instrument_map(), 10.0, 100)
            .unwrap();
        assert_eq!(segs(&t), vec![(Unit::Silence, 0, 100)]);
    }

    #[test]
    fn frame_centre_rule() {
        let s = ms_score(vec![note(100, 500)], vec![]);
        let t = timeline_from_score(&s, &default_instrument_map(), 10.0, 100).unwrap();
        assert_eq!(
            segs(&t),
            vec![(Unit::Silence, 0, 10), (Unit::Piano, 10, 50), (Unit::Silence, 50, 100)]
        );
    }

    #[test]
    fn overlapping_instruments_make_mixture() {
        let s = ms_score(vec![note(0, 600)], vec![note(400, 1000)]);
        let t = timeline_from_score(&s, &default_instrument_map(), 10.0, 100).unwrap();
        assert_eq!(
            segs(&t),
            vec![(Unit::Piano, 0, 40), (Unit::Mixture, 40, 60), (Unit::Bass, 60, 100)]
        );
    }

    #[test]
    fn unknown_track_lists_available() {
        let s = ms_score(vec![], vec![]);
        let mut map = default_instrument_map();
        map.insert("keys".into(), Instrument::Piano);
        match timeline_from_score(&s, &map, 10.0, 10) {
            Err(ScoreError::UnknownTrack { track, available }) => {
                assert_eq!(track, "keys");
                assert_eq!(available, vec!["piano".to_string(), "bass".to_string()]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn default_tempo_inserted_and_seconds() {
        let s = Score::new(480, vec![], vec![]).unwrap();
        assert_eq!(s.tempo_map[0].us_per_quarter, DEFAULT_US_PER_QUARTER);
        assert!((s.tick_to_seconds(480) - 0.5).abs() < 1e-12);
        let s = Score::new(
            100,
            vec![
                TempoChange {
                    tick: 200,
                    us_per_quarter: 250_000,
                },
                TempoChange {
                    tick: 0,
                    us_per_quarter: 1_000_000,
                },
            ],
            vec![],
        )
        .unwrap();
        // 200 ticks at 1 s/quarter, then 100 ticks at 0.25 s/quarter.
        assert!((s.tick_to_seconds(300) - 2.25).abs() < 1e-12);
    }

    #[test]
    fn timeline_rejects_non_maximal_and_gaps() {
        let a = Segment {
            unit: Unit::Piano,
            start: 0,
            end: 5,
        };
        let b = Segment {
            unit: Unit::Piano,
            start: 5,
            end: 9,
        };
        assert!(UnitTimeline::new(vec![a, b], 10.0).is_err());
        let c = Segment {
            unit: Unit::Bass,
            start: 6,
            end: 9,
        };
        assert!(UnitTimeline::new(vec![a, c], 10.0).is_err());
    }

    #[test]
    fn timeline_json_shape() {
        let t = UnitTimeline::from_labels(&[Unit::Silence, Unit::Silence, Unit::Bass], 10.0).unwrap();
        let j = serde_json::to_string(&t).unwrap();
        assert_eq!(j, r#"[["silence",0,2],["bass",2,3]]"#);
        let back: UnitTimeline = serde_json::from_str(&j).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<UnitTimeline>(r#"[["bass",1,3]]"#).is_err());
    }

    fn arb_notes() -> impl Strategy<Value = Vec<Note>> {
        proptest::collection::vec((0u64..2000, 1u64..800), 0..12)
            .prop_map(|v| v.into_iter().map(|(on, d)| note(on, on + d)).collect())
    }

    proptest! {
        #[test]
        fn timeline_partitions_frames(piano in arb_notes(), bass in arb_notes(), total in 1usize..300) {
            let t = timeline_from_score(&ms_score(piano, bass), &default_instrument_map(), 10.0, total).unwrap();
            prop_assert_eq!(t.total_frames(), total);
            prop_assert_eq!(t.segments()[0].start, 0);
            for w in t.segments().windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
                prop_assert_ne!(w[0].unit, w[1].unit);
            }
        }

        #[test]
        fn timeline_ignores_note_order(piano in arb_notes(), bass in arb_notes(), seed in any::<u64>()) {
            let base = timeline_from_score(&ms_score(piano.clone(), bass.clone()), &default_instrument_map(), 10.0, 250).unwrap();
            let mut rng = crate::rng::CounterRng::new(seed);
            let (mut p, mut b) = (piano, bass);
            rng.shuffle(&mut p);
            rng.shuffle(&mut b);
            let permuted = timeline_from_score(&ms_score(p, b), &default_instrument_map(), 10.0, 250).unwrap();
            prop_assert_eq!(base, permuted);
        }
    }
}
