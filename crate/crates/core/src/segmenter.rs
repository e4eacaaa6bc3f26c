//! Segment inventories from alignments, boundary error by transition type and
//! segment-level confusion matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{Instrument, Unit, UnitTimeline};

/// 3 s at the 10 ms frame shift.
pub const DEFAULT_MIN_SEGMENT_FRAMES: usize = 300;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error(
        "unit sequences differ ({hyp} vs {reference} segments or different labels); boundary MAE needs a forced \
         alignment, score recognition output with confusion_matrix instead"
    )]
    SequenceMismatch { hyp: usize, reference: usize },
    #[error("timelines cover {a} and {b} frames")]
    SpanMismatch { a: usize, b: usize },
}

/// A detected run of one unit, with its span in frames and seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventorySegment {
    pub clip: String,
    pub unit: Unit,
    pub start_frame: usize,
    pub end_frame: usize,
    pub start_s: f64,
    pub end_s: f64,
}

impl InventorySegment {
    pub fn id(&self) -> String {
        format!("{}:{}:{}-{}", self.clip, self.unit, self.start_frame, self.end_frame)
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn n_frames(&self) -> usize {
        self.end_frame - self.start_frame
    }
}

/// Maximal same-unit runs of at least `min_len_frames`.
pub fn extract_segments(timeline: &UnitTimeline, clip: &str, min_len_frames: usize) -> Vec<InventorySegment> {
    let shift_s = timeline.frame_shift_ms / 1000.0;
    timeline
        .segments()
        .iter()
        .filter(|s| s.len() >= min_len_frames)
        .map(|s| InventorySegment {
            clip: clip.to_string(),
            unit: s.unit,
            start_frame: s.start,
            end_frame: s.end,
            start_s: s.start as f64 * shift_s,
            end_s: s.end as f64 * shift_s,
        })
        .collect()
}

/// Like [`extract_segments`] but keeps only single-instrument runs.
pub fn extract_solo_segments(timeline: &UnitTimeline, clip: &str, min_len_frames: usize) -> Vec<InventorySegment> {
    extract_segments(timeline, clip, min_len_frames)
        .into_iter()
        .filter(|s| Instrument::ALL.iter().any(|i| i.solo_unit() == s.unit))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct Cell {
    count: usize,
    abs_error: f64,
}

/// Boundary absolute errors binned by `(previous unit, next unit)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryReport {
    cells: BTreeMap<(Unit, Unit), Cell>,
}

#[derive(Serialize, Deserialize)]
struct CellRow {
    prev: Unit,
    next: Unit,
    count: usize,
    total_abs_error: f64,
    mae: f64,
}

#[derive(Serialize, Deserialize)]
struct ReportJson {
    cells: Vec<CellRow>,
    count: usize,
    overall_mae: f64,
}

impl Serialize for BoundaryReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let cells = self
            .cells
            .iter()
            .map(|(&(prev, next), c)| CellRow {
                prev,
                next,
                count: c.count,
                total_abs_error: c.abs_error,
                mae: c.abs_error / c.count as f64,
            })
            .collect();
        ReportJson {
            cells,
            count: self.count(),
            overall_mae: self.overall_mae(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundaryReport {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = ReportJson::deserialize(d)?;
        let mut r = BoundaryReport::default();
        for c in j.cells {
            if c.prev == c.next {
                return Err(serde::de::Error::custom(format!("diagonal cell {}→{}", c.prev, c.next)));
            }
            r.cells.insert(
                (c.prev, c.next),
                Cell {
                    count: c.count,
                    abs_error: c.total_abs_error,
                },
            );
        }
        Ok(r)
    }
}

impl BoundaryReport {
    /// Adds one boundary error; `prev == next` is ignored (undefined cell).
    pub fn add(&mut self, prev: Unit, next: Unit, abs_error: f64) {
        if prev == next {
            return;
        }
        let c = self.cells.entry((prev, next)).or_default();
        c.count += 1;
        c.abs_error += abs_error;
    }

    pub fn merge(&mut self, other: &BoundaryReport) {
        for (k, c) in &other.cells {
            let e = self.cells.entry(*k).or_default();
            e.count += c.count;
            e.abs_error += c.abs_error;
        }
    }

    pub fn count(&self) -> usize {
        self.cells.values().map(|c| c.count).sum()
    }

    pub fn cell_count(&self, prev: Unit, next: Unit) -> usize {
        self.cells.get(&(prev, next)).map_or(0, |c| c.count)
    }

    /// `None` for diagonal or empty cells.
    pub fn cell_mae(&self, prev: Unit, next: Unit) -> Option<f64> {
        self.cells
            .get(&(prev, next))
            .filter(|c| c.count > 0)
            .map(|c| c.abs_error / c.count as f64)
    }

    /// Count-weighted mean over all cells; 0 when there are no boundaries.
    pub fn overall_mae(&self) -> f64 {
        self.mae_where(|_, _| true).unwrap_or(0.0)
    }

    fn mae_where(&self, keep: impl Fn(Unit, Unit) -> bool) -> Option<f64> {
        let (n, e) = self
            .cells
            .iter()
            .filter(|((p, q), _)| keep(*p, *q))
            .fold((0usize, 0.0), |(n, e), (_, c)| (n + c.count, e + c.abs_error));
        (n > 0).then(|| e / n as f64)
    }

    /// Boundaries with silence on either side.
    pub fn silence_adjacent_mae(&self) -> Option<f64> {
        self.mae_where(|p, q| p == Unit::Silence || q == Unit::Silence)
    }

    /// Boundaries between the mixture and a solo instrument.
    pub fn mixture_adjacent_mae(&self) -> Option<f64> {
        self.mae_where(|p, q| {
            (p == Unit::Mixture || q == Unit::Mixture) && p != Unit::Silence && q != Unit::Silence
        })
    }

    /// 4×4 table, rows = next unit, columns = previous unit, `-` on the
    /// diagonal and for empty cells, followed by an `overall` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("next\\prev");
        for u in Unit::ALL {
            write!(s, ",{u}").unwrap();
        }
        s.push('\n');
        for q in Unit::ALL {
            s.push_str(q.name());
            for p in Unit::ALL {
                match self.cell_mae(p, q) {
                    Some(m) => write!(s, ",{m:.2}").unwrap(),
                    None => s.push_str(",-"),
                }
            }
            s.push('\n');
        }
        writeln!(s, "overall,{:.2}", self.overall_mae()).unwrap();
        s
    }
}

/// Pairs the k-th internal boundary of `hyp` with the k-th of `reference`.
/// Clip edges are not boundaries.
pub fn boundary_mae(hyp: &UnitTimeline, reference: &UnitTimeline) -> Result<BoundaryReport, SegmentError> {
    if hyp.unit_sequence() != reference.unit_sequence() {
        return Err(SegmentError::SequenceMismatch {
            hyp: hyp.segments().len(),
            reference: reference.segments().len(),
        });
    }
    let mut r = BoundaryReport::default();
    for ((fh, p, q), (fr, _, _)) in hyp.boundaries().into_iter().zip(reference.boundaries()) {
        r.add(p, q, (fh as f64 - fr as f64).abs());
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Counting {
    /// One vote per reference segment (majority unit over its frames).
    #[default]
    Segment,
    /// One count per frame.
    Frame,
}

/// `counts[recognized][reference]`, indexed by [`Unit::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn get(&self, recognized: Unit, reference: Unit) -> u64 {
        self.counts[recognized.index()][reference.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// trace / total, 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..4).map(|i| self.counts[i][i]).sum::<u64>() as f64 / total as f64
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for i in 0..4 {
            for j in 0..4 {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }

    /// Symmetric confusion between two distinct units (both directions).
    pub fn pair(&self, a: Unit, b: Unit) -> u64 {
        self.get(a, b) + self.get(b, a)
    }

    /// The unordered off-diagonal pair with the most confusions; ties go to
    /// the first pair in unit order.
    pub fn worst_pair(&self) -> (Unit, Unit, u64) {
        let mut best = (Unit::Silence, Unit::Piano, 0);
        for i in 0..4 {
            for j in i + 1..4 {
                let (a, b) = (Unit::from_index(i), Unit::from_index(j));
                let c = self.pair(a, b);
                if c > best.2 {
                    best = (a, b, c);
                }
            }
        }
        best
    }

    /// Rows = recognized, columns = reference.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("recognized\\reference");
        for u in Unit::ALL {
            write!(s, ",{u}").unwrap();
        }
        s.push('\n');
        for r in Unit::ALL {
            s.push_str(r.name());
            for c in Unit::ALL {
                write!(s, ",{}", self.get(r, c)).unwrap();
            }
            s.push('\n');
        }
        writeln!(s, "accuracy,{:.4}", self.accuracy()).unwrap();
        s
    }
}

pub fn confusion_matrix(
    recognized: &UnitTimeline,
    reference: &UnitTimeline,
    counting: Counting,
) -> Result<ConfusionMatrix, SegmentError> {
    if recognized.total_frames() != reference.total_frames() {
        return Err(SegmentError::SpanMismatch {
            a: recognized.total_frames(),
            b: reference.total_frames(),
        });
    }
    let rec = recognized.labels();
    let mut m = ConfusionMatrix::default();
    for seg in reference.segments() {
        let mut votes = [0u64; 4];
        for u in &rec[seg.start..seg.end] {
            votes[u.index()] += 1;
        }
        match counting {
            Counting::Frame => {
                for (i, v) in votes.iter().enumerate() {
                    m.counts[i][seg.unit.index()] += v;
                }
            }
            Counting::Segment => {
                // Frame votes are the recognized durations, so the duration
                // tie-break coincides with the vote; the fallback is unit order.
                let mut winner = 0;
                for i in 1..4 {
                    if votes[i] > votes[winner] {
                        winner = i;
                    }
                }
                m.counts[winner][seg.unit.index()] += 1;
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Segment;
    use proptest::prelude::*;
    use Unit::*;

    fn tl(segs: &[(Unit, usize, usize)]) -> UnitTimeline {
        UnitTimeline::new(segs.iter().map(|&s| Segment::from(s)).collect(), 10.0).unwrap()
    }

    #[test]
    fn extraction_drops_short_runs() {
        let t = tl(&[(Piano, 0, 500), (Bass, 500, 520), (Piano, 520, 900)]);
        let segs = extract_segments(&t, "c", DEFAULT_MIN_SEGMENT_FRAMES);
        assert_eq!(segs.len(), 2);
        assert!(segs.iter().all(|s| s.unit == Piano));
        assert_eq!((segs[0].start_s, segs[0].end_s), (0.0, 5.0));
        assert_eq!(segs[1].id(), "c:piano:520-900");

        let all = extract_segments(&t, "c", 0);
        let back: Vec<Segment> = all.iter().map(|s| Segment::from((s.unit, s.start_frame, s.end_frame))).collect();
        assert_eq!(back, t.segments());

        assert!(extract_solo_segments(&tl(&[(Silence, 0, 1000)]), "c", 0).is_empty());
        let mixed = tl(&[(Mixture, 0, 400), (Bass, 400, 800)]);
        assert_eq!(extract_solo_segments(&mixed, "c", 300).len(), 1);
    }

    #[test]
    fn single_shift() {
        let r = tl(&[(Silence, 0, 100), (Piano, 100, 200)]);
        let h = tl(&[(Silence, 0, 107), (Piano, 107, 200)]);
        let rep = boundary_mae(&h, &r).unwrap();
        assert_eq!(rep.cell_mae(Silence, Piano), Some(7.0));
        assert_eq!(rep.overall_mae(), 7.0);
        assert_eq!(rep.cell_mae(Piano, Silence), None);
        assert_eq!(boundary_mae(&r, &r).unwrap().overall_mae(), 0.0);
    }

    #[test]
    fn differing_sequences_rejected() {
        let a = tl(&[(Silence, 0, 10), (Piano, 10, 20)]);
        let b = tl(&[(Silence, 0, 10), (Bass, 10, 20)]);
        let e = boundary_mae(&a, &b).unwrap_err();
        assert!(e.to_string().contains("confusion_matrix"));
    }

    // Reference per-transition MAE, indexed [prev][next].
    const TRANSITION_MAE: [[Option<f64>; 4]; 4] = [
        [None, Some(0.9), Some(2.4), Some(2.5)],
        [Some(2.0), None, Some(29.3), Some(6.4)],
        [Some(0.7), Some(24.6), None, Some(17.1)],
        [Some(2.4), Some(7.2), Some(14.8), None],
    ];

    #[test]
    fn transition_fixture_aggregates() {
        let mut rep = BoundaryReport::default();
        for (i, row) in TRANSITION_MAE.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    // Two boundaries per cell whose errors average to the cell value.
                    rep.add(Unit::from_index(i), Unit::from_index(j), v - 0.5);
                    rep.add(Unit::from_index(i), Unit::from_index(j), v + 0.5);
                }
            }
        }
        for (i, row) in TRANSITION_MAE.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let got = rep.cell_mae(Unit::from_index(i), Unit::from_index(j));
                match v {
                    Some(v) => assert!((got.unwrap() - v).abs() < 1e-12),
                    None => assert_eq!(got, None),
                }
            }
        }
        let mean: f64 = TRANSITION_MAE.iter().flatten().flatten().sum::<f64>() / 12.0;
        assert!((rep.overall_mae() - mean).abs() < 1e-12);
        assert!(rep.silence_adjacent_mae().unwrap() <= 2.5);
        assert!(rep.mixture_adjacent_mae().unwrap() > rep.silence_adjacent_mae().unwrap());
        let csv = rep.to_csv();
        assert!(csv.lines().nth(2).unwrap().starts_with("piano,0.90,-,24.60,7.20"));

        let json = serde_json::to_string(&rep).unwrap();
        let back: BoundaryReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn majority_rule() {
        let r = tl(&[(Piano, 0, 100)]);
        let h = tl(&[(Mixture, 0, 60), (Piano, 60, 100)]);
        let m = confusion_matrix(&h, &r, Counting::Segment).unwrap();
        assert_eq!(m.get(Mixture, Piano), 1);
        assert_eq!(m.total(), 1);
        let f = confusion_matrix(&h, &r, Counting::Frame).unwrap();
        assert_eq!((f.get(Mixture, Piano), f.get(Piano, Piano)), (60, 40));
        // exact tie falls back to unit order
        let h = tl(&[(Bass, 0, 50), (Piano, 50, 100)]);
        assert_eq!(confusion_matrix(&h, &r, Counting::Segment).unwrap().get(Piano, Piano), 1);
    }

    #[test]
    fn span_mismatch() {
        let e = confusion_matrix(&tl(&[(Piano, 0, 10)]), &tl(&[(Piano, 0, 11)]), Counting::Segment);
        assert_eq!(e.unwrap_err(), SegmentError::SpanMismatch { a: 10, b: 11 });
    }

    #[test]
    fn confusion_fixture() {
        let m = ConfusionMatrix {
            counts: [[2000, 3, 1, 16], [0, 1742, 86, 14], [0, 247, 1834, 23], [0, 1, 79, 1947]],
        };
        // The cells give 7523 / 7993 = 0.9412; the quoted accuracy for this fixture is 0.940.
        assert_eq!(m.total(), 7993);
        assert!((m.accuracy() - 0.940).abs() < 1.5e-3);
        assert_eq!(m.worst_pair(), (Piano, Mixture, 333));
        let csv = m.to_csv();
        assert!(csv.contains("mixture,0,247,1834,23"));
        assert!(csv.ends_with("accuracy,0.9412\n"));
    }

    fn arb_timeline(max_frames: usize) -> impl Strategy<Value = UnitTimeline> {
        prop::collection::vec((0usize..4, 1usize..40), 1..12).prop_map(move |runs| {
            let mut labels = Vec::new();
            for (u, n) in runs {
                labels.extend(std::iter::repeat_n(Unit::from_index(u), n));
            }
            labels.truncate(max_frames.max(1));
            UnitTimeline::from_labels(&labels, 10.0).unwrap()
        })
    }

    proptest! {
        #[test]
        fn mae_is_zero_on_self_and_symmetric(t in arb_timeline(400), shifts in prop::collection::vec(-3i64..=3, 12)) {
            prop_assert_eq!(boundary_mae(&t, &t).unwrap().overall_mae(), 0.0);
            // Perturb each boundary while keeping segments non-empty.
            let mut segs: Vec<Segment> = t.segments().to_vec();
            for k in 0..segs.len().saturating_sub(1) {
                let lo = segs[k].start as i64 + 1;
                let hi = segs[k + 1].end as i64 - 1;
                let b = (segs[k].end as i64 + shifts[k % shifts.len()]).clamp(lo, hi) as usize;
                segs[k].end = b;
                segs[k + 1].start = b;
            }
            let h = UnitTimeline::new(segs, 10.0).unwrap();
            let a = boundary_mae(&h, &t).unwrap();
            let b = boundary_mae(&t, &h).unwrap();
            prop_assert_eq!(a.overall_mae(), b.overall_mae());
            prop_assert_eq!(a, b.clone());
            let n = b.count() as f64;
            let weighted: f64 = Unit::ALL.iter().flat_map(|&p| Unit::ALL.iter().map(move |&q| (p, q)))
                .filter_map(|(p, q)| b.cell_mae(p, q).map(|m| m * b.cell_count(p, q) as f64))
                .sum();
            if n > 0.0 {
                prop_assert!((weighted / n - b.overall_mae()).abs() < 1e-9);
            }
        }

        #[test]
        fn confusion_sums_match_segment_counts(r in arb_timeline(300), h in arb_timeline(300)) {
            let n = r.total_frames().min(h.total_frames());
            let r = UnitTimeline::from_labels(&r.labels()[..n], 10.0).unwrap();
            let h = UnitTimeline::from_labels(&h.labels()[..n], 10.0).unwrap();
            let m = confusion_matrix(&h, &r, Counting::Segment).unwrap();
            prop_assert_eq!(m.total() as usize, r.segments().len());
            for u in Unit::ALL {
                let col: u64 = Unit::ALL.iter().map(|&x| m.get(x, u)).sum();
                let want = r.segments().iter().filter(|s| s.unit == u).count() as u64;
                prop_assert_eq!(col, want);
            }
            prop_assert!((0.0..=1.0).contains(&m.accuracy()));
            let f = confusion_matrix(&h, &r, Counting::Frame).unwrap();
            prop_assert_eq!(f.total() as usize, n);
        }

        #[test]
        fn extraction_respects_min_len(t in arb_timeline(400), min in 0usize..60) {
            for s in extract_segments(&t, "x", min) {
                prop_assert!(s.n_frames() >= min);
            }
        }
    }
}
