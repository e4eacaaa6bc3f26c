//! In-memory pipeline pieces shared by `repro`, `eval` and the acceptance suite.

use std::collections::BTreeMap;

use anyhow::Result;
use rayon::prelude::*;

use scoreseg_core::acoustic_model::{
    alignment_features, flat_start_init, reestimate, recognize, viterbi_align, InitConfig, ModelSet, TrainConfig,
    TrainItem, TrainReport,
};
use scoreseg_core::dsp::Waveform;
use scoreseg_core::knowledge::{ActivityVector, CATEGORIES};
use scoreseg_core::metrics::{sdr, SdrReport, DEFAULT_CAP_DB};
use scoreseg_core::mixgen::PoolEntry;
use scoreseg_core::rng::CounterRng;
use scoreseg_core::score::{Unit, UnitTimeline};
use scoreseg_core::segmenter::{
    boundary_mae, confusion_matrix, extract_solo_segments, BoundaryReport, ConfusionMatrix, Counting,
};
use scoreseg_core::separator::{conditioned_separate, learn_templates, separate, SeparatorConfig, TemplateModel};
use scoreseg_core::synthsim::{
    random_activity_plan, synth_cinematic_clip, synth_music_clip, CinematicClip, ClipSpec, LabeledClip,
};

use crate::manifest::ModelSettings;

/// A per-item seed derived from a root seed, a stream label and an index.
pub fn derive_seed(root: u64, label: &str, i: u64) -> u64 {
    CounterRng::new(root).split_str(label).split(i).next_u64()
}

pub fn music_clips(root: u64, label: &str, n: usize, sample_rate: u32, timbre_distance: f64) -> Result<Vec<LabeledClip>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let spec = ClipSpec::new(derive_seed(root, label, i), sample_rate).with_timbre_distance(timbre_distance);
            Ok(synth_music_clip(&spec)?)
        })
        .collect()
}

pub fn cinematic_clips(root: u64, label: &str, n: usize, duration_s: f64, sample_rate: u32) -> Result<Vec<CinematicClip>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(root, label, i);
            let plan = random_activity_plan(seed, duration_s);
            Ok(synth_cinematic_clip(seed, duration_s, &plan, sample_rate)?)
        })
        .collect()
}

pub fn init_config(m: &ModelSettings) -> InitConfig {
    InitConfig {
        n_states: m.n_states,
        n_mix: m.n_mix,
        ..InitConfig::desk()
    }
}

pub fn train_config(m: &ModelSettings) -> TrainConfig {
    TrainConfig {
        mode: m.mode,
        n_iter: m.n_iter,
        ..TrainConfig::default()
    }
}

pub fn train_items(clips: &[LabeledClip]) -> Result<Vec<TrainItem>> {
    clips
        .par_iter()
        .map(|c| {
            Ok(TrainItem {
                features: alignment_features(&c.mixture)?,
                timeline: c.timeline.clone(),
            })
        })
        .collect()
}

pub fn train_hmms(items: &[TrainItem], m: &ModelSettings) -> Result<(ModelSet, TrainReport)> {
    let init = flat_start_init(items, &init_config(m))?;
    Ok(reestimate(&init, items, &train_config(m))?)
}

/// Forced-alignment timelines, one per item, using each item's unit sequence.
pub fn forced_alignments(ms: &ModelSet, items: &[TrainItem]) -> Result<Vec<UnitTimeline>> {
    items
        .par_iter()
        .map(|it| Ok(viterbi_align(ms, &it.features, &it.timeline.unit_sequence())?.timeline))
        .collect()
}

pub struct AlignmentEval {
    pub boundaries: BoundaryReport,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate_alignment(ms: &ModelSet, items: &[TrainItem], loop_penalty: f64) -> Result<AlignmentEval> {
    let parts: Vec<(BoundaryReport, ConfusionMatrix)> = items
        .par_iter()
        .map(|it| -> Result<_> {
            let fa = viterbi_align(ms, &it.features, &it.timeline.unit_sequence())?;
            let rec = recognize(ms, &it.features, loop_penalty)?;
            Ok((
                boundary_mae(&fa.timeline, &it.timeline)?,
                confusion_matrix(&rec.timeline, &it.timeline, Counting::Segment)?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut boundaries = BoundaryReport::default();
    let mut confusion = ConfusionMatrix::default();
    for (b, c) in &parts {
        boundaries.merge(b);
        confusion.merge(c);
    }
    Ok(AlignmentEval { boundaries, confusion })
}

/// Keeps every segment boundary but permutes the segment labels with a seeded
/// shuffle, redrawing until the unit sequence differs from the original.
/// Timelines whose labels are all equal are returned unchanged.
pub fn shuffled_timeline(tl: &UnitTimeline, seed: u64) -> UnitTimeline {
    let segs = tl.segments();
    let original = tl.unit_sequence();
    if original.iter().all(|u| *u == original[0]) {
        return tl.clone();
    }
    let mut rng = CounterRng::new(seed).split_str("shuffle");
    loop {
        let mut units = original.clone();
        rng.shuffle(&mut units);
        let mut labels = Vec::with_capacity(tl.total_frames());
        for (s, u) in segs.iter().zip(&units) {
            labels.extend(std::iter::repeat_n(*u, s.len()));
        }
        let out = UnitTimeline::from_labels(&labels, tl.frame_shift_ms).expect("non-empty labels");
        if out.labels() != tl.labels() {
            return out;
        }
    }
}

/// Solo material per instrument source, cut from the mixtures where the
/// timelines mark a single instrument for at least `min_len_frames`.
pub fn solo_material(clips: &[(&Waveform, &UnitTimeline)], min_len_frames: usize) -> BTreeMap<String, Vec<Waveform>> {
    let mut out: BTreeMap<String, Vec<Waveform>> = BTreeMap::new();
    out.insert("piano".into(), Vec::new());
    out.insert("bass".into(), Vec::new());
    for (i, (mix, tl)) in clips.iter().enumerate() {
        for s in extract_solo_segments(tl, &i.to_string(), min_len_frames) {
            let name = if s.unit == Unit::Piano { "piano" } else { "bass" };
            out.get_mut(name).expect("both sources present").push(PoolEntry::cut(&s, mix).audio);
        }
    }
    out
}

/// SDR of each stem against the reference stems, with the silent-reference
/// exclusions resolved.
pub fn score_stems(
    report: &mut SdrReport,
    clip: &str,
    references: &BTreeMap<String, Waveform>,
    estimates: &BTreeMap<String, Waveform>,
) -> Result<()> {
    for (name, est) in estimates {
        if let Some(r) = references.get(name) {
            report.insert(clip, name, sdr(r, est, report.cap_db)?);
        }
    }
    Ok(())
}

/// Separates each test clip with its knowledge timeline (or none).
pub fn separation_report(clips: &[LabeledClip], timelines: Option<&[UnitTimeline]>, tm: &TemplateModel) -> Result<SdrReport> {
    let stems: Vec<BTreeMap<String, Waveform>> = clips
        .par_iter()
        .enumerate()
        .map(|(i, c)| Ok(separate(&c.mixture, timelines.map(|t| &t[i]), tm)?.stems))
        .collect::<Result<_>>()?;
    let mut rep = SdrReport::new(DEFAULT_CAP_DB);
    for (i, (c, est)) in clips.iter().zip(&stems).enumerate() {
        score_stems(&mut rep, &format!("clip{i:03}"), &c.stems, est)?;
    }
    rep.finalize();
    Ok(rep)
}

pub struct SeparationScenarios {
    pub oracle: SdrReport,
    pub forced: SdrReport,
    pub shuffled: SdrReport,
    pub no_knowledge: SdrReport,
    pub hmms: ModelSet,
    pub hmm_report: TrainReport,
}

/// Templates and gating from the true timelines, from forced alignments with
/// HMMs trained on the training clips, and from label-shuffled timelines.
pub fn separation_scenarios(
    train: &[LabeledClip],
    test: &[LabeledClip],
    model: &ModelSettings,
    sep: &SeparatorConfig,
    min_len_frames: usize,
    seed: u64,
) -> Result<SeparationScenarios> {
    let train_items = train_items(train)?;
    let test_items = train_items_for_test(test)?;
    let (ms, hmm_report) = train_hmms(&train_items, model)?;
    let fa_train = forced_alignments(&ms, &train_items)?;
    let fa_test = forced_alignments(&ms, &test_items)?;
    let oracle_train: Vec<UnitTimeline> = train.iter().map(|c| c.timeline.clone()).collect();
    let oracle_test: Vec<UnitTimeline> = test.iter().map(|c| c.timeline.clone()).collect();
    let shuf_train: Vec<UnitTimeline> = oracle_train
        .iter()
        .enumerate()
        .map(|(i, t)| shuffled_timeline(t, derive_seed(seed, "shuffle-train", i as u64)))
        .collect();
    let shuf_test: Vec<UnitTimeline> = oracle_test
        .iter()
        .enumerate()
        .map(|(i, t)| shuffled_timeline(t, derive_seed(seed, "shuffle-test", i as u64)))
        .collect();
    let templates = |tls: &[UnitTimeline]| -> Result<TemplateModel> {
        let pairs: Vec<(&Waveform, &UnitTimeline)> = train.iter().map(|c| &c.mixture).zip(tls).collect();
        Ok(learn_templates(&solo_material(&pairs, min_len_frames), sep)?)
    };
    let tm_oracle = templates(&oracle_train)?;
    let tm_fa = templates(&fa_train)?;
    let tm_shuf = templates(&shuf_train)?;
    Ok(SeparationScenarios {
        oracle: separation_report(test, Some(&oracle_test), &tm_oracle)?,
        forced: separation_report(test, Some(&fa_test), &tm_fa)?,
        shuffled: separation_report(test, Some(&shuf_test), &tm_shuf)?,
        no_knowledge: separation_report(test, None, &tm_fa)?,
        hmms: ms,
        hmm_report,
    })
}

fn train_items_for_test(test: &[LabeledClip]) -> Result<Vec<TrainItem>> {
    // Test clips are aligned with their score's unit sequence only.
    train_items(test)
}

/// Templates for speech, music and sfx from the isolated stems of training clips.
pub fn cinematic_templates(train: &[CinematicClip], sep: &SeparatorConfig) -> Result<TemplateModel> {
    let mut solo: BTreeMap<String, Vec<Waveform>> = BTreeMap::new();
    for c in train {
        for name in CATEGORIES {
            solo.entry(name.to_string()).or_default().push(c.stems[name].clone());
        }
    }
    Ok(learn_templates(&solo, sep)?)
}

pub struct ConditioningScores {
    pub true_activity: SdrReport,
    pub all_on: SdrReport,
}

pub fn conditioning_scores(test: &[CinematicClip], tm: &TemplateModel) -> Result<ConditioningScores> {
    let runs: Vec<(BTreeMap<String, Waveform>, BTreeMap<String, Waveform>)> = test
        .par_iter()
        .map(|c| {
            let on = vec![ActivityVector::all_on(); c.activity.len()];
            Ok((
                conditioned_separate(&c.mixture, &c.activity, tm)?.stems,
                conditioned_separate(&c.mixture, &on, tm)?.stems,
            ))
        })
        .collect::<Result<_>>()?;
    let mut t = SdrReport::new(DEFAULT_CAP_DB);
    let mut a = SdrReport::new(DEFAULT_CAP_DB);
    for (i, (c, (st, so))) in test.iter().zip(&runs).enumerate() {
        let id = format!("clip{i:03}");
        score_stems(&mut t, &id, &c.stems, st)?;
        score_stems(&mut a, &id, &c.stems, so)?;
    }
    t.finalize();
    a.finalize();
    Ok(ConditioningScores {
        true_activity: t,
        all_on: a,
    })
}
