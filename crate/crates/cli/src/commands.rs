//! One function per subcommand. Each reads the artifacts of earlier stages
//! from the output directory and writes its own atomically.
//!
//! ```text
//! out/
//!   corpus/music/      train-NNN.*, test-NNN.*, manifest.jsonl
//!   corpus/cinematic/  same layout, activity JSON instead of scores
//!   models/            hmm.json, templates.json, cinematic_templates.json, projector.json
//!   align/             <clip>.fa.json, <clip>.rec.json
//!   inventory.json
//!   mixgen/
//!   stems/music/, stems/cinematic/
//!   reports/           *.json, tables also as *.csv
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use scoreseg_core::acoustic_model::{alignment_features, recognize, viterbi_align, ModelSet, TrainItem};
use scoreseg_core::dsp::Waveform;
use scoreseg_core::knowledge::{canonical_training_set, projection_csv, train_projector, Projector, ProjectorTraining};
use scoreseg_core::metrics::{scenario_table_csv, SdrReport, DEFAULT_CAP_DB};
use scoreseg_core::mixgen::{build_pool, write_batch, PoolEntry};
use scoreseg_core::score::{parse_smf, timeline_from_score, Instrument, UnitTimeline, FRAME_SHIFT_MS};
use scoreseg_core::segmenter::{
    boundary_mae, confusion_matrix, extract_segments, BoundaryReport, ConfusionMatrix, Counting, InventorySegment,
};
use scoreseg_core::separator::{conditioned_separate, learn_templates, separate, TemplateModel};
use scoreseg_core::synthsim::corpus::{
    manifest_to_string, read_manifest, write_cinematic_clip, write_music_clip, CorpusRecord,
};
use scoreseg_core::synthsim::{alignment_frames, ActivityPlan, CinematicClip, LabeledClip};
use scoreseg_core::wav::write_atomic;

use crate::acceptance::{self, CriterionResult};
use crate::experiments::*;
use crate::manifest::RunManifest;

/// A validated manifest and the output directory every command works under.
pub struct RunContext {
    pub manifest: RunManifest,
    pub out: PathBuf,
}

impl RunContext {
    pub fn new(manifest: RunManifest) -> Result<Self> {
        manifest.validate()?;
        let out = manifest.output_dir.clone();
        Ok(Self { manifest, out })
    }

    fn dir(&self, rel: &str) -> Result<PathBuf> {
        let d = self.out.join(rel);
        fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    fn music_root(&self) -> PathBuf {
        self.manifest.corpus.music.clone().unwrap_or_else(|| self.out.join("corpus/music"))
    }

    fn cinematic_root(&self) -> PathBuf {
        self.manifest.corpus.cinematic.clone().unwrap_or_else(|| self.out.join("corpus/cinematic"))
    }

    fn write(&self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out.join(rel);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
        }
        write_atomic(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    fn read(&self, rel: &str, hint: &str) -> Result<String> {
        let path = self.out.join(rel);
        fs::read_to_string(&path).with_context(|| format!("reading {} (run `{hint}` first)", path.display()))
    }
}

// ---------------------------------------------------------------- corpus

pub fn cmd_synth(ctx: &RunContext) -> Result<()> {
    let m = &ctx.manifest;
    let s = &m.synth;
    if m.corpus.music.is_none() {
        let dir = ctx.dir("corpus/music")?;
        let jobs: Vec<(String, u64)> = (0..s.n_train as u64)
            .map(|i| (format!("train-{i:03}"), derive_seed(m.seed, "corpus-music-train", i)))
            .chain((0..s.n_test as u64).map(|i| (format!("test-{i:03}"), derive_seed(m.seed, "corpus-music-test", i))))
            .collect();
        let records: Vec<CorpusRecord> = jobs
            .par_iter()
            .map(|(id, seed)| {
                let spec = scoreseg_core::synthsim::ClipSpec::new(*seed, s.sample_rate).with_timbre_distance(s.timbre_distance);
                let clip = scoreseg_core::synthsim::synth_music_clip(&spec)?;
                Ok(write_music_clip(&dir, id, *seed, &clip)?)
            })
            .collect::<Result<_>>()?;
        write_atomic(&dir.join("manifest.jsonl"), manifest_to_string(&records).as_bytes())?;
        log::info!("wrote {} music clips to {}", records.len(), dir.display());
    }
    if m.corpus.cinematic.is_none() {
        let dir = ctx.dir("corpus/cinematic")?;
        let jobs: Vec<(String, u64)> = (0..s.n_cinematic_train as u64)
            .map(|i| (format!("train-{i:03}"), derive_seed(m.seed, "corpus-cinematic-train", i)))
            .chain(
                (0..s.n_cinematic_test as u64).map(|i| (format!("test-{i:03}"), derive_seed(m.seed, "corpus-cinematic-test", i))),
            )
            .collect();
        let records: Vec<CorpusRecord> = jobs
            .par_iter()
            .map(|(id, seed)| {
                let plan = scoreseg_core::synthsim::random_activity_plan(*seed, s.cinematic_duration_s);
                let clip = scoreseg_core::synthsim::synth_cinematic_clip(*seed, s.cinematic_duration_s, &plan, s.sample_rate)?;
                Ok(write_cinematic_clip(&dir, id, *seed, &clip)?)
            })
            .collect::<Result<_>>()?;
        write_atomic(&dir.join("manifest.jsonl"), manifest_to_string(&records).as_bytes())?;
        log::info!("wrote {} cinematic clips to {}", records.len(), dir.display());
    }
    Ok(())
}

/// A music clip loaded from disk.
struct MusicClip {
    id: String,
    clip: LabeledClip,
}

fn is_train(id: &str) -> bool {
    id.starts_with("train-")
}

fn load_music(ctx: &RunContext, want: impl Fn(&str) -> bool + Sync) -> Result<Vec<MusicClip>> {
    let root = ctx.music_root();
    let records = read_manifest(&root.join("manifest.jsonl")).context("music corpus missing (run `synth` first)")?;
    let map = &ctx.manifest.instrument_map;
    records
        .par_iter()
        .filter(|r| want(&r.id))
        .map(|r| {
            let mixture = r.load_mixture(&root)?;
            let stems = r.load_stems(&root)?;
            let score_path = r.score.as_ref().with_context(|| format!("{}: music clip without a score", r.id))?;
            let bytes = fs::read(root.join(score_path)).with_context(|| format!("reading score of {}", r.id))?;
            let score = parse_smf(&bytes).with_context(|| format!("score of {}", r.id))?;
            let frames = alignment_frames(mixture.n_samples(), mixture.sample_rate());
            // Fails before any decoding when the score lacks a mapped track.
            let from_score = timeline_from_score(&score, map, FRAME_SHIFT_MS, frames).with_context(|| format!("score of {}", r.id))?;
            let timeline = r.timeline.clone().unwrap_or(from_score);
            Ok(MusicClip {
                id: r.id.clone(),
                clip: LabeledClip {
                    mixture,
                    stems,
                    timeline,
                    score,
                    sections: Vec::new(),
                },
            })
        })
        .collect()
}

struct CinematicOnDisk {
    id: String,
    clip: CinematicClip,
}

fn load_cinematic(ctx: &RunContext, want: impl Fn(&str) -> bool + Sync) -> Result<Vec<CinematicOnDisk>> {
    let root = ctx.cinematic_root();
    let records = read_manifest(&root.join("manifest.jsonl")).context("cinematic corpus missing (run `synth` first)")?;
    records
        .par_iter()
        .filter(|r| want(&r.id))
        .map(|r| {
            let activity = r.load_activity(&root)?.with_context(|| format!("{}: no activity annotation", r.id))?;
            Ok(CinematicOnDisk {
                id: r.id.clone(),
                clip: CinematicClip {
                    mixture: r.load_mixture(&root)?,
                    stems: r.load_stems(&root)?,
                    activity,
                    plan: ActivityPlan::default(),
                },
            })
        })
        .collect()
}

fn items(clips: &[MusicClip]) -> Result<Vec<TrainItem>> {
    clips
        .par_iter()
        .map(|c| {
            Ok(TrainItem {
                features: alignment_features(&c.clip.mixture)?,
                timeline: c.clip.timeline.clone(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------- HMMs

pub fn cmd_train_hmm(ctx: &RunContext) -> Result<()> {
    let train = load_music(ctx, is_train)?;
    if train.is_empty() {
        bail!("music corpus has no train- clips");
    }
    let (ms, report) = train_hmms(&items(&train)?, &ctx.manifest.model)?;
    ctx.write("models/hmm.json", ms.to_json().as_bytes())?;
    ctx.write_json("reports/hmm_training.json", &report)?;
    Ok(())
}

fn load_hmm(ctx: &RunContext) -> Result<ModelSet> {
    Ok(ModelSet::from_json(&ctx.read("models/hmm.json", "train-hmm")?)?)
}

#[derive(Serialize)]
struct AlignmentReport<'a> {
    clips: usize,
    boundaries: &'a BoundaryReport,
}

pub fn cmd_align(ctx: &RunContext) -> Result<BoundaryReport> {
    let ms = load_hmm(ctx)?;
    let clips = load_music(ctx, |_| true)?;
    let its = items(&clips)?;
    let parts: Vec<BoundaryReport> = clips
        .par_iter()
        .zip(&its)
        .map(|(c, it)| {
            // The unit sequence comes from the score; the record's timeline is only the reference.
            let units = timeline_from_score(&c.clip.score, &ctx.manifest.instrument_map, FRAME_SHIFT_MS, it.features.n_frames())?
                .unit_sequence();
            let fa = viterbi_align(&ms, &it.features, &units)?;
            ctx.write_json(&format!("align/{}.fa.json", c.id), &fa.timeline)?;
            Ok(boundary_mae(&fa.timeline, &c.clip.timeline)?)
        })
        .collect::<Result<_>>()?;
    let mut total = BoundaryReport::default();
    parts.iter().for_each(|p| total.merge(p));
    ctx.write_json(
        "reports/alignment.json",
        &AlignmentReport {
            clips: clips.len(),
            boundaries: &total,
        },
    )?;
    ctx.write("reports/table1.csv", total.to_csv().as_bytes())?;
    Ok(total)
}

pub fn cmd_recognize(ctx: &RunContext) -> Result<ConfusionMatrix> {
    let ms = load_hmm(ctx)?;
    let clips = load_music(ctx, |_| true)?;
    let its = items(&clips)?;
    let parts: Vec<ConfusionMatrix> = clips
        .par_iter()
        .zip(&its)
        .map(|(c, it)| {
            let rec = recognize(&ms, &it.features, ctx.manifest.model.loop_penalty)?;
            ctx.write_json(&format!("align/{}.rec.json", c.id), &rec.timeline)?;
            Ok(confusion_matrix(&rec.timeline, &c.clip.timeline, Counting::Segment)?)
        })
        .collect::<Result<_>>()?;
    let mut total = ConfusionMatrix::default();
    parts.iter().for_each(|p| total.merge(p));
    ctx.write_json("reports/recognition.json", &serde_json::json!({ "confusion": total, "accuracy": total.accuracy() }))?;
    ctx.write("reports/table2.csv", total.to_csv().as_bytes())?;
    Ok(total)
}

fn load_alignment(ctx: &RunContext, id: &str) -> Result<UnitTimeline> {
    Ok(serde_json::from_str(&ctx.read(&format!("align/{id}.fa.json"), "align")?)?)
}

// ---------------------------------------------------------------- segments and mixtures

pub fn cmd_segment(ctx: &RunContext) -> Result<Vec<InventorySegment>> {
    let train = load_music(ctx, is_train)?;
    let mut inventory = Vec::new();
    for c in &train {
        let tl = load_alignment(ctx, &c.id)?;
        inventory.extend(extract_segments(&tl, &c.id, ctx.manifest.segment.min_len_frames));
    }
    ctx.write_json("inventory.json", &inventory)?;
    Ok(inventory)
}

fn load_inventory(ctx: &RunContext) -> Result<Vec<InventorySegment>> {
    Ok(serde_json::from_str(&ctx.read("inventory.json", "segment")?)?)
}

/// Cuts the pool of `inst` out of the training mixtures.
fn pool(inventory: &[InventorySegment], inst: Instrument, min_seg_s: f64, clips: &BTreeMap<&str, &Waveform>) -> Result<Vec<PoolEntry>> {
    build_pool(inventory, inst, min_seg_s)
        .iter()
        .map(|s| {
            let audio = clips.get(s.clip.as_str()).with_context(|| format!("inventory names unknown clip {}", s.clip))?;
            Ok(PoolEntry::cut(s, audio))
        })
        .collect()
}

pub fn cmd_mixgen(ctx: &RunContext) -> Result<()> {
    let inventory = load_inventory(ctx)?;
    let train = load_music(ctx, is_train)?;
    let audio: BTreeMap<&str, &Waveform> = train.iter().map(|c| (c.id.as_str(), &c.clip.mixture)).collect();
    let mg = &ctx.manifest.mixgen;
    let target = pool(&inventory, Instrument::Piano, mg.augmentation.min_seg_s, &audio)?;
    let perturbation = pool(&inventory, Instrument::Bass, mg.augmentation.min_seg_s, &audio)?;
    let dir = ctx.dir("mixgen")?;
    write_batch(&dir, &target, &perturbation, &mg.augmentation, mg.n_draws)?;
    Ok(())
}

// ---------------------------------------------------------------- separation

pub fn cmd_train_sep(ctx: &RunContext) -> Result<()> {
    let m = &ctx.manifest;
    let inventory = load_inventory(ctx)?;
    let train = load_music(ctx, is_train)?;
    let audio: BTreeMap<&str, &Waveform> = train.iter().map(|c| (c.id.as_str(), &c.clip.mixture)).collect();
    let mut solo = BTreeMap::new();
    for inst in Instrument::ALL {
        let entries = pool(&inventory, inst, 0.0, &audio)?;
        solo.insert(inst.name().to_string(), entries.into_iter().map(|e| e.audio).collect::<Vec<_>>());
    }
    ctx.write("models/templates.json", learn_templates(&solo, &m.separator)?.to_json().as_bytes())?;

    let cine = load_cinematic(ctx, is_train)?;
    let clips: Vec<CinematicClip> = cine.into_iter().map(|c| c.clip).collect();
    ctx.write("models/cinematic_templates.json", cinematic_templates(&clips, &m.separator)?.to_json().as_bytes())?;
    Ok(())
}

fn load_templates(ctx: &RunContext, rel: &str) -> Result<TemplateModel> {
    Ok(TemplateModel::from_json(&ctx.read(rel, "train-sep")?)?)
}

pub fn cmd_separate(ctx: &RunContext) -> Result<()> {
    let test = load_music(ctx, |id| !is_train(id))?;
    let tm = load_templates(ctx, "models/templates.json")?;
    let dir = ctx.dir("stems/music")?;
    let stems: Vec<BTreeMap<String, Waveform>> = test
        .par_iter()
        .map(|c| {
            let tl = load_alignment(ctx, &c.id)?;
            let out = separate(&c.clip.mixture, Some(&tl), &tm)?;
            out.write(&dir, &c.id)?;
            Ok(out.stems)
        })
        .collect::<Result<_>>()?;
    let mut rep = SdrReport::new(DEFAULT_CAP_DB);
    for (c, est) in test.iter().zip(&stems) {
        score_stems(&mut rep, &c.id, &c.clip.stems, est)?;
    }
    rep.finalize();
    ctx.write_json("reports/separation.json", &rep)?;

    let cine = load_cinematic(ctx, |id| !is_train(id))?;
    let tm = load_templates(ctx, "models/cinematic_templates.json")?;
    let dir = ctx.dir("stems/cinematic")?;
    let stems: Vec<BTreeMap<String, Waveform>> = cine
        .par_iter()
        .map(|c| {
            let out = conditioned_separate(&c.clip.mixture, &c.clip.activity, &tm)?;
            out.write(&dir, &c.id)?;
            Ok(out.stems)
        })
        .collect::<Result<_>>()?;
    let mut rep = SdrReport::new(DEFAULT_CAP_DB);
    for (c, est) in cine.iter().zip(&stems) {
        score_stems(&mut rep, &c.id, &c.clip.stems, est)?;
    }
    rep.finalize();
    ctx.write_json("reports/cinematic_separation.json", &rep)?;
    Ok(())
}

// ---------------------------------------------------------------- knowledge

#[derive(Serialize)]
struct ProjectorReport {
    initial_loss: f64,
    final_loss: f64,
    iterations: usize,
}

pub fn cmd_project_knowledge(ctx: &RunContext) -> Result<Projector> {
    let k = &ctx.manifest.knowledge;
    let (vectors, targets) = canonical_training_set();
    let targets: Vec<Vec<bool>> = targets
        .into_iter()
        .map(|t| (0..k.k).map(|i| t.get(i).copied().unwrap_or(false)).collect())
        .collect();
    let cfg = ProjectorTraining {
        n_iter: k.n_iter,
        step: k.step,
        seed: ctx.manifest.seed,
    };
    let (proj, losses) = train_projector(&vectors, &targets, &cfg)?;
    ctx.write_json("models/projector.json", &proj)?;
    ctx.write("reports/projection.csv", projection_csv(&proj, &vectors).as_bytes())?;
    ctx.write_json(
        "reports/projector_training.json",
        &ProjectorReport {
            initial_loss: losses[0],
            final_loss: losses[losses.len() - 1],
            iterations: k.n_iter,
        },
    )?;
    Ok(proj)
}

// ---------------------------------------------------------------- evaluation

/// All four tables from the on-disk corpora. The music tables come from a
/// fresh in-memory run (HMMs trained on the train clips, evaluated on the
/// test clips); nothing from the staged commands is reused.
pub fn cmd_eval(ctx: &RunContext) -> Result<()> {
    let m = &ctx.manifest;
    let train = load_music(ctx, is_train)?;
    let test = load_music(ctx, |id| !is_train(id))?;
    let train_clips: Vec<LabeledClip> = train.into_iter().map(|c| c.clip).collect();
    let test_clips: Vec<LabeledClip> = test.into_iter().map(|c| c.clip).collect();
    let sc = separation_scenarios(&train_clips, &test_clips, &m.model, &m.separator, m.segment.min_len_frames, m.seed)?;
    let test_items = train_items(&test_clips)?;
    let al = evaluate_alignment(&sc.hmms, &test_items, m.model.loop_penalty)?;
    ctx.write_json("reports/table1.json", &al.boundaries)?;
    ctx.write("reports/table1.csv", al.boundaries.to_csv().as_bytes())?;
    ctx.write_json("reports/table2.json", &al.confusion)?;
    ctx.write("reports/table2.csv", al.confusion.to_csv().as_bytes())?;
    let rows3 = [
        ("oracle".to_string(), &sc.oracle),
        ("forced_alignment".to_string(), &sc.forced),
        ("shuffled".to_string(), &sc.shuffled),
        ("no_knowledge".to_string(), &sc.no_knowledge),
    ];
    let table3: BTreeMap<&str, &SdrReport> = rows3.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    ctx.write_json("reports/table3.json", &table3)?;
    ctx.write("reports/table3.csv", scenario_table_csv(&rows3).as_bytes())?;

    let ctrain: Vec<CinematicClip> = load_cinematic(ctx, is_train)?.into_iter().map(|c| c.clip).collect();
    let ctest: Vec<CinematicClip> = load_cinematic(ctx, |id| !is_train(id))?.into_iter().map(|c| c.clip).collect();
    let tm = cinematic_templates(&ctrain, &m.separator)?;
    let cs = conditioning_scores(&ctest, &tm)?;
    let rows4 = [("true_activity".to_string(), &cs.true_activity), ("all_on".to_string(), &cs.all_on)];
    let table4: BTreeMap<&str, &SdrReport> = rows4.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    ctx.write_json("reports/table4.json", &table4)?;
    ctx.write("reports/table4.csv", scenario_table_csv(&rows4).as_bytes())?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct ReproReport {
    pub seed: u64,
    pub criteria: Vec<CriterionResult>,
    /// (timbre distance, forced-alignment MAE in frames)
    pub timbre_sweep: Vec<(f64, f64)>,
}

impl ReproReport {
    pub fn all_passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }
}

/// Runs criteria 1-10 and the timbre sweep from the manifest alone and writes
/// `reports/acceptance.{json,csv,txt}`.
pub fn cmd_repro(ctx: &RunContext) -> Result<ReproReport> {
    let m = &ctx.manifest;
    let criteria = acceptance::run_all(m)?;
    let timbre_sweep = acceptance::timbre_sweep(m)?;
    let report = ReproReport {
        seed: m.seed,
        criteria,
        timbre_sweep,
    };
    ctx.write_json("reports/acceptance.json", &report)?;
    let mut csv = String::from("id,name,passed\n");
    let mut txt = String::new();
    for c in &report.criteria {
        csv.push_str(&format!("{},{},{}\n", c.id, c.name.replace(',', ";"), c.passed));
        txt.push_str(&c.line());
        txt.push('\n');
    }
    ctx.write("reports/acceptance.csv", csv.as_bytes())?;
    ctx.write("reports/acceptance.txt", txt.as_bytes())?;
    Ok(report)
}
