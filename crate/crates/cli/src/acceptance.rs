//! The acceptance criteria as functions over a manifest. Results carry no
//! timings so reports are byte-for-byte reproducible.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};

use anyhow::Result;
use rayon::prelude::*;
use serde::Serialize;

use scoreseg_core::acoustic_model::{
    flat_start_init, log_likelihood, reestimate, viterbi_align, Gmm, ModelSet, TrainConfig, UnitHmm,
};
use scoreseg_core::dsp::{FeatureSequence, Waveform};
use scoreseg_core::knowledge::{canonical_training_set, enumerate_activity_vectors, train_projector, ProjectorTraining};
use scoreseg_core::mixgen::{make_pseudo_mixture, AugmentationConfig, PoolEntry};
use scoreseg_core::rng::CounterRng;
use scoreseg_core::score::{
    default_instrument_map, parse_score_json, parse_smf, timeline_from_score, write_smf, ScoreError, Unit,
};
use scoreseg_core::separator::nmf::Factorization;
use scoreseg_core::separator::{learn_templates, separate_detailed, Knowledge, SeparatorConfig};
use scoreseg_core::synthsim::alignment_frames;
use scoreseg_oracle::{
    diag_gauss_logpdf, enumerate_sequences, ks_critical_value, ks_uniform_statistic, log_sum, perceptron_separator,
};

use crate::experiments::*;
use crate::manifest::RunManifest;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub summary: String,
    pub metrics: BTreeMap<String, f64>,
}

impl CriterionResult {
    fn new(id: u8, name: &str, passed: bool, summary: String, metrics: &[(&str, f64)]) -> Self {
        Self {
            id,
            name: name.into(),
            passed,
            summary,
            metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {} {}: {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.summary
        )
    }
}

// ---------------------------------------------------------------- 1

const TOY_DIM: usize = 2;

fn toy_gmm(rng: &mut CounterRng) -> Gmm {
    let n_mix = 1 + rng.below(2);
    let mut w: Vec<f64> = (0..n_mix).map(|_| rng.uniform_range(0.1, 1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    let means = (0..n_mix).map(|_| (0..TOY_DIM).map(|_| rng.uniform_range(-2.0, 2.0)).collect()).collect();
    let vars = (0..n_mix).map(|_| (0..TOY_DIM).map(|_| rng.uniform_range(0.3, 2.0)).collect()).collect();
    Gmm::new(w, means, vars).expect("valid toy mixture")
}

/// A toy problem: a forced chain of one or two units with at most four
/// states in total, and at most six frames.
struct Toy {
    ms: ModelSet,
    units: Vec<Unit>,
    nodes: Vec<(Unit, usize)>,
    f: FeatureSequence,
}

fn toy(seed: u64) -> Toy {
    let mut rng = CounterRng::new(seed).split_str("toy-hmm");
    let n_units = 1 + rng.below(2);
    let mut states = [1usize; 4];
    for s in states.iter_mut().take(n_units) {
        *s = 1 + rng.below(4 / n_units);
    }
    let models = Unit::ALL
        .iter()
        .zip(states)
        .map(|(&u, n)| {
            let hmm = UnitHmm {
                unit: u,
                self_loop: (0..n).map(|_| rng.uniform_range(0.1, 0.9)).collect(),
                states: (0..n).map(|_| toy_gmm(&mut rng)).collect(),
            };
            (u, hmm)
        })
        .collect();
    let ms = ModelSet::new(TOY_DIM, vec![0.01; TOY_DIM], models).expect("valid toy model set");
    let units: Vec<Unit> = Unit::ALL[..n_units].to_vec();
    let nodes: Vec<(Unit, usize)> = units
        .iter()
        .flat_map(|&u| (0..ms.model(u).n_states()).map(move |s| (u, s)))
        .collect();
    let t_len = nodes.len() + rng.below(7 - nodes.len());
    let data = (0..t_len * TOY_DIM).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
    Toy {
        ms,
        units,
        nodes,
        f: FeatureSequence::new(data, TOY_DIM, 10.0, 25.0),
    }
}

fn toy_path_score(toy: &Toy, path: &[usize]) -> Option<f64> {
    let n = toy.nodes.len();
    if path[0] != 0 || *path.last()? != n - 1 {
        return None;
    }
    let emit = |k: usize, t: usize| {
        let g = &toy.ms.model(toy.nodes[k].0).states[toy.nodes[k].1];
        let terms: Vec<f64> = (0..g.n_components())
            .map(|m| g.weights()[m].ln() + diag_gauss_logpdf(toy.f.frame(t), &g.means()[m], &g.variances()[m]))
            .collect();
        log_sum(&terms)
    };
    let a = |k: usize| toy.ms.model(toy.nodes[k].0).self_loop[toy.nodes[k].1];
    let mut s = emit(path[0], 0);
    for t in 1..path.len() {
        let (p, q) = (path[t - 1], path[t]);
        s += if q == p {
            a(p).ln()
        } else if q == p + 1 {
            (1.0 - a(p)).ln()
        } else {
            return None;
        };
        s += emit(q, t);
    }
    Some(s + (1.0 - a(n - 1)).ln())
}

pub fn criterion_1(m: &RunManifest) -> Result<CriterionResult> {
    let n = m.acceptance.toy_hmms;
    let mut max_vit = 0.0f64;
    let mut max_fwd = 0.0f64;
    for i in 0..n as u64 {
        let t = toy(derive_seed(m.seed, "criterion-1", i));
        let e = enumerate_sequences(t.nodes.len(), t.f.n_frames(), |p| toy_path_score(&t, p));
        let (best, _) = e.best.expect("toys are feasible");
        let vit = viterbi_align(&t.ms, &t.f, &t.units)?.log_likelihood;
        let fwd = log_likelihood(&t.ms, &t.f, &t.units)?;
        max_vit = max_vit.max((vit - best).abs());
        max_fwd = max_fwd.max((fwd - e.log_total).abs());
    }
    let passed = max_vit <= 1e-9 && max_fwd <= 1e-9;
    Ok(CriterionResult::new(
        1,
        "Viterbi/forward oracle equivalence",
        passed,
        format!("{n} toy HMMs; max |viterbi - path max| = {max_vit:.2e}, max |forward - path sum| = {max_fwd:.2e} (tol 1e-9)"),
        &[("toys", n as f64), ("max_viterbi_error", max_vit), ("max_forward_error", max_fwd)],
    ))
}

// ---------------------------------------------------------------- 2

pub fn criterion_2(m: &RunManifest) -> Result<CriterionResult> {
    let a = &m.acceptance;
    let clips = music_clips(m.seed, "criterion-2", a.em_clips, 16_000, m.synth.timbre_distance)?;
    let items = train_items(&clips)?;
    let base = flat_start_init(&items, &init_config(&m.model))?;
    let cfg = TrainConfig {
        n_iter: a.em_iters,
        ..TrainConfig::default()
    };
    let drops: Vec<f64> = (0..a.em_inits as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let start = if i == 0 { base.clone() } else { base.perturbed(derive_seed(m.seed, "em-init", i), 1.0) };
            let (_, rep) = reestimate(&start, &items, &cfg)?;
            Ok(rep.log_likelihoods.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max))
        })
        .collect::<Result<_>>()?;
    let worst = drops.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let passed = worst <= 1e-6;
    Ok(CriterionResult::new(
        2,
        "Baum-Welch monotonicity",
        passed,
        format!(
            "{} initializations x {} iterations on {} clips; largest per-iteration decrease {:.3e} (tol 1e-6)",
            a.em_inits, a.em_iters, a.em_clips, worst.max(0.0)
        ),
        &[("initializations", a.em_inits as f64), ("largest_decrease", worst)],
    ))
}

// ---------------------------------------------------------------- 3 and 4

pub fn criteria_3_4(m: &RunManifest) -> Result<(CriterionResult, CriterionResult)> {
    let n = m.acceptance.alignment_clips;
    let clips = music_clips(m.seed, "criterion-3", n, 16_000, m.synth.timbre_distance)?;
    let items = train_items(&clips)?;
    let (ms, _) = train_hmms(&items, &m.model)?;
    let ev = evaluate_alignment(&ms, &items, m.model.loop_penalty)?;
    let b = &ev.boundaries;
    let overall = b.overall_mae();
    let sil = b.silence_adjacent_mae().unwrap_or(0.0);
    let mix = b.mixture_adjacent_mae().unwrap_or(0.0);
    let c3 = CriterionResult::new(
        3,
        "Forced-alignment boundary MAE",
        overall <= 15.0 && sil <= mix,
        format!(
            "{n} clips, {} boundaries; MAE {overall:.2} frames (max 15); silence-adjacent {sil:.2} <= mixture-adjacent {mix:.2}",
            b.count()
        ),
        &[("boundaries", b.count() as f64), ("overall_mae", overall), ("silence_adjacent_mae", sil), ("mixture_adjacent_mae", mix)],
    );
    let c = &ev.confusion;
    let acc = c.accuracy();
    let pm = c.pair(Unit::Piano, Unit::Mixture);
    let mut other_max = 0;
    for i in 0..4 {
        for j in i + 1..4 {
            let (a, bb) = (Unit::from_index(i), Unit::from_index(j));
            if (a, bb) != (Unit::Piano, Unit::Mixture) {
                other_max = other_max.max(c.pair(a, bb));
            }
        }
    }
    let c4 = CriterionResult::new(
        4,
        "Unit-loop recognition accuracy",
        acc >= 0.90 && pm >= other_max,
        format!(
            "{} segments; accuracy {acc:.4} (min 0.90); piano<->mixture confusions {pm} >= other pairs' max {other_max}",
            c.total()
        ),
        &[("segments", c.total() as f64), ("accuracy", acc), ("piano_mixture_confusions", pm as f64), ("other_max_confusions", other_max as f64)],
    );
    Ok((c3, c4))
}

// ---------------------------------------------------------------- 5

pub fn criterion_5(m: &RunManifest) -> Result<CriterionResult> {
    let a = &m.acceptance;
    let sr = m.synth.sample_rate;
    let train = music_clips(m.seed, "criterion-5-train", a.separation_train_clips, sr, m.synth.timbre_distance)?;
    let test = music_clips(m.seed, "criterion-5-test", a.separation_test_clips, sr, m.synth.timbre_distance)?;
    let s = separation_scenarios(&train, &test, &m.model, &m.separator, m.segment.min_len_frames, m.seed)?;
    let mean = |r: &scoreseg_core::metrics::SdrReport| r.overall_mean().unwrap_or(f64::NEG_INFINITY);
    let (o, f, sh, none) = (mean(&s.oracle), mean(&s.forced), mean(&s.shuffled), mean(&s.no_knowledge));
    Ok(CriterionResult::new(
        5,
        "Knowledge ordering for separation",
        o >= f && f >= sh + 1.0,
        format!(
            "{} test clips; mean SDR oracle {o:.2} >= forced-alignment {f:.2} >= shuffled {sh:.2} + 1 dB (no knowledge: {none:.2})",
            test.len()
        ),
        &[("oracle_sdr", o), ("forced_alignment_sdr", f), ("shuffled_sdr", sh), ("no_knowledge_sdr", none)],
    ))
}

// ---------------------------------------------------------------- 6

pub fn criterion_6(m: &RunManifest) -> Result<CriterionResult> {
    let a = &m.acceptance;
    let (d, sr) = (m.synth.cinematic_duration_s, m.synth.sample_rate);
    let train = cinematic_clips(m.seed, "criterion-6-train", a.cinematic_train_clips, d, sr)?;
    let test = cinematic_clips(m.seed, "criterion-6-test", a.cinematic_test_clips, d, sr)?;
    let tm = cinematic_templates(&train, &m.separator)?;
    let s = conditioning_scores(&test, &tm)?;
    let mut parts = Vec::new();
    let mut metrics = Vec::new();
    let mut passed = true;
    for cat in scoreseg_core::knowledge::CATEGORIES {
        let t = s.true_activity.means.get(cat).copied().unwrap_or(f64::NEG_INFINITY);
        let o = s.all_on.means.get(cat).copied().unwrap_or(f64::INFINITY);
        passed &= t - o >= 1.0;
        parts.push(format!("{cat} {t:.2} vs {o:.2} ({:+.2})", t - o));
        metrics.push((cat, t - o));
    }
    Ok(CriterionResult::new(
        6,
        "Activity conditioning gain",
        passed,
        format!("{} clips; true activity vs all-on SDR, need +1 dB each: {}", test.len(), parts.join(", ")),
        &metrics,
    ))
}

// ---------------------------------------------------------------- 7

pub fn criterion_7(m: &RunManifest) -> Result<CriterionResult> {
    let a = &m.acceptance;
    // Masks and additivity on synthetic mixtures at the configured STFT.
    let sr = m.synth.sample_rate;
    let clips = music_clips(m.seed, "criterion-7", 3, sr, m.synth.timbre_distance)?;
    let pairs: Vec<(&Waveform, &scoreseg_core::score::UnitTimeline)> = clips.iter().map(|c| (&c.mixture, &c.timeline)).collect();
    let cfg = SeparatorConfig {
        learn_iter: 20,
        max_train_frames: 300,
        ..m.separator.clone()
    };
    let tm = learn_templates(&solo_material(&pairs, 100), &cfg)?;
    let mut max_mask_dev = 0.0f64;
    let mut max_rel_err = 0.0f64;
    for c in &clips {
        for k in [Knowledge::None, Knowledge::Timeline(&c.timeline)] {
            let (stems, masks) = separate_detailed(&c.mixture, k, &tm)?;
            for t in 0..masks.n_frames {
                if masks.active[t] == 0 {
                    continue;
                }
                for f in 0..masks.n_bins {
                    let s: f64 = masks.masks.iter().map(|mk| mk[t * masks.n_bins + f]).sum();
                    max_mask_dev = max_mask_dev.max((s - 1.0).abs());
                }
            }
            let sum = stems.sum();
            let err: f64 = sum.channel(0).iter().zip(c.mixture.channel(0)).map(|(x, y)| (x - y).powi(2)).sum();
            max_rel_err = max_rel_err.max((err / c.mixture.energy()).sqrt());
        }
    }
    // Objective monotonicity on random nonnegative problems, both phases.
    let mut worst_rise = f64::NEG_INFINITY;
    for p in 0..a.nmf_problems as u64 {
        let mut rng = CounterRng::new(derive_seed(m.seed, "criterion-7-nmf", p));
        let (t, f, k) = (10 + rng.below(30), 8 + rng.below(40), 1 + rng.below(6));
        let v: Vec<f64> = (0..t * f).map(|_| if rng.bernoulli(0.1) { 0.0 } else { rng.uniform() * 5.0 }).collect();
        let mut fz = Factorization::seeded(&v, f, k, p);
        let mut trace = fz.fit(&v, a.nmf_iters, true, true);
        trace.extend(fz.fit(&v, a.nmf_iters, false, true));
        for w in trace.windows(2) {
            worst_rise = worst_rise.max((w[1] - w[0]) / w[0].abs().max(1.0));
        }
    }
    let passed = max_mask_dev <= 1e-9 && max_rel_err <= 1e-6 && worst_rise <= 1e-8;
    Ok(CriterionResult::new(
        7,
        "Mask partition, stem additivity, NMF monotonicity",
        passed,
        format!(
            "max |sum of masks - 1| {max_mask_dev:.2e} (tol 1e-9); max stem-sum relative error {max_rel_err:.2e} (tol 1e-6); \
             {} NMF problems x {} iterations, largest relative objective rise {:.2e} (tol 1e-8)",
            a.nmf_problems, a.nmf_iters, worst_rise.max(0.0)
        ),
        &[("max_mask_deviation", max_mask_dev), ("max_stem_relative_error", max_rel_err), ("max_objective_rise", worst_rise)],
    ))
}

// ---------------------------------------------------------------- 8

pub fn criterion_8(m: &RunManifest) -> Result<CriterionResult> {
    let n = m.acceptance.mixgen_draws;
    let sr = 1000;
    let mut rng = CounterRng::new(derive_seed(m.seed, "criterion-8", 0));
    let mut pool = |prefix: &str, count: usize| -> Vec<PoolEntry> {
        (0..count)
            .map(|i| {
                let len = sr as usize * (3 + rng.below(3));
                let chans = (0..2).map(|_| (0..len).map(|_| rng.uniform_range(-0.5, 0.5)).collect()).collect();
                PoolEntry {
                    id: format!("{prefix}{i}"),
                    audio: Waveform::new(chans, sr).expect("equal channels"),
                }
            })
            .collect()
    };
    let target = pool("t", 5);
    let perturb = pool("p", 7);
    let cfg = AugmentationConfig {
        seed: m.mixgen.augmentation.seed,
        ..AugmentationConfig::default()
    };
    let mut drops = [0u64; 2];
    let mut gains = [Vec::new(), Vec::new()];
    let mut additive = true;
    for i in 0..n {
        let pm = make_pseudo_mixture(&target, &perturb, &cfg, i)?;
        for (j, d) in [&pm.provenance.target, &pm.provenance.perturbation].into_iter().enumerate() {
            drops[j] += d.dropped as u64;
            gains[j].push(d.gain_db);
        }
        for c in 0..2 {
            let (mx, t, p) = (pm.mixture.channel(c), pm.target_clean.channel(c), pm.perturbation_clean.channel(c));
            additive &= mx.iter().zip(t).zip(p).all(|((a, b), d)| *a == b + d);
        }
    }
    let rates = [drops[0] as f64 / n as f64, drops[1] as f64 / n as f64];
    let crit = ks_critical_value(n as usize, 0.01);
    let ks = [ks_uniform_statistic(&gains[0], -10.0, 10.0), ks_uniform_statistic(&gains[1], -10.0, 10.0)];
    let passed = rates.iter().all(|r| (r - 0.1).abs() <= 0.01) && ks.iter().all(|d| *d <= crit) && additive;
    Ok(CriterionResult::new(
        8,
        "Pseudo-mixture statistics",
        passed,
        format!(
            "{n} draws; drop rates {:.4}/{:.4} (0.1 +- 0.01); gain KS D {:.4}/{:.4} <= {crit:.4} (alpha 0.01); exact additivity {}",
            rates[0], rates[1], ks[0], ks[1], if additive { "on every draw" } else { "VIOLATED" }
        ),
        &[("target_drop_rate", rates[0]), ("perturbation_drop_rate", rates[1]), ("target_ks", ks[0]), ("perturbation_ks", ks[1]), ("ks_critical", crit)],
    ))
}

// ---------------------------------------------------------------- 9

pub fn criterion_9(m: &RunManifest) -> Result<CriterionResult> {
    let vectors = enumerate_activity_vectors();
    let mut distinct = vectors.clone();
    distinct.sort_by_key(|v| v.leaf_code());
    distinct.dedup();
    let consistent = vectors
        .iter()
        .all(|v| v.bits()[0] == (v.bits()[1] | v.bits()[2]) && v.bits()[4] == (v.bits()[5] | v.bits()[6]));
    let (vs, targets) = canonical_training_set();
    let cfg = ProjectorTraining {
        n_iter: m.knowledge.n_iter,
        step: m.knowledge.step,
        seed: m.seed,
    };
    let (proj, losses) = train_projector(&vs, &targets, &cfg)?;
    let points: Vec<Vec<f64>> = vs.iter().map(|v| proj.project(v)).collect();
    let mut separable = 0;
    for c in 0..3 {
        let labels: Vec<bool> = targets.iter().map(|t| t[c]).collect();
        if perceptron_separator(&points, &labels, 10_000).is_some() {
            separable += 1;
        }
    }
    let passed = vectors.len() == 32 && distinct.len() == 32 && consistent && separable == 3;
    Ok(CriterionResult::new(
        9,
        "Projector separability and activity enumeration",
        passed,
        format!(
            "{} vectors, {} distinct, hierarchy {}; {separable}/3 dichotomies linearly separable after training (loss {:.4} -> {:.4})",
            vectors.len(),
            distinct.len(),
            if consistent { "consistent" } else { "VIOLATED" },
            losses[0],
            losses[losses.len() - 1]
        ),
        &[("vectors", vectors.len() as f64), ("distinct", distinct.len() as f64), ("separable_dichotomies", separable as f64)],
    ))
}

// ---------------------------------------------------------------- 10

/// Format-1 SMF: conductor at 480000 µs/quarter, a "piano" track using running
/// status and a velocity-0 note-off, and a "bass" track.
pub fn crafted_smf() -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd\0\0\0\x06\0\x01\0\x03\x01\xE0");
    let conductor: &[u8] = &[0x00, 0xFF, 0x51, 0x03, 0x07, 0x53, 0x00, 0x00, 0xFF, 0x2F, 0x00];
    let piano: &[u8] = &[
        0x00, 0xFF, 0x03, 0x05, b'p', b'i', b'a', b'n', b'o', 0x00, 0x90, 60, 90, 0x84, 0x58, 60, 0, 0x00, 0xFF, 0x2F, 0x00,
    ];
    let bass: &[u8] = &[
        0x00, 0xFF, 0x03, 0x04, b'b', b'a', b's', b's', 0x83, 0x10, 0x91, 28, 70, 0x84, 0x58, 0x81, 28, 0, 0x00, 0xFF, 0x2F,
        0x00,
    ];
    for t in [conductor, piano, bass] {
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(t.len() as u32).to_be_bytes());
        out.extend_from_slice(t);
    }
    out
}

pub const CRAFTED_JSON: &str =
    r#"{"tpq":480,"tempo":[[0,480000]],"tracks":{"piano":[[0,600,60,90]],"bass":[[400,1000,28,70]]}}"#;

fn positioned(e: &ScoreError) -> bool {
    matches!(
        e,
        ScoreError::Smf { .. } | ScoreError::UnsupportedSmf { .. } | ScoreError::Schema { .. }
    )
}

pub fn criterion_10(m: &RunManifest) -> Result<CriterionResult> {
    let map = default_instrument_map();
    let smf = parse_smf(&crafted_smf())?;
    let fixture_ok = smf.ticks_per_quarter == 480
        && smf.track("piano").is_some_and(|t| t.notes.len() == 1 && t.notes[0].onset_ticks == 0 && t.notes[0].offset_ticks == 600)
        && smf.track("bass").is_some_and(|t| t.notes.len() == 1 && t.notes[0].onset_ticks == 400 && t.notes[0].offset_ticks == 1000);
    let json = parse_score_json(CRAFTED_JSON)?;
    let cross_ok = smf.canonical() == json.canonical()
        && timeline_from_score(&smf, &map, 10.0, 100)? == timeline_from_score(&json, &map, 10.0, 100)?;

    // Synthetic scores survive a write/parse round trip with identical timelines.
    let clips = music_clips(m.seed, "criterion-10", 10, 16_000, 1.0)?;
    let mut roundtrip_ok = true;
    for c in &clips {
        let parsed = parse_smf(&write_smf(&c.score))?;
        let frames = alignment_frames(c.mixture.n_samples(), c.mixture.sample_rate());
        roundtrip_ok &= timeline_from_score(&parsed, &map, 10.0, frames)? == c.timeline;
    }

    // Malformed inputs: every truncation and a sweep of single-byte corruptions.
    let bytes = crafted_smf();
    let mut cases: Vec<Vec<u8>> = (0..bytes.len()).map(|n| bytes[..n].to_vec()).collect();
    let mut rng = CounterRng::new(derive_seed(m.seed, "criterion-10", 0));
    for _ in 0..500 {
        let mut b = bytes.clone();
        let i = rng.below(b.len());
        b[i] = rng.below(256) as u8;
        cases.push(b);
    }
    let mut panics = 0;
    let mut unpositioned = 0;
    let mut rejected = 0;
    for case in &cases {
        match catch_unwind(AssertUnwindSafe(|| parse_smf(case))) {
            Err(_) => panics += 1,
            Ok(Err(e)) => {
                rejected += 1;
                unpositioned += usize::from(!positioned(&e));
            }
            Ok(Ok(_)) => {}
        }
    }
    let bad_json = [r#"{"tpq":480,"tracks":{"piano":[[0,600,60]]}}"#, r#"{"tpq":480"#, "[1,2]", ""];
    for j in bad_json {
        match catch_unwind(|| parse_score_json(j)) {
            Err(_) => panics += 1,
            Ok(Err(e)) => {
                rejected += 1;
                unpositioned += usize::from(!positioned(&e));
            }
            Ok(Ok(_)) => unpositioned += 1,
        }
    }
    let passed = fixture_ok && cross_ok && roundtrip_ok && panics == 0 && unpositioned == 0;
    Ok(CriterionResult::new(
        10,
        "Score parsers",
        passed,
        format!(
            "crafted SMF {}, JSON/SMF timelines {}, {} synthetic round trips {}; {} malformed inputs, {rejected} rejected, {panics} panics, {unpositioned} errors without position",
            if fixture_ok { "ok" } else { "WRONG" },
            if cross_ok { "equal" } else { "DIFFER" },
            clips.len(),
            if roundtrip_ok { "exact" } else { "DIFFER" },
            cases.len() + bad_json.len(),
        ),
        &[("malformed_inputs", (cases.len() + bad_json.len()) as f64), ("panics", panics as f64), ("unpositioned_errors", unpositioned as f64)],
    ))
}

/// Criteria 1-10 in order.
pub fn run_all(m: &RunManifest) -> Result<Vec<CriterionResult>> {
    let (c3, c4) = criteria_3_4(m)?;
    Ok(vec![
        criterion_1(m)?,
        criterion_2(m)?,
        c3,
        c4,
        criterion_5(m)?,
        criterion_6(m)?,
        criterion_7(m)?,
        criterion_8(m)?,
        criterion_9(m)?,
        criterion_10(m)?,
    ])
}

/// Forced-alignment MAE at each timbre distance of the sweep.
pub fn timbre_sweep(m: &RunManifest) -> Result<Vec<(f64, f64)>> {
    m.acceptance
        .timbre_sweep
        .iter()
        .map(|&d| {
            let clips = music_clips(m.seed, "timbre-sweep", m.acceptance.timbre_sweep_clips, 16_000, d)?;
            let items = train_items(&clips)?;
            let (ms, _) = train_hmms(&items, &m.model)?;
            Ok((d, evaluate_alignment(&ms, &items, m.model.loop_penalty)?.boundaries.overall_mae()))
        })
        .collect()
}
