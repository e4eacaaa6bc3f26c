use std::collections::BTreeMap;

use proptest::prelude::*;
use scoreseg_oracle::{diag_gauss_logpdf, enumerate_sequences, log_sum};

use super::*;
use crate::rng::CounterRng;
use crate::score::Segment;

const DIM: usize = 2;

fn random_gmm(rng: &mut CounterRng, n_mix: usize) -> Gmm {
    let mut w: Vec<f64> = (0..n_mix).map(|_| rng.uniform_range(0.1, 1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    let means = (0..n_mix).map(|_| (0..DIM).map(|_| rng.uniform_range(-2.0, 2.0)).collect()).collect();
    let vars = (0..n_mix).map(|_| (0..DIM).map(|_| rng.uniform_range(0.3, 2.0)).collect()).collect();
    Gmm::new(w, means, vars).unwrap()
}

/// Every unit gets `states[u]` states with random emissions and self-loops.
fn toy_models(seed: u64, states: [usize; 4], n_mix: usize) -> ModelSet {
    let mut rng = CounterRng::new(seed);
    let models = Unit::ALL
        .iter()
        .zip(states)
        .map(|(&u, n)| {
            let hmm = UnitHmm {
                unit: u,
                self_loop: (0..n).map(|_| rng.uniform_range(0.1, 0.9)).collect(),
                states: (0..n).map(|_| random_gmm(&mut rng, n_mix)).collect(),
            };
            (u, hmm)
        })
        .collect();
    ModelSet::new(DIM, vec![0.01; DIM], models).unwrap()
}

fn random_features(seed: u64, n: usize) -> FeatureSequence {
    let mut rng = CounterRng::new(seed).split_str("features");
    let data = (0..n * DIM).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
    FeatureSequence::new(data, DIM, 10.0, 25.0)
}

fn emission(ms: &ModelSet, node: (Unit, usize), x: &[f64]) -> f64 {
    let g = &ms.model(node.0).states[node.1];
    let terms: Vec<f64> = (0..g.n_components())
        .map(|m| g.weights()[m].ln() + diag_gauss_logpdf(x, &g.means()[m], &g.variances()[m]))
        .collect();
    log_sum(&terms)
}

/// Brute-force score of a node path through the forced chain of `units`.
fn forced_path_score(ms: &ModelSet, units: &[Unit], f: &FeatureSequence, path: &[usize]) -> Option<f64> {
    let nodes: Vec<(Unit, usize)> = units
        .iter()
        .flat_map(|&u| (0..ms.model(u).n_states()).map(move |s| (u, s)))
        .collect();
    if path[0] != 0 || *path.last().unwrap() != nodes.len() - 1 {
        return None;
    }
    let a = |k: usize| ms.model(nodes[k].0).self_loop[nodes[k].1];
    let mut score = emission(ms, nodes[path[0]], f.frame(0));
    for t in 1..path.len() {
        let (p, q) = (path[t - 1], path[t]);
        score += if q == p {
            a(p).ln()
        } else if q == p + 1 {
            (1.0 - a(p)).ln()
        } else {
            return None;
        };
        score += emission(ms, nodes[q], f.frame(t));
    }
    Some(score + (1.0 - a(nodes.len() - 1)).ln())
}

#[test]
fn viterbi_and_forward_match_enumeration() {
    for seed in 0..60u64 {
        let mut rng = CounterRng::new(seed).split_str("shape");
        let n_units = 1 + rng.below(2);
        let mut states = [1usize; 4];
        for s in states.iter_mut().take(n_units) {
            *s = 1 + rng.below(4 / n_units);
        }
        let ms = toy_models(seed, states, 1 + rng.below(2));
        let units: Vec<Unit> = Unit::ALL[..n_units].to_vec();
        let total: usize = states[..n_units].iter().sum();
        let t_len = total + rng.below(7 - total);
        let f = random_features(seed, t_len);
        let e = enumerate_sequences(total, t_len, |p| forced_path_score(&ms, &units, &f, p));
        let (best, best_path) = e.best.unwrap();
        let a = viterbi_align(&ms, &f, &units).unwrap();
        assert!((a.log_likelihood - best).abs() < 1e-9, "seed {seed}");
        let ll = log_likelihood(&ms, &f, &units).unwrap();
        assert!((ll - e.log_total).abs() < 1e-9, "seed {seed}");
        assert!(ll >= a.log_likelihood - 1e-12);
        // Recover the winning node path and compare with the oracle's.
        let mut offsets = vec![0];
        for u in &units {
            offsets.push(offsets.last().unwrap() + ms.model(*u).n_states());
        }
        let labels = a.timeline.labels();
        let nodes: Vec<usize> = labels
            .iter()
            .zip(&a.states)
            .map(|(u, s)| offsets[units.iter().position(|x| x == u).unwrap()] + s)
            .collect();
        let score_of = |p: &[usize]| forced_path_score(&ms, &units, &f, p).unwrap();
        assert!((score_of(&nodes) - score_of(&best_path)).abs() < 1e-9);
    }
}

#[test]
fn recognition_matches_labelling_enumeration() {
    for seed in 0..20u64 {
        let ms = toy_models(100 + seed, [1; 4], 1);
        let penalty = [0.0, -1.5, 2.0][seed as usize % 3];
        let t_len = 1 + (seed as usize % 5);
        let f = random_features(seed, t_len);
        let a = |u: usize| ms.model(Unit::ALL[u]).self_loop[0];
        let e = enumerate_sequences(4, t_len, |labels| {
            let mut s = -(4f64).ln() + emission(&ms, (Unit::ALL[labels[0]], 0), f.frame(0));
            for t in 1..t_len {
                let (p, q) = (labels[t - 1], labels[t]);
                s += if p == q {
                    a(p).ln()
                } else {
                    (1.0 - a(p)).ln() - 3f64.ln() + penalty
                };
                s += emission(&ms, (Unit::ALL[q], 0), f.frame(t));
            }
            Some(s + (1.0 - a(labels[t_len - 1])).ln())
        });
        let (best, best_labels) = e.best.unwrap();
        let r = recognize(&ms, &f, penalty).unwrap();
        assert!((r.log_likelihood - best).abs() < 1e-9, "seed {seed}");
        let want: Vec<Unit> = best_labels.iter().map(|&i| Unit::ALL[i]).collect();
        assert_eq!(r.timeline.labels(), want, "seed {seed}");
        let fwd = forward_log_likelihood(&ms, &f, penalty).unwrap();
        assert!((fwd - e.log_total).abs() < 1e-9);
    }
}

#[test]
fn single_state_single_unit_spans_everything() {
    let ms = toy_models(1, [1; 4], 1);
    let f = random_features(1, 17);
    let a = viterbi_align(&ms, &f, &[Unit::Bass]).unwrap();
    assert_eq!(a.timeline.segments(), &[Segment { unit: Unit::Bass, start: 0, end: 17 }]);
    assert!(a.states.iter().all(|&s| s == 0));
}

#[test]
fn infeasible_duration_is_an_error() {
    let ms = toy_models(2, [3, 3, 3, 3], 1);
    let f = random_features(2, 5);
    assert!(matches!(
        viterbi_align(&ms, &f, &[Unit::Piano, Unit::Bass]),
        Err(ModelError::Infeasible { needed: 6, frames: 5 })
    ));
    assert!(matches!(
        viterbi_align(&ms, &f, &[Unit::Piano, Unit::Piano]),
        Err(ModelError::Sequence(_))
    ));
    assert!(matches!(recognize(&ms, &random_features(2, 0), 0.0), Err(ModelError::EmptyInput)));
}

#[test]
fn ties_prefer_lower_predecessor() {
    // Identical emissions and a = 0.5 everywhere: all paths through two
    // 1-state units tie. The lower predecessor (leaving silence) wins at
    // every step, so backtracking stays in silence as long as possible.
    let g = Gmm::single(vec![0.0; DIM], vec![1.0; DIM]).unwrap();
    let models = Unit::ALL
        .iter()
        .map(|&u| {
            (
                u,
                UnitHmm {
                    unit: u,
                    self_loop: vec![0.5],
                    states: vec![g.clone()],
                },
            )
        })
        .collect();
    let ms = ModelSet::new(DIM, vec![0.01; DIM], models).unwrap();
    let f = FeatureSequence::new(vec![0.0; 5 * DIM], DIM, 10.0, 25.0);
    let a = viterbi_align(&ms, &f, &[Unit::Silence, Unit::Piano]).unwrap();
    assert_eq!(a.timeline.boundaries(), vec![(4, Unit::Silence, Unit::Piano)]);
}

fn fixture_corpus(frames_per_unit: usize, value: impl Fn(Unit, usize) -> Vec<f64>) -> Vec<TrainItem> {
    let mut data = Vec::new();
    let mut segs = Vec::new();
    for (k, &u) in Unit::ALL.iter().enumerate() {
        for t in 0..frames_per_unit {
            data.extend(value(u, t));
        }
        segs.push(Segment {
            unit: u,
            start: k * frames_per_unit,
            end: (k + 1) * frames_per_unit,
        });
    }
    vec![TrainItem {
        features: FeatureSequence::new(data, DIM, 10.0, 25.0),
        timeline: UnitTimeline::new(segs, 10.0).unwrap(),
    }]
}

#[test]
fn flat_start_pools_half_segments() {
    let corpus = fixture_corpus(4, |u, t| vec![(u.index() * 10 + t) as f64, (t * t) as f64]);
    let cfg = InitConfig {
        n_states: 2,
        n_mix: 1,
        ..InitConfig::desk()
    };
    let ms = flat_start_init(&corpus, &cfg).unwrap();
    for u in Unit::ALL {
        let base = (u.index() * 10) as f64;
        let hmm = ms.model(u);
        assert_eq!(hmm.states[0].means()[0], vec![base + 0.5, 0.5]);
        assert_eq!(hmm.states[1].means()[0], vec![base + 2.5, 6.5]);
        assert_eq!(hmm.states[0].weights(), &[1.0]);
        // 1 - N / L = 1 - 2/4
        assert_eq!(hmm.self_loop, vec![0.5, 0.5]);
    }
}

#[test]
fn flat_start_floors_constant_features() {
    let corpus = fixture_corpus(6, |u, t| vec![u.index() as f64, if u == Unit::Silence { 0.0 } else { t as f64 }]);
    let ms = flat_start_init(&corpus, &InitConfig { n_states: 3, ..InitConfig::desk() }).unwrap();
    let floor = ms.var_floor().to_vec();
    for g in &ms.model(Unit::Silence).states {
        for v in g.variances() {
            assert_eq!(v, &floor);
        }
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn flat_start_requires_every_unit() {
    let mut corpus = fixture_corpus(4, |_, t| vec![t as f64, 1.0]);
    corpus[0].timeline = UnitTimeline::new(
        vec![Segment { unit: Unit::Piano, start: 0, end: 8 }, Segment { unit: Unit::Bass, start: 8, end: 16 }],
        10.0,
    )
    .unwrap();
    let err = flat_start_init(&corpus, &InitConfig { n_states: 2, ..InitConfig::desk() }).unwrap_err();
    assert!(matches!(err, ModelError::UnitAbsent(Unit::Silence)));
}

#[test]
fn one_state_mean_update_is_frame_mean() {
    let ms = toy_models(3, [1; 4], 1);
    let f = random_features(3, 12);
    let item = TrainItem {
        timeline: UnitTimeline::new(vec![Segment { unit: Unit::Piano, start: 0, end: 12 }], 10.0).unwrap(),
        features: f.clone(),
    };
    let cfg = TrainConfig {
        n_iter: 1,
        ..TrainConfig::default()
    };
    let (out, _) = reestimate(&ms, std::slice::from_ref(&item), &cfg).unwrap();
    let g = &out.model(Unit::Piano).states[0];
    for d in 0..DIM {
        let mean = f.frames().map(|x| x[d]).sum::<f64>() / 12.0;
        assert!((g.means()[0][d] - mean).abs() < 1e-12);
    }
    assert!((out.model(Unit::Piano).self_loop[0] - 11.0 / 12.0).abs() < 1e-12);
    // Units absent from the corpus are untouched.
    assert_eq!(out.model(Unit::Bass), ms.model(Unit::Bass));

    // A second pass starts from the fixed point and changes nothing.
    let (again, _) = reestimate(&out, &[item], &cfg).unwrap();
    let (g2, g1) = (&again.model(Unit::Piano).states[0], g);
    for d in 0..DIM {
        assert!((g2.means()[0][d] - g1.means()[0][d]).abs() < 1e-9);
        assert!((g2.variances()[0][d] - g1.variances()[0][d]).abs() < 1e-9);
    }
}

fn toy_corpus(seed: u64, n: usize) -> Vec<TrainItem> {
    (0..n)
        .map(|i| {
            let mut rng = CounterRng::new(seed).split(i as u64);
            let mut order = Unit::ALL.to_vec();
            rng.shuffle(&mut order);
            let mut data = Vec::new();
            let mut segs = Vec::new();
            let mut t = 0;
            for u in order {
                let len = 15 + rng.below(10);
                for _ in 0..len {
                    data.push(u.index() as f64 * 2.0 + rng.normal() * 0.7);
                    data.push(-(u.index() as f64) + rng.normal());
                }
                segs.push(Segment { unit: u, start: t, end: t + len });
                t += len;
            }
            TrainItem {
                features: FeatureSequence::new(data, DIM, 10.0, 25.0),
                timeline: UnitTimeline::new(segs, 10.0).unwrap(),
            }
        })
        .collect()
}

#[test]
fn baum_welch_is_monotone_and_keeps_invariants() {
    let corpus = toy_corpus(7, 6);
    let init = flat_start_init(&corpus, &InitConfig { n_states: 4, n_mix: 2, ..InitConfig::desk() }).unwrap();
    for seed in 0..3 {
        let start = init.perturbed(seed, 0.5);
        let cfg = TrainConfig { n_iter: 6, ..TrainConfig::default() };
        let (out, report) = reestimate(&start, &corpus, &cfg).unwrap();
        assert_eq!(report.log_likelihoods.len(), 7);
        for w in report.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-6, "{:?}", report.log_likelihoods);
        }
        for hmm in out.models() {
            for g in &hmm.states {
                assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for v in g.variances() {
                    assert!(v.iter().zip(out.var_floor()).all(|(a, b)| a >= b));
                }
            }
        }
    }
}

#[test]
fn viterbi_training_runs_and_alignment_preserves_sequence() {
    let corpus = toy_corpus(8, 4);
    let init = flat_start_init(&corpus, &InitConfig { n_states: 3, n_mix: 1, ..InitConfig::desk() }).unwrap();
    let cfg = TrainConfig {
        mode: ReestimationMode::Viterbi,
        n_iter: 3,
        ..TrainConfig::default()
    };
    let (ms, report) = reestimate(&init, &corpus, &cfg).unwrap();
    assert_eq!(report.log_likelihoods.len(), 4);
    for item in &corpus {
        let units = item.timeline.unit_sequence();
        let a = viterbi_align(&ms, &item.features, &units).unwrap();
        assert_eq!(a.timeline.unit_sequence(), units);
    }
}

#[test]
fn model_json_round_trip_is_exact() {
    let ms = toy_models(5, [2, 1, 3, 1], 2);
    let text = ms.to_json();
    assert!(text.contains("\"schema\": \"scoreseg.modelset\""));
    assert_eq!(ModelSet::from_json(&text).unwrap(), ms);
    let bumped = text.replace("\"version\": 1", "\"version\": 9");
    assert!(matches!(ModelSet::from_json(&bumped), Err(ModelError::Format(_))));
}

#[test]
fn modelset_requires_all_units() {
    let ms = toy_models(5, [1; 4], 1);
    let mut models: BTreeMap<Unit, UnitHmm> = ms.models().map(|m| (m.unit, m.clone())).collect();
    models.remove(&Unit::Mixture);
    assert!(matches!(ModelSet::new(DIM, vec![0.01; DIM], models), Err(ModelError::UnitMissing(Unit::Mixture))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn forward_dominates_viterbi_and_sequence_is_kept(seed in any::<u64>(), extra in 0usize..20) {
        let ms = toy_models(seed, [2, 3, 1, 2], 2);
        let units = [Unit::Mixture, Unit::Silence, Unit::Bass, Unit::Piano];
        let f = random_features(seed, 8 + extra);
        let a = viterbi_align(&ms, &f, &units).unwrap();
        let ll = log_likelihood(&ms, &f, &units).unwrap();
        prop_assert!(ll >= a.log_likelihood - 1e-9);
        prop_assert_eq!(a.timeline.unit_sequence(), units.to_vec());
        prop_assert_eq!(a.timeline.total_frames(), f.n_frames());
    }
}
