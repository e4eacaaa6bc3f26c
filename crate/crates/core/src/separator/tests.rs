use super::*;
use crate::dsp::WindowKind;
use crate::metrics::sdr;
use crate::rng::CounterRng;
use crate::score::Segment;

const SR: u32 = 8000;

fn cfg() -> SeparatorConfig {
    SeparatorConfig {
        n_bases: 4,
        learn_iter: 60,
        fit_iter: 40,
        max_train_frames: 400,
        stft: StftConfig::new(512, 128, WindowKind::Hamming).unwrap(),
        seed: 1,
    }
}

fn tone(f0: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = CounterRng::new(seed);
    let amps = [1.0, 0.5, 0.3, 0.2];
    let ph: Vec<f64> = (0..4).map(|_| rng.uniform() * 6.28).collect();
    (0..n)
        .map(|i| {
            let t = i as f64 / SR as f64;
            let env = 0.6 + 0.4 * (2.0 * t).sin().abs();
            0.2 * env * amps.iter().enumerate().map(|(h, a)| a * (6.283185307 * f0 * (h + 1) as f64 * t + ph[h]).sin()).sum::<f64>()
        })
        .collect()
}

fn mono(x: Vec<f64>) -> Waveform {
    Waveform::mono(x, SR).unwrap()
}

fn two_source_model() -> TemplateModel {
    let mut solo = BTreeMap::new();
    solo.insert("piano".to_string(), vec![mono(tone(440.0, 8000, 1)), mono(tone(523.0, 8000, 2))]);
    solo.insert("bass".to_string(), vec![mono(tone(82.0, 8000, 3)), mono(tone(110.0, 8000, 4))]);
    learn_templates(&solo, &cfg()).unwrap()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

#[test]
fn templates_are_normalized_deterministic_and_serializable() {
    let a = two_source_model();
    let b = two_source_model();
    assert_eq!(a, b);
    for name in ["bass", "piano"] {
        for basis in a.bases(name).unwrap() {
            assert!(basis.iter().all(|x| *x >= 0.0));
            assert!((basis.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    let back = TemplateModel::from_json(&a.to_json()).unwrap();
    assert_eq!(back, a);
}

#[test]
fn missing_material_names_source() {
    let mut solo = BTreeMap::new();
    solo.insert("piano".to_string(), vec![mono(tone(440.0, 4000, 1))]);
    solo.insert("bass".to_string(), vec![mono(vec![0.0; 4000])]);
    let e = learn_templates(&solo, &cfg()).unwrap_err();
    assert!(matches!(&e, SeparatorError::NoMaterial(s) if s == "bass"), "{e}");
}

#[test]
fn solo_frames_route_whole_mixture() {
    let tm = two_source_model();
    let x = tone(440.0, 6000, 9);
    let tl = UnitTimeline::new(vec![Segment::from((Unit::Piano, 0, 75))], 10.0).unwrap();
    let out = separate(&mono(x.clone()), Some(&tl), &tm).unwrap();
    for (a, b) in out.stems["piano"].channel(0).iter().zip(&x) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!(out.stems["bass"].channel(0).iter().all(|v| v.abs() < 1e-12));
    assert_eq!(out.gating.multi_source_frames, 0);
}

#[test]
fn masks_partition_and_stems_add_up() {
    let tm = two_source_model();
    let p = tone(494.0, 12000, 5);
    let b = tone(98.0, 12000, 6);
    let mix = mono(add(&p, &b));
    let (stems, masks) = separate_detailed(&mix, Knowledge::None, &tm).unwrap();
    for t in 0..masks.n_frames {
        for f in 0..masks.n_bins {
            let s: f64 = masks.masks.iter().map(|m| m[t * masks.n_bins + f]).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
    let sum = stems.sum();
    let err: f64 = sum.channel(0).iter().zip(mix.channel(0)).map(|(a, b)| (a - b).powi(2)).sum();
    assert!((err / mix.energy()).sqrt() < 1e-6);
    // templates should separate two well-apart tones reasonably
    let sp = sdr(&mono(p), &stems.stems["piano"], 60.0).unwrap().db().unwrap();
    let sb = sdr(&mono(b), &stems.stems["bass"], 60.0).unwrap().db().unwrap();
    assert!(sp > 5.0 && sb > 5.0, "{sp} {sb}");
}

#[test]
fn unknown_source_is_rejected() {
    let tm = two_source_model();
    let act = vec![ActivityVector::all_on(); 10];
    let e = conditioned_separate(&mono(vec![0.1; 800]), &act, &tm).unwrap_err();
    assert!(matches!(e, SeparatorError::UnknownSource(_)));
    let e = separate(&Waveform::mono(vec![0.0; 10], 16000).unwrap(), None, &tm).unwrap_err();
    assert!(matches!(e, SeparatorError::SampleRate { .. }));
}

fn three_source_model() -> TemplateModel {
    let mut solo = BTreeMap::new();
    solo.insert("speech".to_string(), vec![mono(tone(220.0, 6000, 1))]);
    solo.insert("music".to_string(), vec![mono(tone(660.0, 6000, 2))]);
    let mut rng = CounterRng::new(3);
    solo.insert("sfx".to_string(), vec![mono((0..6000).map(|_| 0.05 * rng.normal()).collect())]);
    learn_templates(&solo, &cfg()).unwrap()
}

#[test]
fn all_on_activity_equals_no_knowledge() {
    let tm = three_source_model();
    let x = add(&tone(220.0, 4000, 7), &tone(660.0, 4000, 8));
    let act = vec![ActivityVector::all_on(); 50];
    let a = conditioned_separate(&mono(x.clone()), &act, &tm).unwrap();
    let b = separate(&mono(x), None, &tm).unwrap();
    assert_eq!(a.stems, b.stems);
}

#[test]
fn music_only_frames_silence_other_stems() {
    let tm = three_source_model();
    let n = 8000;
    let mut x = tone(660.0, n, 8);
    let s = tone(220.0, n / 2, 9);
    for (a, b) in x.iter_mut().zip(&s) {
        *a += b;
    }
    // speech + music in the first half second, music alone afterwards
    let both = ActivityVector::from_leaves(true, false, true, false, false);
    let music = ActivityVector::from_leaves(false, false, true, false, false);
    let act: Vec<ActivityVector> = (0..100).map(|i| if i < 50 { both } else { music }).collect();
    let out = conditioned_separate(&mono(x.clone()), &act, &tm).unwrap();
    // frames whose window lies entirely after 0.5 s are music-only
    let tail = 4000 + 512;
    assert!(out.stems["speech"].channel(0)[tail..].iter().all(|v| v.abs() < 1e-12));
    assert!(out.stems["sfx"].channel(0).iter().all(|v| v.abs() < 1e-12));
    for (a, b) in out.stems["music"].channel(0)[tail..].iter().zip(&x[tail..]) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn silence_gate_routes_nothing() {
    let tm = two_source_model();
    let tl = UnitTimeline::new(vec![Segment::from((Unit::Silence, 0, 50))], 10.0).unwrap();
    let out = separate(&mono(tone(440.0, 4000, 1)), Some(&tl), &tm).unwrap();
    assert!(out.stems.values().all(|w| w.is_silent()));
    assert_eq!(out.gating.silent_frames, out.gating.frames);
}
