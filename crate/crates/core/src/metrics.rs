//! SDR and SI-SDR, per clip and averaged over a corpus.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::Waveform;

pub const DEFAULT_CAP_DB: f64 = 60.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: reference {reference}, estimate {estimate}")]
    LengthMismatch { reference: usize, estimate: usize },
    #[error("channel mismatch: reference {reference}, estimate {estimate}")]
    ChannelMismatch { reference: usize, estimate: usize },
}

/// A capped dB figure, or a flag that the reference was all zeros.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Score {
    Db(f64),
    SilentReference,
}

impl Score {
    pub fn db(self) -> Option<f64> {
        match self {
            Score::Db(v) => Some(v),
            Score::SilentReference => None,
        }
    }
}

fn flatten<'a>(reference: &'a Waveform, estimate: &'a Waveform) -> Result<(Vec<&'a [f64]>, Vec<&'a [f64]>), MetricError> {
    if reference.n_channels() != estimate.n_channels() {
        return Err(MetricError::ChannelMismatch {
            reference: reference.n_channels(),
            estimate: estimate.n_channels(),
        });
    }
    if reference.n_samples() != estimate.n_samples() {
        return Err(MetricError::LengthMismatch {
            reference: reference.n_samples(),
            estimate: estimate.n_samples(),
        });
    }
    Ok((
        reference.channels().iter().map(Vec::as_slice).collect(),
        estimate.channels().iter().map(Vec::as_slice).collect(),
    ))
}

fn ratio_db(signal: f64, noise: f64, cap_db: f64) -> f64 {
    if noise <= 0.0 {
        return cap_db;
    }
    if signal <= 0.0 {
        return -cap_db;
    }
    (10.0 * (signal / noise).log10()).clamp(-cap_db, cap_db)
}

/// `10 log10(Σ s² / Σ (s − ŝ)²)` over all channels, clamped to ±`cap_db`.
pub fn sdr_slices(reference: &[f64], estimate: &[f64], cap_db: f64) -> Result<Score, MetricError> {
    if reference.len() != estimate.len() {
        return Err(MetricError::LengthMismatch {
            reference: reference.len(),
            estimate: estimate.len(),
        });
    }
    let signal: f64 = reference.iter().map(|s| s * s).sum();
    if signal == 0.0 {
        return Ok(Score::SilentReference);
    }
    let noise: f64 = reference.iter().zip(estimate).map(|(s, e)| (s - e) * (s - e)).sum();
    Ok(Score::Db(ratio_db(signal, noise, cap_db)))
}

pub fn sdr(reference: &Waveform, estimate: &Waveform, cap_db: f64) -> Result<Score, MetricError> {
    let (r, e) = flatten(reference, estimate)?;
    let mut signal = 0.0;
    let mut noise = 0.0;
    for (rc, ec) in r.iter().zip(&e) {
        for (s, x) in rc.iter().zip(ec.iter()) {
            signal += s * s;
            noise += (s - x) * (s - x);
        }
    }
    if signal == 0.0 {
        return Ok(Score::SilentReference);
    }
    Ok(Score::Db(ratio_db(signal, noise, cap_db)))
}

/// Scale-invariant SDR: the estimate is projected onto the reference first.
pub fn si_sdr(reference: &Waveform, estimate: &Waveform, cap_db: f64) -> Result<Score, MetricError> {
    let (r, e) = flatten(reference, estimate)?;
    let mut ss = 0.0;
    let mut se = 0.0;
    for (rc, ec) in r.iter().zip(&e) {
        for (s, x) in rc.iter().zip(ec.iter()) {
            ss += s * s;
            se += s * x;
        }
    }
    if ss == 0.0 {
        return Ok(Score::SilentReference);
    }
    let alpha = se / ss;
    let mut target = 0.0;
    let mut noise = 0.0;
    for (rc, ec) in r.iter().zip(&e) {
        for (s, x) in rc.iter().zip(ec.iter()) {
            let t = alpha * s;
            target += t * t;
            noise += (x - t) * (x - t);
        }
    }
    Ok(Score::Db(ratio_db(target, noise, cap_db)))
}

/// Per-clip, per-source scores and their means (silent references excluded).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SdrReport {
    pub cap_db: f64,
    /// clip id -> source -> score
    pub clips: BTreeMap<String, BTreeMap<String, Score>>,
    pub means: BTreeMap<String, f64>,
    /// Per source, clips whose reference was silent.
    pub excluded: BTreeMap<String, Vec<String>>,
}

impl SdrReport {
    pub fn new(cap_db: f64) -> Self {
        Self {
            cap_db,
            ..Self::default()
        }
    }

    pub fn insert(&mut self, clip: &str, source: &str, score: Score) {
        self.clips
            .entry(clip.to_string())
            .or_default()
            .insert(source.to_string(), score);
    }

    /// Recomputes `means` and `excluded` from `clips`.
    pub fn finalize(&mut self) {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        self.excluded.clear();
        for (clip, sources) in &self.clips {
            for (source, score) in sources {
                match score.db() {
                    Some(v) => {
                        let e = sums.entry(source.clone()).or_default();
                        e.0 += v;
                        e.1 += 1;
                    }
                    None => {
                        log::info!("{clip}/{source}: silent reference, excluded from mean");
                        self.excluded.entry(source.clone()).or_default().push(clip.clone());
                    }
                }
            }
        }
        self.means = sums
            .into_iter()
            .filter(|(_, (_, n))| *n > 0)
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect();
    }

    /// Mean over all sources' means.
    pub fn overall_mean(&self) -> Option<f64> {
        if self.means.is_empty() {
            None
        } else {
            Some(self.means.values().sum::<f64>() / self.means.len() as f64)
        }
    }
}

/// Rows are scenarios, columns the union of sources; empty cells for missing means.
pub fn scenario_table_csv(rows: &[(String, &SdrReport)]) -> String {
    let mut sources: Vec<&String> = rows.iter().flat_map(|(_, r)| r.means.keys()).collect();
    sources.sort();
    sources.dedup();
    let mut out = String::from("scenario");
    for s in &sources {
        let _ = write!(out, ",{s}");
    }
    out.push('\n');
    for (name, report) in rows {
        out.push_str(name);
        for s in &sources {
            match report.means.get(*s) {
                Some(v) => {
                    let _ = write!(out, ",{v:.4}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mono(v: Vec<f64>) -> Waveform {
        Waveform::mono(v, 16000).unwrap()
    }

    #[test]
    fn identical_is_capped() {
        let s = mono(vec![0.1, -0.3, 0.2, 0.5]);
        assert_eq!(sdr(&s, &s, 60.0).unwrap(), Score::Db(60.0));
    }

    #[test]
    fn half_scale_is_six_db() {
        let s = mono(vec![0.1, -0.3, 0.2, 0.5]);
        let e = mono(s.channel(0).iter().map(|x| 0.5 * x).collect());
        let v = sdr(&s, &e, 60.0).unwrap().db().unwrap();
        assert!((v - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert!((v - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn zero_estimate_is_zero_db() {
        let s = mono(vec![0.1, -0.3, 0.2, 0.5]);
        let e = mono(vec![0.0; 4]);
        assert_eq!(sdr(&s, &e, 60.0).unwrap(), Score::Db(0.0));
    }

    #[test]
    fn silent_reference_flagged() {
        let s = mono(vec![0.0; 4]);
        assert_eq!(sdr(&s, &s, 60.0).unwrap(), Score::SilentReference);
        assert_eq!(si_sdr(&s, &s, 60.0).unwrap(), Score::SilentReference);
    }

    #[test]
    fn length_mismatch_is_error() {
        assert!(sdr(&mono(vec![1.0; 4]), &mono(vec![1.0; 5]), 60.0).is_err());
    }

    #[test]
    fn si_sdr_scale_and_orthogonal() {
        let s = mono(vec![1.0, 0.0, -1.0, 0.0]);
        let e = mono(vec![3.0, 0.0, -3.0, 0.0]);
        assert_eq!(si_sdr(&s, &e, 60.0).unwrap(), Score::Db(60.0));
        let o = mono(vec![0.0, 1.0, 0.0, -1.0]);
        assert_eq!(si_sdr(&s, &o, 60.0).unwrap(), Score::Db(-60.0));
    }

    #[test]
    fn si_sdr_can_fall_below_sdr() {
        // Heavily attenuated estimate plus a small orthogonal error.
        let s = mono(vec![1.0, 0.0, 1.0, 0.0]);
        let e = mono(vec![0.1, 0.3, 0.1, -0.3]);
        let a = sdr(&s, &e, 60.0).unwrap().db().unwrap();
        let b = si_sdr(&s, &e, 60.0).unwrap().db().unwrap();
        assert!(a > 0.0 && b < -9.0, "sdr {a} si_sdr {b}");
    }

    #[test]
    fn report_excludes_silent() {
        let mut r = SdrReport::new(60.0);
        r.insert("a", "piano", Score::Db(10.0));
        r.insert("b", "piano", Score::Db(20.0));
        r.insert("b", "bass", Score::SilentReference);
        r.insert("a", "bass", Score::Db(4.0));
        r.finalize();
        assert_eq!(r.means["piano"], 15.0);
        assert_eq!(r.means["bass"], 4.0);
        assert_eq!(r.excluded["bass"], vec!["b".to_string()]);
        let csv = scenario_table_csv(&[("oracle".into(), &r)]);
        assert_eq!(csv, "scenario,bass,piano\noracle,4.0000,15.0000\n");
    }

    proptest! {
        #[test]
        fn si_sdr_matches_best_rescaled_sdr(
            s in proptest::collection::vec(-1.0f64..1.0, 8..64),
            noise in proptest::collection::vec(-1.0f64..1.0, 64),
            scale in 0.05f64..4.0,
        ) {
            prop_assume!(s.iter().map(|x| x * x).sum::<f64>() > 1e-3);
            let e: Vec<f64> = s.iter().zip(&noise).map(|(a, n)| scale * a + 0.3 * n).collect();
            let beta = s.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / e.iter().map(|x| x * x).sum::<f64>();
            prop_assume!(beta > 0.0);
            let rescaled: Vec<f64> = e.iter().map(|x| beta * x).collect();
            let best = sdr_slices(&s, &rescaled, 200.0).unwrap().db().unwrap();
            let plain = sdr_slices(&s, &e, 200.0).unwrap().db().unwrap();
            let si = si_sdr(&mono(s), &mono(e), 200.0).unwrap().db().unwrap();
            // 1/sin^2 vs cos^2/sin^2 of the angle between reference and estimate.
            prop_assert!((si - 10.0 * (10f64.powf(best / 10.0) - 1.0).log10()).abs() < 1e-6);
            prop_assert!(best >= plain - 1e-9);
        }

        #[test]
        fn si_sdr_scale_invariant(
            s in proptest::collection::vec(-1.0f64..1.0, 16),
            noise in proptest::collection::vec(-1.0f64..1.0, 16),
            scale in 0.1f64..10.0,
        ) {
            prop_assume!(s.iter().map(|x| x * x).sum::<f64>() > 1e-3);
            let e: Vec<f64> = s.iter().zip(&noise).map(|(a, n)| a + 0.5 * n).collect();
            let es: Vec<f64> = e.iter().map(|x| scale * x).collect();
            let a = si_sdr(&mono(s.clone()), &mono(e), 60.0).unwrap().db().unwrap();
            let b = si_sdr(&mono(s), &mono(es), 60.0).unwrap().db().unwrap();
            prop_assert!((a - b).abs() < 1e-8);
        }
    }
}
