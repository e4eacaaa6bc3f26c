//! Flat-start initialization and embedded re-estimation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::decode::{backward, forward, viterbi, ArcKind, Network};
use super::{Gmm, ModelError, ModelSet, UnitHmm};
use crate::dsp::FeatureSequence;
use crate::score::{Unit, UnitTimeline};

/// Clips per parallel batch; statistics are always reduced in corpus order.
const BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub n_states: usize,
    pub n_mix: usize,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub var_floor_scale: f64,
    /// Component split offset, in standard deviations.
    pub split_scale: f64,
    /// EM passes over a state's frames after each split.
    pub split_iters: usize,
}

impl InitConfig {
    pub fn desk() -> Self {
        Self {
            n_states: 20,
            n_mix: 2,
            var_floor_scale: 1e-3,
            split_scale: 0.2,
            split_iters: 4,
        }
    }

    pub fn full() -> Self {
        Self {
            n_states: 300,
            n_mix: 4,
            ..Self::desk()
        }
    }
}

impl Default for InitConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReestimationMode {
    Viterbi,
    BaumWelch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: ReestimationMode,
    pub n_iter: usize,
    /// Components whose occupancy (in frames) falls below this are dropped.
    pub min_occupancy: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: ReestimationMode::BaumWelch,
            n_iter: 5,
            min_occupancy: 1e-3,
        }
    }
}

/// Features with their score-derived timeline. Initialization uses the
/// timeline's segments; re-estimation only its unit sequence.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub features: FeatureSequence,
    pub timeline: UnitTimeline,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Corpus log-likelihood before each iteration, then after the last one.
    /// Forward likelihoods in Baum-Welch mode, best-path scores in Viterbi mode.
    pub log_likelihoods: Vec<f64>,
    pub dropped_components: usize,
}

fn check_item(item: &TrainItem, dim: usize) -> Result<(), ModelError> {
    if item.features.dim() != dim {
        return Err(ModelError::DimMismatch {
            expected: dim,
            got: item.features.dim(),
        });
    }
    if item.timeline.total_frames() != item.features.n_frames() {
        return Err(ModelError::Sequence(format!(
            "timeline covers {} frames but features have {}",
            item.timeline.total_frames(),
            item.features.n_frames()
        )));
    }
    Ok(())
}

fn mean_var(frames: &[&[f64]], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = frames.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in frames {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for x in frames {
        for ((s, v), m) in var.iter_mut().zip(x.iter()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

fn fit_state(frames: &[&[f64]], dim: usize, cfg: &InitConfig, floor: &[f64]) -> Result<Gmm, ModelError> {
    let (mean, var) = mean_var(frames, dim);
    let mut g = Gmm::single(mean, var.iter().zip(floor).map(|(v, f)| v.max(*f)).collect())?;
    let mut attempts = 0;
    while g.n_components() < cfg.n_mix && attempts < 2 * cfg.n_mix {
        attempts += 1;
        g.split_heaviest(cfg.split_scale);
        for _ in 0..cfg.split_iters {
            let stats = gmm_stats(&g, frames);
            g.update(&stats, floor, 1e-3);
        }
    }
    Ok(g)
}

fn gmm_stats(g: &Gmm, frames: &[&[f64]]) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
    let dim = g.dim();
    let mut stats = vec![(0.0, vec![0.0; dim], vec![0.0; dim]); g.n_components()];
    let mut buf = vec![0.0; g.n_components()];
    for x in frames {
        let total = g.component_log_likelihoods(x, &mut buf);
        for (m, s) in stats.iter_mut().enumerate() {
            accumulate(s, x, (buf[m] - total).exp());
        }
    }
    stats
}

fn accumulate(s: &mut (f64, Vec<f64>, Vec<f64>), x: &[f64], w: f64) {
    if w == 0.0 {
        return;
    }
    s.0 += w;
    for ((a, b), v) in s.1.iter_mut().zip(s.2.iter_mut()).zip(x) {
        *a += w * v;
        *b += w * v * v;
    }
}

/// Uniform segmentation of every score segment across its unit's states,
/// single-Gaussian fits, then binary splitting up to `n_mix` components.
pub fn flat_start_init(corpus: &[TrainItem], cfg: &InitConfig) -> Result<ModelSet, ModelError> {
    if cfg.n_states == 0 || cfg.n_mix == 0 {
        return Err(ModelError::InvalidModel("n_states and n_mix must be positive".into()));
    }
    let dim = corpus
        .iter()
        .find(|i| !i.features.is_empty())
        .map(|i| i.features.dim())
        .ok_or(ModelError::EmptyInput)?;
    for item in corpus {
        check_item(item, dim)?;
    }
    let all: Vec<&[f64]> = corpus.iter().flat_map(|i| i.features.frames()).collect();
    let (_, global_var) = mean_var(&all, dim);
    let floor: Vec<f64> = global_var.iter().map(|v| (cfg.var_floor_scale * v).max(1e-12)).collect();

    let n = cfg.n_states;
    let mut models = BTreeMap::new();
    for unit in Unit::ALL {
        let mut per_state: Vec<Vec<&[f64]>> = vec![Vec::new(); n];
        let mut pooled: Vec<&[f64]> = Vec::new();
        let mut lengths = Vec::new();
        for item in corpus {
            for seg in item.timeline.segments().iter().filter(|s| s.unit == unit) {
                let len = seg.len();
                lengths.push(len);
                for (s, bucket) in per_state.iter_mut().enumerate() {
                    let (a, b) = (s * len / n, (s + 1) * len / n);
                    bucket.extend((seg.start + a..seg.start + b).map(|t| item.features.frame(t)));
                }
                pooled.extend((seg.start..seg.end).map(|t| item.features.frame(t)));
            }
        }
        if pooled.is_empty() {
            return Err(ModelError::UnitAbsent(unit));
        }
        let avg_len = lengths.iter().sum::<usize>() as f64 / lengths.len() as f64;
        let a = (1.0 - n as f64 / avg_len).clamp(1e-3, 0.999);
        let states = per_state
            .iter()
            .map(|frames| fit_state(if frames.is_empty() { &pooled } else { frames }, dim, cfg, &floor))
            .collect::<Result<Vec<_>, _>>()?;
        models.insert(
            unit,
            UnitHmm {
                unit,
                self_loop: vec![a; n],
                states,
            },
        );
    }
    ModelSet::new(dim, floor, models)
}

#[derive(Debug, Clone)]
struct StateAcc {
    stay: f64,
    leave: f64,
    comps: Vec<(f64, Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone)]
struct Accumulator {
    units: Vec<Vec<StateAcc>>,
    log_likelihood: f64,
}

impl Accumulator {
    fn zeros(ms: &ModelSet) -> Self {
        let dim = ms.feature_dim();
        let units = Unit::ALL
            .iter()
            .map(|&u| {
                ms.model(u)
                    .states
                    .iter()
                    .map(|g| StateAcc {
                        stay: 0.0,
                        leave: 0.0,
                        comps: vec![(0.0, vec![0.0; dim], vec![0.0; dim]); g.n_components()],
                    })
                    .collect()
            })
            .collect();
        Self {
            units,
            log_likelihood: 0.0,
        }
    }

    fn add(&mut self, other: &Accumulator) {
        self.log_likelihood += other.log_likelihood;
        for (a, b) in self.units.iter_mut().flatten().zip(other.units.iter().flatten()) {
            a.stay += b.stay;
            a.leave += b.leave;
            for (x, y) in a.comps.iter_mut().zip(&b.comps) {
                x.0 += y.0;
                x.1.iter_mut().zip(&y.1).for_each(|(p, q)| *p += q);
                x.2.iter_mut().zip(&y.2).for_each(|(p, q)| *p += q);
            }
        }
    }

    fn state(&mut self, (u, s): (Unit, usize)) -> &mut StateAcc {
        &mut self.units[u.index()][s]
    }
}

fn add_frame(acc: &mut StateAcc, g: &Gmm, x: &[f64], weight: f64, buf: &mut [f64]) {
    let total = g.component_log_likelihoods(x, buf);
    for (m, c) in acc.comps.iter_mut().enumerate() {
        accumulate(c, x, weight * (buf[m] - total).exp());
    }
}

fn estep(ms: &ModelSet, item: &TrainItem, mode: ReestimationMode) -> Result<Accumulator, ModelError> {
    let f = &item.features;
    let units = item.timeline.unit_sequence();
    let net = Network::forced(ms, &units)?;
    let t_len = f.n_frames();
    if t_len < net.min_frames {
        return Err(ModelError::Infeasible {
            needed: net.min_frames,
            frames: t_len,
        });
    }
    let n = net.n_nodes();
    let emis = net.emissions(ms, f);
    let mut acc = Accumulator::zeros(ms);
    let max_mix = ms.models().flat_map(|m| &m.states).map(Gmm::n_components).max().unwrap_or(1);
    let mut buf = vec![0.0; max_mix];
    let gmm = |node: (Unit, usize)| &ms.model(node.0).states[node.1];

    match mode {
        ReestimationMode::Viterbi => {
            let (score, path) = viterbi(&net, &emis, t_len).ok_or(ModelError::Infeasible {
                needed: net.min_frames,
                frames: t_len,
            })?;
            acc.log_likelihood = score;
            for (t, &j) in path.iter().enumerate() {
                let node = net.nodes[j];
                let st = acc.state(node);
                add_frame(st, gmm(node), f.frame(t), 1.0, &mut buf);
                if t + 1 < t_len && path[t + 1] == j {
                    st.stay += 1.0;
                } else {
                    st.leave += 1.0;
                }
            }
        }
        ReestimationMode::BaumWelch => {
            let (alpha, ll) = forward(&net, &emis, t_len);
            if ll == f64::NEG_INFINITY {
                return Err(ModelError::Infeasible {
                    needed: net.min_frames,
                    frames: t_len,
                });
            }
            let beta = backward(&net, &emis, t_len);
            acc.log_likelihood = ll;
            for t in 0..t_len {
                let x = f.frame(t);
                for j in 0..n {
                    let node = net.nodes[j];
                    let g = (alpha[t * n + j] + beta[t * n + j] - ll).exp();
                    if g > 0.0 {
                        add_frame(acc.state(node), gmm(node), x, g, &mut buf);
                    }
                    if t + 1 < t_len {
                        for a in &net.outgoing[j] {
                            let xi = (alpha[t * n + j] + a.logp + emis[(t + 1) * n + a.to] + beta[(t + 1) * n + a.to]
                                - ll)
                                .exp();
                            let st = acc.state(node);
                            match a.kind {
                                ArcKind::Stay => st.stay += xi,
                                ArcKind::Leave => st.leave += xi,
                            }
                        }
                    } else {
                        acc.state(node).leave += (alpha[t * n + j] + net.exit[j] - ll).exp();
                    }
                }
            }
        }
    }
    Ok(acc)
}

fn corpus_stats(ms: &ModelSet, corpus: &[TrainItem], mode: ReestimationMode) -> Result<Accumulator, ModelError> {
    let mut total = Accumulator::zeros(ms);
    for batch in corpus.chunks(BATCH) {
        let accs: Vec<Accumulator> = batch
            .par_iter()
            .map(|item| estep(ms, item, mode))
            .collect::<Result<_, _>>()?;
        for a in &accs {
            total.add(a);
        }
    }
    Ok(total)
}

fn mstep(ms: &ModelSet, acc: &Accumulator, min_occ: f64) -> Result<(ModelSet, usize), ModelError> {
    let mut out = ms.clone();
    let floor = ms.var_floor().to_vec();
    let mut dropped = 0;
    for hmm in out.models_mut() {
        let unit = hmm.unit;
        for (s, st) in acc.units[unit.index()].iter().enumerate() {
            let d = hmm.states[s].update(&st.comps, &floor, min_occ);
            if d > 0 {
                log::info!("{unit} state {s}: dropped {d} starved component(s)");
            }
            dropped += d;
            let denom = st.stay + st.leave;
            if denom > 0.0 {
                hmm.self_loop[s] = (st.stay / denom).clamp(1e-12, 1.0 - 1e-12);
            }
        }
    }
    let fixed = ModelSet::new(ms.feature_dim(), floor, out.models.clone())?;
    Ok((fixed, dropped))
}

/// Embedded re-estimation against each item's unit sequence.
pub fn reestimate(ms: &ModelSet, corpus: &[TrainItem], cfg: &TrainConfig) -> Result<(ModelSet, TrainReport), ModelError> {
    for item in corpus {
        check_item(item, ms.feature_dim())?;
    }
    let mut model = ms.clone();
    let mut report = TrainReport::default();
    for it in 0..cfg.n_iter {
        let acc = corpus_stats(&model, corpus, cfg.mode)?;
        log::info!("iteration {it}: log-likelihood {:.6}", acc.log_likelihood);
        report.log_likelihoods.push(acc.log_likelihood);
        let (next, dropped) = mstep(&model, &acc, cfg.min_occupancy)?;
        report.dropped_components += dropped;
        model = next;
    }
    let last = corpus_stats(&model, corpus, cfg.mode)?;
    report.log_likelihoods.push(last.log_likelihood);
    Ok((model, report))
}
