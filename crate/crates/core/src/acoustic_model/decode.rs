//! Composite networks of unit-model states, and Viterbi / forward / backward
//! over them.

use super::{Alignment, ModelError, ModelSet};
use crate::dsp::FeatureSequence;
use crate::score::{Unit, UnitTimeline, FRAME_SHIFT_MS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ArcKind {
    Stay,
    Leave,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Arc {
    pub from: usize,
    pub to: usize,
    pub kind: ArcKind,
    pub logp: f64,
}

/// States of one or more unit models wired together. Arcs into each node are
/// kept sorted by source index, which is what Viterbi tie-breaking relies on.
#[derive(Debug, Clone)]
pub struct Network {
    pub(crate) nodes: Vec<(Unit, usize)>,
    pub(crate) init: Vec<f64>,
    /// Log probability of ending the utterance in each node.
    pub(crate) exit: Vec<f64>,
    pub(crate) incoming: Vec<Vec<Arc>>,
    pub(crate) outgoing: Vec<Vec<Arc>>,
    pub(crate) min_frames: usize,
}

impl Network {
    fn build(nodes: Vec<(Unit, usize)>, init: Vec<f64>, exit: Vec<f64>, arcs: Vec<Arc>, min_frames: usize) -> Self {
        let n = nodes.len();
        let mut incoming = vec![Vec::new(); n];
        let mut outgoing = vec![Vec::new(); n];
        for a in arcs {
            incoming[a.to].push(a);
            outgoing[a.from].push(a);
        }
        for v in &mut incoming {
            v.sort_by_key(|a| a.from);
        }
        Network {
            nodes,
            init,
            exit,
            incoming,
            outgoing,
            min_frames,
        }
    }

    /// The models of `units` in sequence, entered at the first state of the
    /// first unit and left from the last state of the last.
    pub fn forced(ms: &ModelSet, units: &[Unit]) -> Result<Self, ModelError> {
        if units.is_empty() {
            return Err(ModelError::Sequence("empty unit sequence".into()));
        }
        if let Some(w) = units.windows(2).find(|w| w[0] == w[1]) {
            return Err(ModelError::Sequence(format!("unit {} repeated back to back", w[0])));
        }
        let mut nodes = Vec::new();
        let mut arcs = Vec::new();
        for &u in units {
            let hmm = ms.model(u);
            for (s, &a) in hmm.self_loop.iter().enumerate() {
                let k = nodes.len();
                nodes.push((u, s));
                arcs.push(Arc {
                    from: k,
                    to: k,
                    kind: ArcKind::Stay,
                    logp: a.ln(),
                });
                if k > 0 {
                    let (pu, ps) = nodes[k - 1];
                    arcs.push(Arc {
                        from: k - 1,
                        to: k,
                        kind: ArcKind::Leave,
                        logp: (-ms.model(pu).self_loop[ps]).ln_1p(),
                    });
                }
            }
        }
        let n = nodes.len();
        let mut init = vec![f64::NEG_INFINITY; n];
        init[0] = 0.0;
        let mut exit = vec![f64::NEG_INFINITY; n];
        let (lu, ls) = nodes[n - 1];
        exit[n - 1] = (-ms.model(lu).self_loop[ls]).ln_1p();
        Ok(Self::build(nodes, init, exit, arcs, n))
    }

    /// Unit-loop grammar: start in any unit (probability 1/U), after a unit
    /// move to any *other* unit (probability 1/(U-1) plus `loop_penalty`).
    pub fn unit_loop(ms: &ModelSet, loop_penalty: f64) -> Self {
        let n_units = Unit::ALL.len() as f64;
        let mut nodes = Vec::new();
        let mut arcs = Vec::new();
        let mut firsts = Vec::new();
        let mut lasts = Vec::new();
        for u in Unit::ALL {
            let hmm = ms.model(u);
            firsts.push(nodes.len());
            for (s, &a) in hmm.self_loop.iter().enumerate() {
                let k = nodes.len();
                nodes.push((u, s));
                arcs.push(Arc {
                    from: k,
                    to: k,
                    kind: ArcKind::Stay,
                    logp: a.ln(),
                });
                if s > 0 {
                    arcs.push(Arc {
                        from: k - 1,
                        to: k,
                        kind: ArcKind::Leave,
                        logp: (-hmm.self_loop[s - 1]).ln_1p(),
                    });
                }
            }
            lasts.push(nodes.len() - 1);
        }
        let n = nodes.len();
        let mut init = vec![f64::NEG_INFINITY; n];
        let mut exit = vec![f64::NEG_INFINITY; n];
        let switch = -(n_units - 1.0).ln() + loop_penalty;
        for (i, &last) in lasts.iter().enumerate() {
            let (u, s) = nodes[last];
            let leave = (-ms.model(u).self_loop[s]).ln_1p();
            exit[last] = leave;
            init[firsts[i]] = -n_units.ln();
            for (j, &first) in firsts.iter().enumerate() {
                if i != j {
                    arcs.push(Arc {
                        from: last,
                        to: first,
                        kind: ArcKind::Leave,
                        logp: leave + switch,
                    });
                }
            }
        }
        let min_frames = Unit::ALL.iter().map(|&u| ms.model(u).n_states()).min().unwrap_or(1);
        Self::build(nodes, init, exit, arcs, min_frames)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Row-major `T × n_nodes` emission log-likelihoods.
    pub(crate) fn emissions(&self, ms: &ModelSet, f: &FeatureSequence) -> Vec<f64> {
        let n = self.nodes.len();
        let max_mix = ms.models().flat_map(|m| &m.states).map(|g| g.n_components()).max().unwrap_or(1);
        let mut buf = vec![0.0; max_mix];
        let mut out = Vec::with_capacity(f.n_frames() * n);
        for x in f.frames() {
            for &(u, s) in &self.nodes {
                out.push(ms.model(u).states[s].component_log_likelihoods(x, &mut buf));
            }
        }
        out
    }
}

/// Best path; ties go to the lower predecessor index, then the lower final node.
pub(crate) fn viterbi(net: &Network, emis: &[f64], t_len: usize) -> Option<(f64, Vec<usize>)> {
    let n = net.nodes.len();
    if t_len == 0 {
        return None;
    }
    let mut delta: Vec<f64> = (0..n).map(|j| net.init[j] + emis[j]).collect();
    let mut next = vec![f64::NEG_INFINITY; n];
    let mut back = vec![u32::MAX; t_len * n];
    for t in 1..t_len {
        let row = &emis[t * n..(t + 1) * n];
        for j in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = u32::MAX;
            for a in &net.incoming[j] {
                let v = delta[a.from] + a.logp;
                if v > best {
                    best = v;
                    arg = a.from as u32;
                }
            }
            next[j] = best + row[j];
            back[t * n + j] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = usize::MAX;
    for j in 0..n {
        let v = delta[j] + net.exit[j];
        if v > best {
            best = v;
            last = j;
        }
    }
    if best == f64::NEG_INFINITY {
        return None;
    }
    let mut path = vec![0; t_len];
    path[t_len - 1] = last;
    for t in (1..t_len).rev() {
        path[t - 1] = back[t * n + path[t]] as usize;
    }
    Some((best, path))
}

/// Forward log-probabilities (row-major `T × n`) and the total log-likelihood.
pub(crate) fn forward(net: &Network, emis: &[f64], t_len: usize) -> (Vec<f64>, f64) {
    let n = net.nodes.len();
    let mut alpha = vec![f64::NEG_INFINITY; t_len * n];
    if t_len == 0 {
        return (alpha, f64::NEG_INFINITY);
    }
    for j in 0..n {
        alpha[j] = net.init[j] + emis[j];
    }
    let mut terms = Vec::new();
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * n);
        let prev = &prev[(t - 1) * n..];
        for j in 0..n {
            terms.clear();
            terms.extend(net.incoming[j].iter().map(|a| prev[a.from] + a.logp));
            cur[j] = super::log_sum_exp(&terms) + emis[t * n + j];
        }
    }
    let last = &alpha[(t_len - 1) * n..];
    let finals: Vec<f64> = (0..n).map(|j| last[j] + net.exit[j]).collect();
    let ll = super::log_sum_exp(&finals);
    (alpha, ll)
}

pub(crate) fn backward(net: &Network, emis: &[f64], t_len: usize) -> Vec<f64> {
    let n = net.nodes.len();
    let mut beta = vec![f64::NEG_INFINITY; t_len * n];
    if t_len == 0 {
        return beta;
    }
    beta[(t_len - 1) * n..].copy_from_slice(&net.exit);
    let mut terms = Vec::new();
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * n);
        let cur = &mut cur[t * n..];
        let e = &emis[(t + 1) * n..(t + 2) * n];
        for i in 0..n {
            terms.clear();
            terms.extend(net.outgoing[i].iter().map(|a| a.logp + e[a.to] + next[a.to]));
            cur[i] = super::log_sum_exp(&terms);
        }
    }
    beta
}

fn path_to_alignment(net: &Network, path: &[usize], score: f64) -> Result<Alignment, ModelError> {
    let labels: Vec<Unit> = path.iter().map(|&k| net.nodes[k].0).collect();
    Ok(Alignment {
        timeline: UnitTimeline::from_labels(&labels, FRAME_SHIFT_MS)?,
        states: path.iter().map(|&k| net.nodes[k].1).collect(),
        log_likelihood: score,
    })
}

fn check_forced(ms: &ModelSet, f: &FeatureSequence, units: &[Unit]) -> Result<Network, ModelError> {
    ms.check_dim(f)?;
    let net = Network::forced(ms, units)?;
    if f.n_frames() < net.min_frames {
        return Err(ModelError::Infeasible {
            needed: net.min_frames,
            frames: f.n_frames(),
        });
    }
    Ok(net)
}

/// Forced alignment: the best state path through `units` in order.
pub fn viterbi_align(ms: &ModelSet, f: &FeatureSequence, units: &[Unit]) -> Result<Alignment, ModelError> {
    let net = check_forced(ms, f, units)?;
    let emis = net.emissions(ms, f);
    let (score, path) = viterbi(&net, &emis, f.n_frames()).ok_or(ModelError::Infeasible {
        needed: net.min_frames,
        frames: f.n_frames(),
    })?;
    path_to_alignment(&net, &path, score)
}

/// Free recognition over the unit-loop grammar.
pub fn recognize(ms: &ModelSet, f: &FeatureSequence, loop_penalty: f64) -> Result<Alignment, ModelError> {
    if f.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    ms.check_dim(f)?;
    let net = Network::unit_loop(ms, loop_penalty);
    if f.n_frames() < net.min_frames {
        return Err(ModelError::Infeasible {
            needed: net.min_frames,
            frames: f.n_frames(),
        });
    }
    let emis = net.emissions(ms, f);
    let (score, path) = viterbi(&net, &emis, f.n_frames()).ok_or(ModelError::EmptyInput)?;
    path_to_alignment(&net, &path, score)
}

/// Forward log-likelihood of `f` given the unit sequence (sum over all paths).
pub fn log_likelihood(ms: &ModelSet, f: &FeatureSequence, units: &[Unit]) -> Result<f64, ModelError> {
    let net = check_forced(ms, f, units)?;
    let emis = net.emissions(ms, f);
    Ok(forward(&net, &emis, f.n_frames()).1)
}

/// Forward log-likelihood over the unit-loop grammar.
pub fn forward_log_likelihood(ms: &ModelSet, f: &FeatureSequence, loop_penalty: f64) -> Result<f64, ModelError> {
    if f.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    ms.check_dim(f)?;
    let net = Network::unit_loop(ms, loop_penalty);
    let emis = net.emissions(ms, f);
    Ok(forward(&net, &emis, f.n_frames()).1)
}
