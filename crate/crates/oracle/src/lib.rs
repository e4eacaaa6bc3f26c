//! Brute-force reference computations.
//!
//! Everything here is written directly from the textbook definitions and shares
//! no code with `scoreseg-core`. Tests and the `repro` command use these to
//! cross-check the optimized implementations.

use std::f64::consts::PI;

/// Direct DCT-II sum: `sqrt(2/N) * sum_n x[n] cos(pi k (2n + 1) / 2N)`.
pub fn dct2_direct(x: &[f64], k: usize) -> f64 {
    let n = x.len() as f64;
    let mut acc = 0.0;
    for (i, &v) in x.iter().enumerate() {
        acc += v * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos();
    }
    acc * (2.0 / n).sqrt()
}

/// Index of the mel filter whose peak lies closest (in mel) to `hz`, for
/// `n_mels` triangles evenly spaced on `1127 ln(1 + f/700)` between `low` and `high`.
pub fn mel_band_with_peak_nearest(hz: f64, n_mels: usize, low: f64, high: f64) -> usize {
    let mel = |f: f64| 1127.0 * (1.0 + f / 700.0).ln();
    let (lo, hi) = (mel(low), mel(high));
    let target = mel(hz);
    (0..n_mels)
        .map(|m| {
            let centre = lo + (hi - lo) * (m + 1) as f64 / (n_mels + 1) as f64;
            (m, (centre - target).abs())
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(m, _)| m)
        .unwrap()
}

/// Diagonal Gaussian log-density.
pub fn diag_gauss_logpdf(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for d in 0..x.len() {
        acc += -0.5 * ((2.0 * PI * var[d]).ln() + (x[d] - mean[d]).powi(2) / var[d]);
    }
    acc
}

/// `ln sum_i exp(v_i)` computed naively in the probability domain with a shift.
pub fn log_sum(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Result of enumerating every sequence in `alphabet^len`.
#[derive(Debug, Clone)]
pub struct Enumeration {
    /// Best score and the lexicographically-first sequence that attains it.
    pub best: Option<(f64, Vec<usize>)>,
    /// Log of the sum of `exp(score)` over all feasible sequences.
    pub log_total: f64,
    pub feasible: usize,
}

/// Scores every sequence of length `len` over `0..alphabet`. `score` returns
/// `None` for infeasible sequences.
pub fn enumerate_sequences(
    alphabet: usize,
    len: usize,
    mut score: impl FnMut(&[usize]) -> Option<f64>,
) -> Enumeration {
    let mut seq = vec![0usize; len];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut scores = Vec::new();
    let total = alphabet.checked_pow(len as u32).expect("enumeration too large");
    for mut code in 0..total {
        for slot in seq.iter_mut().rev() {
            *slot = code % alphabet;
            code /= alphabet;
        }
        if let Some(s) = score(&seq) {
            scores.push(s);
            match &best {
                Some((b, _)) if *b >= s => {}
                _ => best = Some((s, seq.clone())),
            }
        }
    }
    Enumeration {
        best,
        feasible: scores.len(),
        log_total: log_sum(&scores),
    }
}

/// Perceptron with bias on `points`; labels are `true`/`false`. Returns a
/// separating `(w, b)` with every point strictly on its side, or `None` if
/// none was found within `max_epochs`.
pub fn perceptron_separator(
    points: &[Vec<f64>],
    labels: &[bool],
    max_epochs: usize,
) -> Option<(Vec<f64>, f64)> {
    let dim = points.first()?.len();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    for _ in 0..max_epochs {
        let mut mistakes = 0;
        for (p, &l) in points.iter().zip(labels) {
            let y = if l { 1.0 } else { -1.0 };
            let act: f64 = w.iter().zip(p).map(|(a, c)| a * c).sum::<f64>() + b;
            if y * act <= 0.0 {
                for d in 0..dim {
                    w[d] += y * p[d];
                }
                b += y;
                mistakes += 1;
            }
        }
        if mistakes == 0 {
            return Some((w, b));
        }
    }
    None
}

/// One-sample Kolmogorov-Smirnov statistic against Uniform(lo, hi).
pub fn ks_uniform_statistic(samples: &[f64], lo: f64, hi: f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let cdf = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - cdf).max(cdf - i as f64 / n);
    }
    d
}

/// Asymptotic KS critical value `c(alpha) / sqrt(n)`, `c = sqrt(-ln(alpha/2) / 2)`.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Generalized KL divergence `sum v ln(v / r) - v + r` (with `0 ln 0 = 0`).
pub fn generalized_kl(v: &[f64], r: &[f64]) -> f64 {
    v.iter()
        .zip(r)
        .map(|(&a, &b)| if a > 0.0 { a * (a / b).ln() - a + b } else { b })
        .sum()
}
