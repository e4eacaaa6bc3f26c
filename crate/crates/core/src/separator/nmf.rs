//! Generalized-KL NMF with multiplicative updates.
//!
//! Layout: `v` and `h` are frame-major (`v[t * n_freq + f]`, `h[t * k + j]`),
//! `w` is basis-major (`w[j * n_freq + f]`), so `Λ[t] = Σ_j h[t, j] w[j]`.

use crate::rng::CounterRng;

const TINY: f64 = 1e-300;

/// `Σ v ln(v / λ) - v + λ`, with `0 ln 0 = 0`.
pub fn kl_divergence(v: &[f64], lambda: &[f64]) -> f64 {
    v.iter()
        .zip(lambda)
        .map(|(&x, &l)| {
            if x > 0.0 {
                x * (x / l.max(TINY)).ln() - x + l
            } else {
                l
            }
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub n_freq: usize,
    pub k: usize,
    pub w: Vec<f64>,
    pub h: Vec<f64>,
}

impl Factorization {
    pub fn n_frames(&self) -> usize {
        self.h.len() / self.k
    }

    /// Positive random factors whose product has roughly the mass of `v`.
    pub fn seeded(v: &[f64], n_freq: usize, k: usize, seed: u64) -> Factorization {
        let n_frames = v.len() / n_freq;
        let mut rng = CounterRng::new(seed).split_str("nmf-init");
        let mut w: Vec<f64> = (0..k * n_freq).map(|_| rng.uniform_range(0.5, 1.5)).collect();
        for col in w.chunks_mut(n_freq) {
            let s: f64 = col.iter().sum();
            col.iter_mut().for_each(|x| *x /= s);
        }
        let mass = v.iter().sum::<f64>() / (k * n_frames.max(1)) as f64;
        let scale = if mass > 0.0 { mass } else { 1.0 };
        let h = (0..n_frames * k).map(|_| scale * rng.uniform_range(0.5, 1.5)).collect();
        Factorization { n_freq, k, w, h }
    }

    /// `Λ` for one frame.
    pub fn frame_model(&self, t: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (j, &hj) in self.h[t * self.k..(t + 1) * self.k].iter().enumerate() {
            if hj != 0.0 {
                for (o, wv) in out.iter_mut().zip(&self.w[j * self.n_freq..(j + 1) * self.n_freq]) {
                    *o += hj * wv;
                }
            }
        }
    }

    pub fn model(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_frames() * self.n_freq];
        for (t, row) in out.chunks_mut(self.n_freq).enumerate() {
            self.frame_model(t, row);
        }
        out
    }

    pub fn objective(&self, v: &[f64]) -> f64 {
        kl_divergence(v, &self.model())
    }

    // ratio[t, f] = v / Λ
    fn ratio(&self, v: &[f64]) -> Vec<f64> {
        let mut r = self.model();
        for (x, &y) in r.iter_mut().zip(v) {
            *x = if y > 0.0 { y / x.max(TINY) } else { 0.0 };
        }
        r
    }

    fn update_h(&mut self, v: &[f64]) {
        let r = self.ratio(v);
        let (nf, k) = (self.n_freq, self.k);
        let wsum: Vec<f64> = self.w.chunks(nf).map(|c| c.iter().sum()).collect();
        for (t, rt) in r.chunks(nf).enumerate() {
            for j in 0..k {
                let h = &mut self.h[t * k + j];
                if *h == 0.0 {
                    continue;
                }
                let num: f64 = self.w[j * nf..(j + 1) * nf].iter().zip(rt).map(|(a, b)| a * b).sum();
                *h *= num / wsum[j].max(TINY);
            }
        }
    }

    fn update_w(&mut self, v: &[f64]) {
        let r = self.ratio(v);
        let (nf, k) = (self.n_freq, self.k);
        let mut num = vec![0.0; k * nf];
        let mut hsum = vec![0.0; k];
        for (t, rt) in r.chunks(nf).enumerate() {
            for j in 0..k {
                let h = self.h[t * k + j];
                if h == 0.0 {
                    continue;
                }
                hsum[j] += h;
                for (n, x) in num[j * nf..(j + 1) * nf].iter_mut().zip(rt) {
                    *n += h * x;
                }
            }
        }
        for j in 0..k {
            if hsum[j] <= 0.0 {
                continue;
            }
            for (wv, n) in self.w[j * nf..(j + 1) * nf].iter_mut().zip(&num[j * nf..(j + 1) * nf]) {
                *wv *= n / hsum[j];
            }
        }
        self.normalize();
    }

    /// Rescales bases to unit L1 norm, moving the scale into `h`; `Λ` is unchanged.
    pub fn normalize(&mut self) {
        let (nf, k) = (self.n_freq, self.k);
        for j in 0..k {
            let col = &mut self.w[j * nf..(j + 1) * nf];
            let s: f64 = col.iter().sum();
            if s <= 0.0 {
                continue;
            }
            col.iter_mut().for_each(|x| *x /= s);
            for t in 0..self.h.len() / k {
                self.h[t * k + j] *= s;
            }
        }
    }

    /// Runs `n_iter` rounds (H then, if `learn_w`, W). Zero activations stay
    /// zero, which is how gating is imposed. Returns the objective before the
    /// first round and after each one.
    pub fn fit(&mut self, v: &[f64], n_iter: usize, learn_w: bool, trace: bool) -> Vec<f64> {
        let mut out = Vec::new();
        if trace {
            out.push(self.objective(v));
        }
        for _ in 0..n_iter {
            self.update_h(v);
            if learn_w {
                self.update_w(v);
            }
            if trace {
                out.push(self.objective(v));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use scoreseg_oracle::generalized_kl;

    fn random_v(seed: u64, t: usize, f: usize) -> Vec<f64> {
        let mut r = CounterRng::new(seed);
        (0..t * f).map(|_| if r.bernoulli(0.1) { 0.0 } else { r.uniform() * 3.0 }).collect()
    }

    #[test]
    fn divergence_matches_oracle() {
        let v = random_v(1, 5, 7);
        let l: Vec<f64> = random_v(2, 5, 7).iter().map(|x| x + 0.1).collect();
        assert!((kl_divergence(&v, &l) - generalized_kl(&v, &l)).abs() < 1e-9);
    }

    #[test]
    fn rank_one_is_recovered() {
        let w: Vec<f64> = (0..16).map(|f| 1.0 + (f as f64 * 0.7).sin().abs()).collect();
        let h: Vec<f64> = (0..30).map(|t| 0.5 + (t % 7) as f64).collect();
        let v: Vec<f64> = h.iter().flat_map(|a| w.iter().map(move |b| a * b)).collect();
        let mut fz = Factorization::seeded(&v, 16, 1, 3);
        fz.fit(&v, 500, true, false);
        let ws: f64 = w.iter().sum();
        for (got, want) in fz.w.iter().zip(&w) {
            assert!((got - want / ws).abs() < 1e-3, "{got} vs {}", want / ws);
        }
    }

    #[test]
    fn zero_iterations_keep_init() {
        let v = random_v(4, 6, 5);
        let a = Factorization::seeded(&v, 5, 3, 9);
        let mut b = a.clone();
        let tr = b.fit(&v, 0, true, true);
        assert_eq!(a, b);
        assert_eq!(tr.len(), 1);
    }

    #[test]
    fn both_phases_are_monotone() {
        for seed in 0..5 {
            let v = random_v(seed, 20, 12);
            let mut fz = Factorization::seeded(&v, 12, 4, seed);
            let tr = fz.fit(&v, 100, true, true);
            assert!(tr.windows(2).all(|p| p[1] <= p[0] + 1e-8 * p[0].abs().max(1.0)));
            // gated activation fitting with fixed bases
            for t in 0..20 {
                fz.h[t * 4 + t % 4] = 0.0;
            }
            let tr = fz.fit(&v, 50, false, true);
            assert!(tr.windows(2).all(|p| p[1] <= p[0] + 1e-8 * p[0].abs().max(1.0)));
            assert!((0..20).all(|t| fz.h[t * 4 + t % 4] == 0.0));
        }
    }

    #[test]
    fn normalize_preserves_model() {
        let v = random_v(5, 8, 6);
        let mut fz = Factorization::seeded(&v, 6, 2, 1);
        fz.w.iter_mut().for_each(|x| *x *= 3.0);
        let before = fz.model();
        fz.normalize();
        for (a, b) in before.iter().zip(fz.model()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
