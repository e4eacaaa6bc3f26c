use serde::{Deserialize, Serialize};

use super::{log_sum_exp, ModelError};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmRepr", into = "GmmRepr")]
pub struct Gmm {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    // ln w_m - 0.5 * sum_d ln(2 pi var_md)
    consts: Vec<f64>,
    inv_var: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct GmmRepr {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl TryFrom<GmmRepr> for Gmm {
    type Error = ModelError;

    fn try_from(r: GmmRepr) -> Result<Self, Self::Error> {
        Gmm::new(r.weights, r.means, r.variances)
    }
}

impl From<Gmm> for GmmRepr {
    fn from(g: Gmm) -> Self {
        GmmRepr {
            weights: g.weights,
            means: g.means,
            variances: g.variances,
        }
    }
}

impl Gmm {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let bad = |m: String| Err(ModelError::InvalidModel(m));
        if weights.is_empty() || weights.len() != means.len() || weights.len() != variances.len() {
            return bad(format!(
                "{} weights, {} means, {} variances",
                weights.len(),
                means.len(),
                variances.len()
            ));
        }
        let dim = means[0].len();
        if dim == 0 {
            return bad("zero-dimensional mixture".into());
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad(format!("weights {weights:?} not a probability vector"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("weights sum to {sum}"));
        }
        for (m, v) in means.iter().zip(&variances) {
            if m.len() != dim || v.len() != dim {
                return bad(format!("component dimensions differ from {dim}"));
            }
            if m.iter().any(|x| !x.is_finite()) || v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return bad("non-finite mean or non-positive variance".into());
            }
        }
        let mut g = Gmm {
            weights,
            means,
            variances,
            consts: Vec::new(),
            inv_var: Vec::new(),
        };
        g.refresh();
        Ok(g)
    }

    pub fn single(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self, ModelError> {
        Gmm::new(vec![1.0], vec![mean], vec![variance])
    }

    fn refresh(&mut self) {
        self.consts = self
            .weights
            .iter()
            .zip(&self.variances)
            .map(|(w, v)| w.ln() - 0.5 * v.iter().map(|x| LN_2PI + x.ln()).sum::<f64>())
            .collect();
        self.inv_var = self
            .variances
            .iter()
            .map(|v| v.iter().map(|x| 1.0 / x).collect())
            .collect();
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// Writes `ln(w_m N(x; m))` for each component into `out`; returns their log-sum.
    pub fn component_log_likelihoods(&self, x: &[f64], out: &mut [f64]) -> f64 {
        for (m, o) in out.iter_mut().enumerate().take(self.weights.len()) {
            let mut q = 0.0;
            for ((xi, mi), iv) in x.iter().zip(&self.means[m]).zip(&self.inv_var[m]) {
                let d = xi - mi;
                q += d * d * iv;
            }
            *o = self.consts[m] - 0.5 * q;
        }
        log_sum_exp(&out[..self.weights.len()])
    }

    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.weights.len()];
        self.component_log_likelihoods(x, &mut buf)
    }

    /// Raises every variance to at least `floor` (per dimension).
    pub fn apply_floor(&mut self, floor: &[f64]) {
        for v in &mut self.variances {
            for (x, f) in v.iter_mut().zip(floor) {
                *x = x.max(*f);
            }
        }
        self.refresh();
    }

    /// Splits the heaviest component into two with means at ±`scale`·σ and
    /// half the weight each.
    pub fn split_heaviest(&mut self, scale: f64) {
        let (m, _) = self
            .weights
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &w)| if w > acc.1 { (i, w) } else { acc });
        let sd: Vec<f64> = self.variances[m].iter().map(|v| v.sqrt()).collect();
        let plus: Vec<f64> = self.means[m].iter().zip(&sd).map(|(a, s)| a + scale * s).collect();
        let minus: Vec<f64> = self.means[m].iter().zip(&sd).map(|(a, s)| a - scale * s).collect();
        self.weights[m] /= 2.0;
        self.means[m] = minus;
        self.weights.push(self.weights[m]);
        self.means.push(plus);
        self.variances.push(self.variances[m].clone());
        self.refresh();
    }

    /// Maximum-likelihood update from per-component sufficient statistics
    /// `(occupancy, Σγx, Σγx²)`. Components with occupancy below `min_occ`
    /// are dropped; the rest are renormalized. Returns the number dropped.
    pub fn update(&mut self, stats: &[(f64, Vec<f64>, Vec<f64>)], floor: &[f64], min_occ: f64) -> usize {
        let heaviest = stats
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, s)| if s.0 > acc.1 { (i, s.0) } else { acc })
            .0;
        let keep: Vec<usize> = (0..stats.len())
            .filter(|&m| stats[m].0 >= min_occ || (m == heaviest && stats.iter().all(|s| s.0 < min_occ)))
            .collect();
        let total: f64 = keep.iter().map(|&m| stats[m].0).sum();
        if total <= 0.0 {
            return 0;
        }
        let mut weights = Vec::with_capacity(keep.len());
        let mut means = Vec::with_capacity(keep.len());
        let mut variances = Vec::with_capacity(keep.len());
        for &m in &keep {
            let (occ, sx, sxx) = &stats[m];
            let mean: Vec<f64> = sx.iter().map(|v| v / occ).collect();
            let var: Vec<f64> = sxx
                .iter()
                .zip(&mean)
                .zip(floor)
                .map(|((s2, mu), f)| (s2 / occ - mu * mu).max(*f))
                .collect();
            weights.push(occ / total);
            means.push(mean);
            variances.push(var);
        }
        let dropped = stats.len() - keep.len();
        self.weights = weights;
        self.means = means;
        self.variances = variances;
        self.refresh();
        dropped
    }

    /// Adds `delta` to every mean.
    pub(crate) fn shift_means(&mut self, mut delta: impl FnMut(usize, usize) -> f64) {
        for (m, mean) in self.means.iter_mut().enumerate() {
            for (d, x) in mean.iter_mut().enumerate() {
                *x += delta(m, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use scoreseg_oracle::{diag_gauss_logpdf, log_sum};

    #[test]
    fn matches_oracle_density() {
        let g = Gmm::new(
            vec![0.3, 0.7],
            vec![vec![0.0, 1.0], vec![2.0, -1.0]],
            vec![vec![1.0, 0.5], vec![2.0, 0.25]],
        )
        .unwrap();
        let x = [0.4, -0.2];
        let want = log_sum(&[
            0.3f64.ln() + diag_gauss_logpdf(&x, &[0.0, 1.0], &[1.0, 0.5]),
            0.7f64.ln() + diag_gauss_logpdf(&x, &[2.0, -1.0], &[2.0, 0.25]),
        ]);
        assert!((g.log_likelihood(&x) - want).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_weights_and_variances() {
        assert!(Gmm::new(vec![0.5, 0.6], vec![vec![0.0]; 2], vec![vec![1.0]; 2]).is_err());
        assert!(Gmm::single(vec![0.0], vec![0.0]).is_err());
        assert!(Gmm::new(vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn floor_clamps() {
        let mut g = Gmm::single(vec![0.0, 0.0], vec![1e-9, 4.0]).unwrap();
        g.apply_floor(&[1e-3, 1e-3]);
        assert_eq!(g.variances()[0], vec![1e-3, 4.0]);
    }

    #[test]
    fn split_then_update_keeps_simplex() {
        let mut g = Gmm::single(vec![1.0], vec![4.0]).unwrap();
        g.split_heaviest(0.2);
        assert_eq!(g.weights(), &[0.5, 0.5]);
        assert_eq!(g.means()[0], vec![0.6]);
        assert_eq!(g.means()[1], vec![1.4]);
        let dropped = g.update(
            &[(3.0, vec![3.0], vec![6.0]), (1e-6, vec![0.0], vec![0.0])],
            &[0.1],
            1e-3,
        );
        assert_eq!(dropped, 1);
        assert_eq!(g.weights(), &[1.0]);
        assert_eq!(g.variances()[0], vec![1.0]);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let g = Gmm::new(vec![0.1, 0.9], vec![vec![1.0 / 3.0], vec![-2e-17]], vec![vec![0.7], vec![1e300]]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        let back: Gmm = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
    }
}
