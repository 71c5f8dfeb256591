use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Error, PartialEq)]
pub enum GmmError {
    #[error("no samples")]
    NoSamples,
    #[error("{got} samples is too few to fit up to {k_max} components (need {need})")]
    InsufficientSamples { got: usize, need: usize, k_max: usize },
    #[error("samples contain non-finite values")]
    NonFinite,
    #[error("invalid mixture: {0}")]
    Invalid(String),
}

/// Goodness-of-fit of a mixture on the data it was fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_samples: usize,
}

/// One-dimensional Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitStats>,
}

impl Gmm {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self, GmmError> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(GmmError::Invalid("weights, means and variances must have equal nonzero length".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(GmmError::Invalid("weights must be nonnegative and sum to 1".into()));
        }
        if variances.iter().any(|v| !(*v > 0.0)) || means.iter().any(|m| !m.is_finite()) {
            return Err(GmmError::Invalid("variances must be positive and means finite".into()));
        }
        Ok(Gmm {
            weights,
            means,
            variances,
            fit: None,
        })
    }

    pub fn gaussian(mean: f64, variance: f64) -> Result<Self, GmmError> {
        Gmm::new(vec![1.0], vec![mean], vec![variance])
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn log_likelihood(&self) -> Option<f64> {
        self.fit.map(|f| f.log_likelihood)
    }

    pub fn aic(&self) -> Option<f64> {
        self.fit.map(|f| f.aic)
    }

    pub fn bic(&self) -> Option<f64> {
        self.fit.map(|f| f.bic)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.components()
            .map(|(w, m, v)| w * (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt())
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.components()
            .map(|(w, m, v)| w * 0.5 * (1.0 + statrs::function::erf::erf((x - m) / (2.0 * v).sqrt())))
            .sum()
    }

    /// Inverse CDF by bisection; `q` is clamped into (0, 1).
    pub fn quantile(&self, q: f64) -> f64 {
        let q = q.clamp(1e-12, 1.0 - 1e-12);
        let spread = self.variances.iter().fold(0.0f64, |a, v| a.max(v.sqrt()));
        let (mut lo, mut hi) = self
            .means
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), m| (l.min(*m), h.max(*m)));
        lo -= 10.0 * spread;
        hi += 10.0 * spread;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn mean(&self) -> f64 {
        gmm_moments(self).0
    }

    pub fn std_dev(&self) -> f64 {
        gmm_moments(self).1.sqrt()
    }

    fn components(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| (*w, *m, *v))
    }

    /// Draws one sample using `rng`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.n_components() - 1;
        for (m, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = m;
                break;
            }
        }
        let z: f64 = StandardNormal.sample(rng);
        self.means[pick] + self.variances[pick].sqrt() * z
    }
}

/// Mixture mean and variance.
pub fn gmm_moments(g: &Gmm) -> (f64, f64) {
    let mean: f64 = g.components().map(|(w, m, _)| w * m).sum();
    let second: f64 = g.components().map(|(w, m, v)| w * (v + m * m)).sum();
    (mean, (second - mean * mean).max(0.0))
}

/// `n` reproducible draws from the mixture.
pub fn sample_gmm(g: &Gmm, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| g.draw(&mut rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub restarts: usize,
    /// Convergence threshold on the per-sample log-likelihood gain.
    pub tol: f64,
    pub max_iter: usize,
    pub var_floor: f64,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            restarts: 10,
            tol: 1e-7,
            max_iter: 1000,
            var_floor: 1e-10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComponentScore {
    pub k: usize,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmSelection {
    /// The BIC-minimizing mixture.
    pub selected: Gmm,
    /// Best fit for each component count.
    pub candidates: Vec<Gmm>,
    pub scores: Vec<ComponentScore>,
}

/// Fits mixtures with 1..=k_max components by EM (best of `restarts`
/// k-means++ initializations each) and selects the one with the smallest BIC.
pub fn fit_gmm(samples: &[f64], k_max: usize, opts: &EmOptions) -> Result<GmmSelection, GmmError> {
    if samples.is_empty() {
        return Err(GmmError::NoSamples);
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(GmmError::NonFinite);
    }
    let k_max = k_max.max(1);
    let need = 10 * k_max;
    if samples.len() < need {
        return Err(GmmError::InsufficientSamples {
            got: samples.len(),
            need,
            k_max,
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if var <= opts.var_floor {
        let mut g = Gmm::gaussian(mean, opts.var_floor)?;
        g.fit = Some(stats(&g, samples));
        let score = score_of(&g, 1);
        return Ok(GmmSelection {
            selected: g.clone(),
            candidates: vec![g],
            scores: vec![score],
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut candidates = Vec::with_capacity(k_max);
    let mut scores = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let restarts = if k == 1 { 1 } else { opts.restarts.max(1) };
        let best = (0..restarts)
            .map(|_| run_em(samples, k, &mut rng, opts).gmm)
            .max_by(|a, b| {
                let (la, lb) = (a.log_likelihood().unwrap(), b.log_likelihood().unwrap());
                la.total_cmp(&lb)
            })
            .expect("at least one restart");
        scores.push(score_of(&best, k));
        candidates.push(best);
    }
    let pick = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.bic.total_cmp(&b.1.bic))
        .map(|(i, _)| i)
        .unwrap();
    Ok(GmmSelection {
        selected: candidates[pick].clone(),
        candidates,
        scores,
    })
}

fn score_of(g: &Gmm, k: usize) -> ComponentScore {
    let f = g.fit.expect("fitted mixture");
    ComponentScore {
        k,
        log_likelihood: f.log_likelihood,
        aic: f.aic,
        bic: f.bic,
    }
}

fn n_params(k: usize) -> f64 {
    (3 * k - 1) as f64
}

fn stats(g: &Gmm, x: &[f64]) -> FitStats {
    let ll = log_likelihood(g, x);
    let n = x.len() as f64;
    let p = n_params(g.n_components());
    FitStats {
        log_likelihood: ll,
        aic: 2.0 * p - 2.0 * ll,
        bic: p * n.ln() - 2.0 * ll,
        n_samples: x.len(),
    }
}

fn log_likelihood(g: &Gmm, x: &[f64]) -> f64 {
    let comps = ComponentConsts::of(g);
    let mut buf = vec![0.0; g.n_components()];
    x.iter().map(|&xi| comps.log_terms(xi, &mut buf)).sum()
}

struct ComponentConsts {
    log_w: Vec<f64>,
    means: Vec<f64>,
    half_inv_var: Vec<f64>,
    log_norm: Vec<f64>,
}

impl ComponentConsts {
    fn of(g: &Gmm) -> Self {
        ComponentConsts {
            log_w: g.weights.iter().map(|w| w.ln()).collect(),
            means: g.means.clone(),
            half_inv_var: g.variances.iter().map(|v| 0.5 / v).collect(),
            log_norm: g.variances.iter().map(|v| -0.5 * (LN_2PI + v.ln())).collect(),
        }
    }

    /// Fills `out` with log(w_m N(x | m)) and returns their log-sum-exp.
    fn log_terms(&self, x: f64, out: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for m in 0..out.len() {
            let d = x - self.means[m];
            out[m] = self.log_w[m] + self.log_norm[m] - d * d * self.half_inv_var[m];
            max = max.max(out[m]);
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + out.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
    }
}

pub(crate) struct EmRun {
    pub gmm: Gmm,
    #[cfg_attr(not(test), allow(dead_code))]
    pub ll_history: Vec<f64>,
}

fn kmeans_pp<R: Rng>(x: &[f64], k: usize, rng: &mut R) -> Vec<f64> {
    let mut centers = vec![x[rng.random_range(0..x.len())]];
    let mut d2: Vec<f64> = x.iter().map(|v| (v - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            x[rng.random_range(0..x.len())]
        } else {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = x.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc >= target {
                    idx = i;
                    break;
                }
            }
            x[idx]
        };
        for (d, v) in d2.iter_mut().zip(x) {
            *d = d.min((v - next).powi(2));
        }
        centers.push(next);
    }
    centers
}

fn init_from_centers(x: &[f64], centers: &[f64], var_floor: f64) -> Gmm {
    let k = centers.len();
    let n = x.len() as f64;
    let mut count = vec![0.0; k];
    let mut sum = vec![0.0; k];
    let mut sq = vec![0.0; k];
    for &v in x {
        let m = (0..k)
            .min_by(|&a, &b| (v - centers[a]).abs().total_cmp(&(v - centers[b]).abs()))
            .unwrap();
        count[m] += 1.0;
        sum[m] += v;
        sq[m] += v * v;
    }
    let overall_mean = x.iter().sum::<f64>() / n;
    let overall_var = (x.iter().map(|v| (v - overall_mean).powi(2)).sum::<f64>() / n).max(var_floor);
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut vars = Vec::with_capacity(k);
    for m in 0..k {
        if count[m] < 2.0 {
            weights.push(1.0);
            means.push(centers[m]);
            vars.push(overall_var);
        } else {
            let mu = sum[m] / count[m];
            weights.push(count[m]);
            means.push(mu);
            vars.push((sq[m] / count[m] - mu * mu).max(var_floor));
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Gmm {
        weights,
        means,
        variances: vars,
        fit: None,
    }
}

/// One EM run from a k-means++ start. The log-likelihood is checked to be
/// non-decreasing at every iteration.
pub(crate) fn run_em<R: Rng>(x: &[f64], k: usize, rng: &mut R, opts: &EmOptions) -> EmRun {
    let n = x.len();
    let centers = kmeans_pp(x, k, rng);
    let mut g = init_from_centers(x, &centers, opts.var_floor);
    let mut resp = vec![0.0; n * k];
    let mut buf = vec![0.0; k];
    let mut history: Vec<f64> = Vec::new();

    for _ in 0..opts.max_iter {
        // E-step
        let comps = ComponentConsts::of(&g);
        let mut ll = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            let lse = comps.log_terms(xi, &mut buf);
            ll += lse;
            for m in 0..k {
                resp[i * k + m] = (buf[m] - lse).exp();
            }
        }
        if let Some(&prev) = history.last() {
            debug_assert!(
                ll >= prev - 1e-8 * (1.0 + prev.abs()),
                "EM log-likelihood decreased: {prev} -> {ll}"
            );
            history.push(ll);
            if ll - prev < opts.tol * n as f64 {
                break;
            }
        } else {
            history.push(ll);
        }
        // M-step
        let mut nk = vec![0.0; k];
        let mut sx = vec![0.0; k];
        for (i, &xi) in x.iter().enumerate() {
            for m in 0..k {
                let r = resp[i * k + m];
                nk[m] += r;
                sx[m] += r * xi;
            }
        }
        let means: Vec<f64> = (0..k)
            .map(|m| if nk[m] > 0.0 { sx[m] / nk[m] } else { g.means[m] })
            .collect();
        let mut sv = vec![0.0; k];
        for (i, &xi) in x.iter().enumerate() {
            for m in 0..k {
                sv[m] += resp[i * k + m] * (xi - means[m]).powi(2);
            }
        }
        let weights: Vec<f64> = nk.iter().map(|v| (v / n as f64).max(1e-300)).collect();
        let wsum: f64 = weights.iter().sum();
        g = Gmm {
            weights: weights.iter().map(|w| w / wsum).collect(),
            variances: (0..k)
                .map(|m| if nk[m] > 0.0 { (sv[m] / nk[m]).max(opts.var_floor) } else { g.variances[m] })
                .collect(),
            means,
            fit: None,
        };
    }
    g.fit = Some(stats(&g, x));
    history.push(g.fit.unwrap().log_likelihood);
    EmRun { gmm: g, ll_history: history }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloudy() -> Gmm {
        Gmm::new(
            vec![0.4024, 0.1080, 0.4896],
            vec![0.0024, 0.0688, 0.0168],
            vec![6.4572e-5, 0.0172, 9.4331e-4],
        )
        .unwrap()
    }

    #[test]
    fn moments_single_and_cloudy() {
        let g = Gmm::gaussian(0.3, 0.04).unwrap();
        let (m, v) = gmm_moments(&g);
        assert!((m - 0.3).abs() < 1e-15 && (v - 0.04).abs() < 1e-15);
        // direct evaluation of sum w_m mu_m on the cloudy-day parameters
        let (m, _) = gmm_moments(&cloudy());
        let expect = 0.4024 * 0.0024 + 0.1080 * 0.0688 + 0.4896 * 0.0168;
        assert!((m - expect).abs() < 1e-15);
        assert!((m - 0.01662).abs() < 1e-5);
    }

    #[test]
    fn sampling_edge_cases() {
        assert!(sample_gmm(&cloudy(), 0, 1).is_empty());
        let g = Gmm::gaussian(1.5, 0.25).unwrap();
        let n = 100_000;
        let s = sample_gmm(&g, n, 7);
        let mean = s.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.5).abs() < 3.0 * 0.5 / (n as f64).sqrt());
        assert_eq!(s[..10], sample_gmm(&g, 10, 7)[..]);
    }

    #[test]
    fn em_log_likelihood_non_decreasing() {
        let x = sample_gmm(&cloudy(), 3000, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 1..=4 {
            let run = run_em(&x, k, &mut rng, &EmOptions::default());
            for w in run.ll_history.windows(2) {
                assert!(w[1] >= w[0] - 1e-8 * (1.0 + w[0].abs()));
            }
        }
    }

    #[test]
    fn degenerate_data_single_component() {
        let sel = fit_gmm(&[2.0; 50], 3, &EmOptions::default()).unwrap();
        assert_eq!(sel.selected.n_components(), 1);
        assert_eq!(sel.selected.variances[0], 1e-10);
        assert_eq!(sel.selected.means[0], 2.0);
    }

    #[test]
    fn input_errors() {
        assert_eq!(fit_gmm(&[], 2, &EmOptions::default()), Err(GmmError::NoSamples));
        assert!(matches!(
            fit_gmm(&[1.0, 2.0, 3.0], 2, &EmOptions::default()),
            Err(GmmError::InsufficientSamples { need: 20, .. })
        ));
        assert!(Gmm::new(vec![0.5, 0.6], vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn single_gaussian_selects_one() {
        let g = Gmm::gaussian(0.0, 1e-4).unwrap();
        let x = sample_gmm(&g, 5000, 21);
        let sel = fit_gmm(&x, 4, &EmOptions::default()).unwrap();
        assert_eq!(sel.selected.n_components(), 1);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut g = cloudy();
        g.fit = Some(stats(&g, &sample_gmm(&g, 100, 1)));
        let text = serde_json::to_string(&g).unwrap();
        let back: Gmm = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
    }
}
