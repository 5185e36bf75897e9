#![allow(dead_code)]

use nma_outlier::data::{Arm, NetworkDataset, Study};
use nma_outlier::mcmc::LogTarget;
use nma_outlier::model::{BetaPrior, ModelSpec, ParameterState, PriorConfig};
use rand::seq::SliceRandom;
use rand::Rng;

/// ln C(n, r) by direct summation of logs.
pub fn ln_choose(n: u64, r: u64) -> f64 {
    let r = r.min(n - r);
    (0..r).map(|j| ((n - j) as f64).ln() - ((j + 1) as f64).ln()).sum()
}

/// Binomial log-pmf with the success probability given on the logit scale.
pub fn binom_ln_pmf_logit(r: u64, n: u64, lp: f64) -> f64 {
    let p = 1.0 / (1.0 + (-lp).exp());
    let q = 1.0 / (1.0 + lp.exp());
    let mut out = ln_choose(n, r);
    if r > 0 {
        out += r as f64 * p.ln();
    }
    if n > r {
        out += (n - r) as f64 * q.ln();
    }
    out
}

/// Arm-by-arm log-likelihood written from the model definition.
pub fn brute_force_log_likelihood(ds: &NetworkDataset, st: &ParameterState, spec: &ModelSpec) -> f64 {
    let th = |k: usize| if k == 1 { 0.0 } else { st.theta[k - 2] };
    let mut total = 0.0;
    for (i, s) in ds.studies().iter().enumerate() {
        let b = s.arms().iter().map(|a| a.treatment).min().unwrap();
        let mut c = 0;
        let mut study_ll = 0.0;
        for a in s.arms() {
            let lp = if a.treatment == b {
                st.mu[i]
            } else {
                let mut lp = st.mu[i] + th(a.treatment) - th(b) + st.delta[i][c];
                if spec.mean_shift_study() == Some(i) {
                    lp += st.eta.as_ref().unwrap()[c];
                }
                c += 1;
                lp
            };
            study_ll += binom_ln_pmf_logit(a.events, a.total, lp);
        }
        let w = spec
            .weight_slot(i)
            .map(|slot| st.weights.as_ref().unwrap()[slot])
            .unwrap_or(1.0);
        total += w * study_ll;
    }
    total
}

/// A random connected network with 2 to 5 treatments.
pub fn random_dataset<R: Rng>(rng: &mut R) -> NetworkDataset {
    loop {
        let k = rng.random_range(2..=5);
        let n_studies = rng.random_range(1..=8);
        let mut studies = Vec::new();
        for i in 0..n_studies {
            let arms_n = rng.random_range(2..=k.min(4));
            let mut ts: Vec<usize> = (1..=k).collect();
            ts.shuffle(rng);
            let arms = ts[..arms_n]
                .iter()
                .map(|&t| {
                    let n = rng.random_range(1..=400);
                    Arm::new(t, rng.random_range(0..=n), n).unwrap()
                })
                .collect();
            studies.push(Study::new(format!("s{i}"), arms).unwrap());
        }
        if let Ok(ds) = NetworkDataset::new(studies, k, None) {
            return ds;
        }
    }
}

/// A random model variant together with a random state for it.
pub fn random_model<R: Rng>(rng: &mut R, ds: &NetworkDataset) -> (ModelSpec, ParameterState) {
    let priors = PriorConfig::default();
    let spec = match rng.random_range(0..3) {
        0 => ModelSpec::standard(priors),
        1 => ModelSpec::mean_shift(rng.random_range(0..ds.num_studies()), priors),
        _ => {
            let mut idx: Vec<usize> = (0..ds.num_studies()).collect();
            idx.shuffle(rng);
            let m = rng.random_range(1..=idx.len());
            ModelSpec::downweighted(
                idx[..m].iter().map(|&i| (i, BetaPrior::moderate())).collect(),
                priors,
            )
        }
    };
    let mut st = ParameterState::zeros(ds, &spec);
    for m in &mut st.mu {
        *m = rng.random_range(-4.0..4.0);
    }
    for t in &mut st.theta {
        *t = rng.random_range(-3.0..3.0);
    }
    for d in st.delta.iter_mut().flatten() {
        *d = rng.random_range(-1.5..1.5);
    }
    st.tau2 = rng.random_range(0.0..2.0);
    if let Some(eta) = &mut st.eta {
        for e in eta {
            *e = rng.random_range(-2.0..2.0);
        }
    }
    if let Some(w) = &mut st.weights {
        for x in w {
            *x = rng.random_range(0.01..1.0);
        }
    }
    (spec, st)
}

/// One binomial arm, logit-scale intercept with a N(0, sd^2) prior.
pub struct InterceptToy {
    pub r: u64,
    pub n: u64,
    pub prior_sd: f64,
}

impl InterceptToy {
    pub fn log_unnormalised(&self, mu: f64) -> f64 {
        -0.5 * (mu / self.prior_sd).powi(2) + binom_ln_pmf_logit(self.r, self.n, mu)
    }

    /// Posterior mean and variance by trapezoid quadrature over `[lo, hi]`.
    pub fn quadrature_moments(&self, lo: f64, hi: f64) -> (f64, f64) {
        let m = 200_000;
        let h = (hi - lo) / m as f64;
        let peak = (0..=m)
            .map(|j| self.log_unnormalised(lo + j as f64 * h))
            .fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for j in 0..=m {
            let x = lo + j as f64 * h;
            let w = if j == 0 || j == m { 0.5 } else { 1.0 };
            let f = w * (self.log_unnormalised(x) - peak).exp();
            z += f;
            s1 += f * x;
            s2 += f * x * x;
        }
        let mean = s1 / z;
        (mean, s2 / z - mean * mean)
    }
}

impl LogTarget for InterceptToy {
    fn dim(&self) -> usize {
        1
    }
    fn log_prior(&self, x: &[f64]) -> f64 {
        -0.5 * (x[0] / self.prior_sd).powi(2)
            - self.prior_sd.ln()
            - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
    fn log_likelihood(&self, x: &[f64]) -> f64 {
        binom_ln_pmf_logit(self.r, self.n, x[0])
    }
    fn initial(&self) -> Vec<f64> {
        vec![0.0]
    }
}

/// One binomial arm with a uniform prior on the success probability,
/// sampled on the logit scale. Marginal likelihood is `1 / (n + 1)`.
pub struct BetaBinomialToy {
    pub r: u64,
    pub n: u64,
}

impl LogTarget for BetaBinomialToy {
    fn dim(&self) -> usize {
        1
    }
    fn log_prior(&self, x: &[f64]) -> f64 {
        // logistic density: the image of U(0, 1) under logit
        -x[0].abs() - 2.0 * (1.0 + (-x[0].abs()).exp()).ln()
    }
    fn log_likelihood(&self, x: &[f64]) -> f64 {
        binom_ln_pmf_logit(self.r, self.n, x[0])
    }
    fn initial(&self) -> Vec<f64> {
        vec![0.0]
    }
}

/// y_j ~ N(x_j, s_j^2) with independent N(0, p_j^2) priors.
pub struct GaussianToy {
    pub y: [f64; 2],
    pub s: [f64; 2],
    pub p: [f64; 2],
}

fn ln_norm(x: f64, m: f64, sd: f64) -> f64 {
    -0.5 * ((x - m) / sd).powi(2) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

impl GaussianToy {
    pub fn log_evidence(&self) -> f64 {
        (0..2)
            .map(|j| ln_norm(self.y[j], 0.0, (self.s[j].powi(2) + self.p[j].powi(2)).sqrt()))
            .sum()
    }

    /// Posterior mean and variance of each coordinate.
    pub fn posterior(&self) -> [(f64, f64); 2] {
        let f = |j: usize| {
            let prec = 1.0 / self.s[j].powi(2) + 1.0 / self.p[j].powi(2);
            (self.y[j] / self.s[j].powi(2) / prec, 1.0 / prec)
        };
        [f(0), f(1)]
    }
}

impl LogTarget for GaussianToy {
    fn dim(&self) -> usize {
        2
    }
    fn log_prior(&self, x: &[f64]) -> f64 {
        ln_norm(x[0], 0.0, self.p[0]) + ln_norm(x[1], 0.0, self.p[1])
    }
    fn log_likelihood(&self, x: &[f64]) -> f64 {
        ln_norm(self.y[0], x[0], self.s[0]) + ln_norm(self.y[1], x[1], self.s[1])
    }
    fn initial(&self) -> Vec<f64> {
        vec![0.0, 0.0]
    }
}

/// Monte Carlo standard error of a mean from chain traces, by batch means.
pub fn batch_mean_se(chains: &[Vec<f64>], batches_per_chain: usize) -> f64 {
    let mut means = Vec::new();
    for c in chains {
        let b = c.len() / batches_per_chain;
        for j in 0..batches_per_chain {
            let s = &c[j * b..(j + 1) * b];
            means.push(s.iter().sum::<f64>() / b as f64);
        }
    }
    let m = means.iter().sum::<f64>() / means.len() as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
    (var / means.len() as f64).sqrt()
}

/// Largest gap between an empirical CDF and `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}
