//! Log-density of the random-effects network meta-analysis model and its two
//! variants: the per-study mean-shift model and the power-prior
//! down-weighted model.
//!
//! Parameterisation: `logit(pi_ik) = mu_i` on the baseline arm and
//! `mu_i + (theta_1k - theta_1b) + delta_i,bk (+ eta_bk)` on the others, with
//! `theta_11 = 0`. Study effects `delta_i` live in study-baseline coordinates
//! and follow a compound-symmetry normal with variance `tau2` and covariance
//! `tau2 / 2`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::data::{NetworkDataset, Study};
use crate::error::{NmaError, Result};

/// Scale on which the uniform heterogeneity prior is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauPriorScale {
    OnTau,
    OnTau2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Standard deviation of the normal priors on `mu`, `theta` and `eta`.
    pub normal_sd: f64,
    /// Upper bound of the uniform heterogeneity prior.
    pub tau_upper: f64,
    pub tau_prior_scale: TauPriorScale,
    /// Pin `tau2` to a value instead of placing a prior on it. With
    /// `Some(0.0)` the study effects vanish.
    #[serde(default)]
    pub fixed_tau2: Option<f64>,
    /// Standard deviation of the shift prior when it differs from `normal_sd`.
    #[serde(default)]
    pub eta_sd: Option<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            normal_sd: 1000f64.sqrt(),
            tau_upper: 5.0,
            tau_prior_scale: TauPriorScale::OnTau2,
            fixed_tau2: None,
            eta_sd: None,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.normal_sd > 0.0 && self.normal_sd.is_finite()) {
            return Err(NmaError::Config("normal_sd must be positive".into()));
        }
        if !(self.tau_upper > 0.0 && self.tau_upper.is_finite()) {
            return Err(NmaError::Config("tau_upper must be positive".into()));
        }
        if let Some(sd) = self.eta_sd {
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(NmaError::Config("eta_sd must be positive".into()));
            }
        }
        if let Some(t) = self.fixed_tau2 {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(NmaError::Config("fixed_tau2 must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// Log-density of the heterogeneity prior at `tau2`, on the configured scale.
    pub fn log_tau_prior(&self, tau2: f64) -> f64 {
        if let Some(fixed) = self.fixed_tau2 {
            return if tau2 == fixed { 0.0 } else { f64::NEG_INFINITY };
        }
        if !(tau2 >= 0.0) {
            return f64::NEG_INFINITY;
        }
        let value = match self.tau_prior_scale {
            TauPriorScale::OnTau2 => tau2,
            TauPriorScale::OnTau => tau2.sqrt(),
        };
        if value <= self.tau_upper {
            -self.tau_upper.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn eta_prior_sd(&self) -> f64 {
        self.eta_sd.unwrap_or(self.normal_sd)
    }

    /// Upper bound of `tau2` implied by the prior support.
    pub fn tau2_upper(&self) -> f64 {
        match self.tau_prior_scale {
            TauPriorScale::OnTau2 => self.tau_upper,
            TauPriorScale::OnTau => self.tau_upper * self.tau_upper,
        }
    }
}

/// Beta hyperparameters for a down-weighting factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

impl BetaPrior {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(NmaError::Config(format!(
                "beta hyperparameters must be positive, got ({a}, {b})"
            )));
        }
        Ok(Self { a, b })
    }

    /// Beta(3, 3): centred at one half.
    pub fn moderate() -> Self {
        Self { a: 3.0, b: 3.0 }
    }

    /// Beta(2, 5): mass concentrated below one half.
    pub fn severe() -> Self {
        Self { a: 2.0, b: 5.0 }
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn ln_pdf(&self, w: f64) -> f64 {
        if !(w > 0.0 && w < 1.0) {
            return f64::NEG_INFINITY;
        }
        (self.a - 1.0) * w.ln() + (self.b - 1.0) * (-w).ln_1p() - ln_beta(self.a, self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    Standard,
    /// Shift parameters on the contrasts of the study at this dataset index.
    MeanShift { study: usize },
    /// Power-prior weights on the listed studies (dataset indices).
    Downweighted { outliers: Vec<(usize, BetaPrior)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: ModelVariant,
    pub priors: PriorConfig,
}

impl ModelSpec {
    pub fn standard(priors: PriorConfig) -> Self {
        Self {
            variant: ModelVariant::Standard,
            priors,
        }
    }

    pub fn mean_shift(study: usize, priors: PriorConfig) -> Self {
        Self {
            variant: ModelVariant::MeanShift { study },
            priors,
        }
    }

    pub fn downweighted(outliers: Vec<(usize, BetaPrior)>, priors: PriorConfig) -> Self {
        Self {
            variant: ModelVariant::Downweighted { outliers },
            priors,
        }
    }

    pub fn validate(&self, ds: &NetworkDataset) -> Result<()> {
        self.priors.validate()?;
        match &self.variant {
            ModelVariant::Standard => Ok(()),
            ModelVariant::MeanShift { study } => {
                if *study >= ds.num_studies() {
                    return Err(NmaError::Config(format!(
                        "mean-shift study index {study} out of range"
                    )));
                }
                Ok(())
            }
            ModelVariant::Downweighted { outliers } => {
                if outliers.is_empty() {
                    return Err(NmaError::Config("down-weighting plan is empty".into()));
                }
                let mut seen = Vec::new();
                for (i, prior) in outliers {
                    if *i >= ds.num_studies() || seen.contains(i) {
                        return Err(NmaError::Config(format!(
                            "invalid or repeated down-weighted study index {i}"
                        )));
                    }
                    BetaPrior::new(prior.a, prior.b)?;
                    seen.push(*i);
                }
                Ok(())
            }
        }
    }

    pub fn mean_shift_study(&self) -> Option<usize> {
        match self.variant {
            ModelVariant::MeanShift { study } => Some(study),
            _ => None,
        }
    }

    /// Position of `study` in the weight vector, if it is down-weighted.
    pub fn weight_slot(&self, study: usize) -> Option<usize> {
        match &self.variant {
            ModelVariant::Downweighted { outliers } => {
                outliers.iter().position(|(i, _)| *i == study)
            }
            _ => None,
        }
    }
}

/// One point of the joint parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    /// Study baselines on the log-odds scale, one per study.
    pub mu: Vec<f64>,
    /// Basic parameters `theta_1k` for `k = 2..=K` (`theta[k - 2]`).
    pub theta: Vec<f64>,
    /// Study-specific relative effects in study-baseline coordinates.
    pub delta: Vec<Vec<f64>>,
    pub tau2: f64,
    /// Shift parameters for the contrasts of the tested study.
    pub eta: Option<Vec<f64>>,
    /// Down-weighting factors, aligned with the plan's outlier list.
    pub weights: Option<Vec<f64>>,
}

impl ParameterState {
    /// All-zero state with dimensions matching `ds` and `spec`.
    pub fn zeros(ds: &NetworkDataset, spec: &ModelSpec) -> Self {
        let eta = spec
            .mean_shift_study()
            .map(|i| vec![0.0; ds.study(i).num_contrasts()]);
        let weights = match &spec.variant {
            ModelVariant::Downweighted { outliers } => Some(vec![1.0; outliers.len()]),
            _ => None,
        };
        Self {
            mu: vec![0.0; ds.num_studies()],
            theta: vec![0.0; ds.num_treatments() - 1],
            delta: ds
                .studies()
                .iter()
                .map(|s| vec![0.0; s.num_contrasts()])
                .collect(),
            tau2: 0.0,
            eta,
            weights,
        }
    }

    pub fn check_dimensions(&self, ds: &NetworkDataset, spec: &ModelSpec) -> Result<()> {
        if self.mu.len() != ds.num_studies() {
            return Err(NmaError::Dimension(format!(
                "mu has {} entries for {} studies",
                self.mu.len(),
                ds.num_studies()
            )));
        }
        if self.theta.len() + 1 != ds.num_treatments() {
            return Err(NmaError::Dimension(format!(
                "theta has {} entries for {} treatments",
                self.theta.len(),
                ds.num_treatments()
            )));
        }
        if self.delta.len() != ds.num_studies()
            || self
                .delta
                .iter()
                .zip(ds.studies())
                .any(|(d, s)| d.len() != s.num_contrasts())
        {
            return Err(NmaError::Dimension("delta does not match study arms".into()));
        }
        match (spec.mean_shift_study(), &self.eta) {
            (Some(i), Some(eta)) if eta.len() == ds.study(i).num_contrasts() => {}
            (None, None) => {}
            _ => return Err(NmaError::Dimension("eta does not match the model".into())),
        }
        match (&spec.variant, &self.weights) {
            (ModelVariant::Downweighted { outliers }, Some(w)) if w.len() == outliers.len() => {}
            (ModelVariant::Downweighted { .. }, _) => {
                return Err(NmaError::Dimension("weights do not match the plan".into()))
            }
            (_, None) => {}
            (_, Some(_)) => {
                return Err(NmaError::Dimension(
                    "weights are only valid in the down-weighted model".into(),
                ))
            }
        }
        Ok(())
    }
}

/// `theta_1k` with `theta_11 = 0`; `k` is 1-based.
#[inline]
pub fn basic_effect(theta: &[f64], k: usize) -> f64 {
    if k == 1 {
        0.0
    } else {
        theta[k - 2]
    }
}

/// Relative effect of `k` versus `h` under consistency: `theta_1k - theta_1h`.
#[inline]
pub fn contrast(theta: &[f64], h: usize, k: usize) -> f64 {
    basic_effect(theta, k) - basic_effect(theta, h)
}

/// `logit(pi_ik)` for the arm at `arm_pos` of study `study`.
pub fn linear_predictor(
    state: &ParameterState,
    ds: &NetworkDataset,
    study: usize,
    arm_pos: usize,
    spec: &ModelSpec,
) -> Result<f64> {
    let s = ds
        .studies()
        .get(study)
        .ok_or_else(|| NmaError::Dimension(format!("study index {study} out of range")))?;
    if arm_pos >= s.num_arms() {
        return Err(NmaError::Dimension(format!(
            "arm {arm_pos} out of range for study {}",
            s.id()
        )));
    }
    state.check_dimensions(ds, spec)?;
    Ok(linear_predictor_unchecked(state, s, study, arm_pos, spec))
}

pub(crate) fn linear_predictor_unchecked(
    state: &ParameterState,
    s: &Study,
    study: usize,
    arm_pos: usize,
    spec: &ModelSpec,
) -> f64 {
    let mu = state.mu[study];
    match s.contrast_index(arm_pos) {
        None => mu,
        Some(c) => {
            let k = s.arms()[arm_pos].treatment;
            let mut lp = mu + contrast(&state.theta, s.baseline(), k) + state.delta[study][c];
            if spec.mean_shift_study() == Some(study) {
                if let Some(eta) = &state.eta {
                    lp += eta[c];
                }
            }
            lp
        }
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (1.0 + (-x.abs()).exp()).ln()
}

/// Inverse logit.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln C(n, r)`.
pub fn ln_binomial_coefficient(n: u64, r: u64) -> f64 {
    if r == 0 || r == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(r as f64 + 1.0) - ln_gamma((n - r) as f64 + 1.0)
}

/// Binomial log-pmf of `r` events out of `n` with success log-odds `lp`,
/// excluding the binomial coefficient.
#[inline]
pub fn binomial_kernel(r: u64, n: u64, lp: f64) -> f64 {
    r as f64 * lp - n as f64 * softplus(lp)
}

/// Full binomial log-pmf at log-odds `lp`.
pub fn binomial_log_pmf_logit(r: u64, n: u64, lp: f64) -> f64 {
    ln_binomial_coefficient(n, r) + binomial_kernel(r, n, lp)
}

/// Binomial log-pmf at probability `p`, exact at the boundaries.
pub fn binomial_log_pmf(r: u64, n: u64, p: f64) -> f64 {
    let c = ln_binomial_coefficient(n, r);
    let rf = r as f64;
    let mf = (n - r) as f64;
    let a = if r == 0 { 0.0 } else { rf * p.ln() };
    let b = if r == n { 0.0 } else { mf * (-p).ln_1p() };
    c + a + b
}

/// Per-arm log binomial coefficients for a dataset, computed once.
#[derive(Debug, Clone)]
pub struct BinomialConstants {
    per_study: Vec<Vec<f64>>,
}

impl BinomialConstants {
    pub fn new(ds: &NetworkDataset) -> Self {
        Self {
            per_study: ds
                .studies()
                .iter()
                .map(|s| {
                    s.arms()
                        .iter()
                        .map(|a| ln_binomial_coefficient(a.total, a.events))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn study(&self, i: usize) -> &[f64] {
        &self.per_study[i]
    }
}

/// Log-likelihood contribution of one study (no weight applied).
pub fn study_log_likelihood(
    state: &ParameterState,
    ds: &NetworkDataset,
    study: usize,
    spec: &ModelSpec,
    constants: &BinomialConstants,
) -> Result<f64> {
    let s = ds.study(study);
    let mut total = 0.0;
    for (pos, arm) in s.arms().iter().enumerate() {
        let lp = linear_predictor_unchecked(state, s, study, pos, spec);
        if !lp.is_finite() {
            return Err(NmaError::NonFinite(format!(
                "linear predictor for study {} arm {}",
                s.id(),
                arm.treatment
            )));
        }
        total += constants.study(study)[pos] + binomial_kernel(arm.events, arm.total, lp);
    }
    Ok(total)
}

/// Sum of binomial log-pmfs over all arms, with each down-weighted study's
/// contribution multiplied by its weight.
pub fn log_likelihood(state: &ParameterState, ds: &NetworkDataset, spec: &ModelSpec) -> Result<f64> {
    state.check_dimensions(ds, spec)?;
    let constants = BinomialConstants::new(ds);
    let mut total = 0.0;
    for i in 0..ds.num_studies() {
        let ll = study_log_likelihood(state, ds, i, spec, &constants)?;
        let w = match (spec.weight_slot(i), &state.weights) {
            (Some(slot), Some(w)) => w[slot],
            _ => 1.0,
        };
        total += w * ll;
    }
    Ok(total)
}

/// `ln N(x; 0, sd^2)`.
#[inline]
pub fn normal_ln_pdf(x: f64, sd: f64) -> f64 {
    -0.5 * (2.0 * PI).ln() - sd.ln() - 0.5 * (x / sd) * (x / sd)
}

/// Compound-symmetry covariance of a study's relative effects: `tau2` on the
/// diagonal and `tau2 / 2` elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomEffectsCovariance {
    pub tau2: f64,
    pub dimension: usize,
}

impl RandomEffectsCovariance {
    pub fn new(tau2: f64, dimension: usize) -> Self {
        Self { tau2, dimension }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.tau2
        } else {
            self.tau2 / 2.0
        }
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.dimension)
            .map(|i| (0..self.dimension).map(|j| self.entry(i, j)).collect())
            .collect()
    }

    /// Lower Cholesky factor of the explicit matrix; `None` if it is not
    /// positive semi-definite.
    pub fn cholesky(&self) -> Option<Vec<Vec<f64>>> {
        cholesky(&self.matrix())
    }

    /// `ln N(delta; 0, Psi)` using the closed form
    /// `Psi^-1 = (2 / tau2) (I - J / (d + 1))`, `|Psi| = (tau2 / 2)^d (d + 1)`.
    /// With `tau2 = 0` the density is a point mass at zero.
    pub fn log_density(&self, delta: &[f64]) -> f64 {
        let d = delta.len();
        if d == 0 {
            return 0.0;
        }
        if self.tau2 <= 0.0 {
            return if delta.iter().all(|&x| x == 0.0) {
                0.0
            } else {
                f64::NEG_INFINITY
            };
        }
        let (sum, sumsq) = delta
            .iter()
            .fold((0.0, 0.0), |(s, q), &x| (s + x, q + x * x));
        let df = d as f64;
        let quad = (sumsq - sum * sum / (df + 1.0)) / self.tau2;
        -0.5 * df * (2.0 * PI).ln() - 0.5 * (df * (self.tau2 / 2.0).ln() + (df + 1.0).ln()) - quad
    }
}

/// Dense Cholesky factorisation with a tolerance for semi-definite input.
pub fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let v = a[i][i] - s;
                if v < -1e-12 {
                    return None;
                }
                l[i][j] = v.max(0.0).sqrt();
            } else if l[j][j] > 0.0 {
                l[i][j] = (a[i][j] - s) / l[j][j];
            } else if (a[i][j] - s).abs() > 1e-12 {
                return None;
            }
        }
    }
    Some(l)
}

/// Sum of the prior log-densities: normal on `mu`, `theta`, `eta`; uniform
/// heterogeneity; compound-symmetry normal on each `delta_i`; beta on each
/// weight. Returns `-inf` outside the support.
pub fn log_prior(state: &ParameterState, spec: &ModelSpec) -> f64 {
    let p = &spec.priors;
    let tau_term = p.log_tau_prior(state.tau2);
    if tau_term == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sd = p.normal_sd;
    let mut total = tau_term;
    total += state.mu.iter().map(|&m| normal_ln_pdf(m, sd)).sum::<f64>();
    total += state.theta.iter().map(|&t| normal_ln_pdf(t, sd)).sum::<f64>();
    if let Some(eta) = &state.eta {
        let esd = p.eta_prior_sd();
        total += eta.iter().map(|&e| normal_ln_pdf(e, esd)).sum::<f64>();
    }
    for d in &state.delta {
        total += RandomEffectsCovariance::new(state.tau2, d.len()).log_density(d);
    }
    if let (ModelVariant::Downweighted { outliers }, Some(w)) = (&spec.variant, &state.weights) {
        for ((_, prior), &wj) in outliers.iter().zip(w) {
            total += prior.ln_pdf(wj);
        }
    }
    total
}

pub fn log_posterior_unnorm(
    state: &ParameterState,
    ds: &NetworkDataset,
    spec: &ModelSpec,
) -> Result<f64> {
    let lp = log_prior(state, spec);
    if lp == f64::NEG_INFINITY {
        state.check_dimensions(ds, spec)?;
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_likelihood(state, ds, spec)? + lp)
}
