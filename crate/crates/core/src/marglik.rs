//! Marginal likelihoods (stepping-stone) and mean-shift Bayes factors
//! (stepping-stone ratio or Savage–Dickey density ratio).

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::NetworkDataset;
use crate::error::{NmaError, Result};
use crate::mcmc::diagnostics::ess;
use crate::mcmc::{derive_seed, sample_tempered, NmaSampler, PosteriorSamples, SamplerConfig};
use crate::model::{
    binomial_log_pmf_logit, cholesky, contrast, normal_ln_pdf, ModelSpec, ParameterState,
    PriorConfig,
};
use crate::quadrature::log_binomial_normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BfEstimator {
    SteppingStone,
    SavageDickey,
}

impl std::str::FromStr for BfEstimator {
    type Err = NmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stepping_stone" | "stepping-stone" | "ss" => Ok(Self::SteppingStone),
            "savage_dickey" | "savage-dickey" | "sd" => Ok(Self::SavageDickey),
            other => Err(NmaError::Config(format!("unknown Bayes factor estimator '{other}'"))),
        }
    }
}

/// How the posterior density of the shift parameters at zero is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMethod {
    /// Average over draws of the conditional density of the shifts at zero
    /// given the remaining parameters, with the tested study's random effect
    /// integrated out for two-arm studies.
    Conditional,
    /// Moment-matched multivariate normal, switching to a kernel estimate
    /// when the draws fail a skewness/kurtosis screen.
    Normal,
    /// Product-Gaussian kernel density estimate.
    Kde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceClass {
    FavorsNull,
    Weak,
    Moderate,
    Strong,
    Decisive,
}

impl fmt::Display for EvidenceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::FavorsNull => "favors_null",
            Self::Weak => "weak",
            Self::Moderate => "moderate",
            Self::Strong => "strong",
            Self::Decisive => "decisive",
        };
        f.write_str(s)
    }
}

/// Upper edges of the Kass–Raftery classes on the BF_{1:0} scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceThresholds {
    /// Below this the data favour the null.
    pub null: f64,
    /// `(null, weak]` is weak evidence.
    pub weak: f64,
    pub moderate: f64,
    /// Above this the evidence is decisive.
    pub strong: f64,
}

impl Default for EvidenceThresholds {
    fn default() -> Self {
        Self {
            null: 1.0,
            weak: 3.2,
            moderate: 10.0,
            strong: 100.0,
        }
    }
}

impl EvidenceThresholds {
    pub fn classify(&self, bf: f64) -> EvidenceClass {
        if bf < self.null {
            EvidenceClass::FavorsNull
        } else if bf <= self.weak {
            EvidenceClass::Weak
        } else if bf <= self.moderate {
            EvidenceClass::Moderate
        } else if bf <= self.strong {
            EvidenceClass::Strong
        } else {
            EvidenceClass::Decisive
        }
    }
}

/// `BF_{1:0}` of the mean-shift model for one study against the standard
/// model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesFactor {
    pub study: String,
    pub value: f64,
    pub log_value: f64,
    pub estimator: BfEstimator,
    /// Monte Carlo standard error of `log_value`.
    pub mc_error: f64,
    /// Prior standard deviation of each shift parameter.
    pub eta_prior_sd: f64,
    pub evidence: EvidenceClass,
    /// True when `value` is only a lower bound (density at zero below the
    /// resolution of the kernel estimate).
    #[serde(default)]
    pub lower_bound: bool,
}

impl BayesFactor {
    pub fn new(
        study: impl Into<String>,
        log_value: f64,
        estimator: BfEstimator,
        mc_error: f64,
        eta_prior_sd: f64,
        thresholds: &EvidenceThresholds,
    ) -> Self {
        let value = log_value.exp();
        Self {
            study: study.into(),
            value,
            log_value,
            estimator,
            mc_error,
            eta_prior_sd,
            evidence: thresholds.classify(value),
            lower_bound: false,
        }
    }
}

/// Stepping-stone estimate of a log marginal likelihood.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogMarginal {
    pub value: f64,
    pub mc_error: f64,
    pub rungs: Vec<RungEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RungEstimate {
    pub from: f64,
    pub to: f64,
    pub log_ratio: f64,
    pub variance: f64,
}

/// `n` temperatures `t_j = (j / (n - 1))^3`.
pub fn default_ladder(n: usize) -> Vec<f64> {
    assert!(n >= 2, "a ladder needs at least two rungs");
    let last = (n - 1) as f64;
    (0..n).map(|j| (j as f64 / last).powi(3)).collect()
}

pub fn validate_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.len() < 2 || ladder[0] != 0.0 || *ladder.last().unwrap_or(&0.0) != 1.0 {
        return Err(NmaError::Config(
            "temperature ladder must start at 0 and end at 1".into(),
        ));
    }
    if ladder.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(NmaError::Config("temperature ladder must be strictly increasing".into()));
    }
    Ok(())
}

/// `ln mean exp(x)` over all chains, with the delta-method variance of the
/// estimate using the effective sample size of `exp(x)`.
fn log_mean_exp_with_var(chains: &[Vec<f64>]) -> (f64, f64) {
    let max = chains
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let scaled: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| c.iter().map(|x| (x - max).exp()).collect())
        .collect();
    let all: Vec<f64> = scaled.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let n_eff = ess(&scaled).unwrap_or(n).max(1.0);
    (max + mean.ln(), var / n_eff / (mean * mean))
}

/// Stepping-stone estimator over `ladder`. `sample_at(t, cfg)` must return
/// draws from `prior * likelihood^t` carrying untempered log-likelihoods.
/// Rungs are sampled in parallel, each with its own derived seed.
pub fn stepping_stone<F>(sample_at: F, cfg: &SamplerConfig, ladder: &[f64]) -> Result<LogMarginal>
where
    F: Fn(f64, &SamplerConfig) -> Result<PosteriorSamples> + Sync,
{
    validate_ladder(ladder)?;
    let rungs: Vec<RungEstimate> = (0..ladder.len() - 1)
        .into_par_iter()
        .map(|j| {
            let rung_cfg = SamplerConfig {
                seed: derive_seed(cfg.seed, &[0x5757, j as u64]),
                ..cfg.clone()
            };
            let samples = sample_at(ladder[j], &rung_cfg)?;
            let dt = ladder[j + 1] - ladder[j];
            let scaled: Vec<Vec<f64>> = (0..samples.num_chains())
                .map(|c| samples.log_likelihood(c).iter().map(|l| dt * l).collect())
                .collect();
            let (log_ratio, variance) = log_mean_exp_with_var(&scaled);
            if !log_ratio.is_finite() || !variance.is_finite() {
                return Err(NmaError::NonFinite(format!(
                    "stepping-stone rung {} -> {}",
                    ladder[j],
                    ladder[j + 1]
                )));
            }
            Ok(RungEstimate {
                from: ladder[j],
                to: ladder[j + 1],
                log_ratio,
                variance,
            })
        })
        .collect::<Result<_>>()?;
    let value = rungs.iter().map(|r| r.log_ratio).sum();
    let mc_error = rungs.iter().map(|r| r.variance).sum::<f64>().sqrt();
    Ok(LogMarginal {
        value,
        mc_error,
        rungs,
    })
}

/// Stepping-stone `ln P(D | model)` for a network model.
pub fn log_marginal_stepping_stone(
    ds: &NetworkDataset,
    spec: &ModelSpec,
    cfg: &SamplerConfig,
    ladder: &[f64],
) -> Result<LogMarginal> {
    spec.validate(ds)?;
    stepping_stone(|t, c| sample_tempered(ds, spec, c, t), cfg, ladder)
}

/// Options for the per-study Bayes factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfOptions {
    pub method: DensityMethod,
    /// Cap on the number of draws used by the density estimate.
    pub max_draws: usize,
    pub ladder: Vec<f64>,
    pub thresholds: EvidenceThresholds,
}

impl Default for BfOptions {
    fn default() -> Self {
        Self {
            method: DensityMethod::Conditional,
            max_draws: 4000,
            ladder: default_ladder(16),
            thresholds: EvidenceThresholds::default(),
        }
    }
}

/// Posterior density of the shift vector at zero, estimated from draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityAtZero {
    pub log_density: f64,
    pub mc_error: f64,
    /// The method actually used after the normality screen.
    pub method: DensityMethod,
}

fn moments(x: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - m;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let skew = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    let kurt = if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 };
    (m, m2, skew, kurt)
}

fn log_normal_at_zero(draws: &[&[f64]]) -> Result<f64> {
    let n = draws.len() as f64;
    let d = draws[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| draws.iter().map(|x| x[j]).sum::<f64>() / n)
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for x in draws {
        for a in 0..d {
            for b in 0..=a {
                cov[a][b] += (x[a] - mean[a]) * (x[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            cov[a][b] /= n - 1.0;
            cov[b][a] = cov[a][b];
        }
    }
    let l = cholesky(&cov)
        .filter(|l| (0..d).all(|i| l[i][i] > 0.0))
        .ok_or_else(|| NmaError::Degenerate("shift draws have a singular covariance".into()))?;
    let mut z = vec![0.0; d];
    for i in 0..d {
        let mut s = -mean[i];
        for k in 0..i {
            s -= l[i][k] * z[k];
        }
        z[i] = s / l[i][i];
    }
    let logdet: f64 = (0..d).map(|i| l[i][i].ln()).sum();
    Ok(-0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln()
        - logdet
        - 0.5 * z.iter().map(|v| v * v).sum::<f64>())
}

/// Product-Gaussian KDE at zero with Scott bandwidths. Returns the log
/// density and the log of the smallest resolvable density.
fn log_kde_at_zero(draws: &[&[f64]]) -> Result<(f64, f64)> {
    let n = draws.len();
    let d = draws[0].len();
    let factor = (n as f64).powf(-1.0 / (d as f64 + 4.0));
    let h: Vec<f64> = (0..d)
        .map(|j| {
            let col: Vec<f64> = draws.iter().map(|x| x[j]).collect();
            moments(&col).1.sqrt() * factor
        })
        .collect();
    if h.iter().any(|&b| !(b > 0.0)) {
        return Err(NmaError::Degenerate("shift draws are constant".into()));
    }
    let norm = -(n as f64).ln()
        - h.iter().map(|b| b.ln()).sum::<f64>()
        - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
    let exps: Vec<f64> = draws
        .iter()
        .map(|x| {
            -0.5 * x
                .iter()
                .zip(&h)
                .map(|(v, b)| (v / b) * (v / b))
                .sum::<f64>()
        })
        .collect();
    let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = exps.iter().map(|e| (e - max).exp()).sum();
    Ok((norm + max + sum.ln(), norm))
}

/// Posterior density of the shift vector at zero from per-chain draws.
/// `Conditional` is not available here; use [`bayes_factor_savage_dickey`].
pub fn density_at_zero(chains: &[Vec<Vec<f64>>], method: DensityMethod) -> Result<DensityAtZero> {
    let pooled: Vec<&[f64]> = chains.iter().flatten().map(Vec::as_slice).collect();
    if pooled.len() < 100 {
        return Err(NmaError::Config(format!(
            "density estimate needs at least 100 draws, got {}",
            pooled.len()
        )));
    }
    let d = pooled[0].len();
    let method = match method {
        DensityMethod::Conditional => {
            return Err(NmaError::Config(
                "the conditional estimator needs the full model state".into(),
            ))
        }
        DensityMethod::Normal => {
            let rejected = (0..d).any(|j| {
                let col: Vec<f64> = pooled.iter().map(|x| x[j]).collect();
                let (_, _, skew, kurt) = moments(&col);
                skew.abs() > 0.5 || kurt.abs() > 1.0
            });
            if rejected {
                DensityMethod::Kde
            } else {
                DensityMethod::Normal
            }
        }
        DensityMethod::Kde => DensityMethod::Kde,
    };
    let estimate = |draws: &[&[f64]]| -> Result<(f64, f64)> {
        match method {
            DensityMethod::Normal => Ok((log_normal_at_zero(draws)?, f64::NEG_INFINITY)),
            _ => log_kde_at_zero(draws),
        }
    };
    let (log_density, resolution) = estimate(&pooled)?;
    if log_density < f64::MIN_POSITIVE.ln() {
        return Err(NmaError::BeyondEstimableRange {
            study: String::new(),
            lower_bound: (-resolution).exp(),
        });
    }
    let batches = 20;
    let size = pooled.len() / batches;
    let mut vals = Vec::with_capacity(batches);
    for b in 0..batches {
        if let Ok((v, _)) = estimate(&pooled[b * size..(b + 1) * size]) {
            if v.is_finite() {
                vals.push(v);
            }
        }
    }
    let mc_error = if vals.len() >= 2 {
        let (_, var, _, _) = moments(&vals);
        (var * vals.len() as f64 / (vals.len() as f64 - 1.0) / vals.len() as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(DensityAtZero {
        log_density,
        mc_error,
        method,
    })
}

/// Savage–Dickey Bayes factor from shift draws and the prior log-density of
/// the shift vector at zero.
pub fn savage_dickey_from_draws(
    study: &str,
    chains: &[Vec<Vec<f64>>],
    log_prior_at_zero: f64,
    eta_prior_sd: f64,
    method: DensityMethod,
    thresholds: &EvidenceThresholds,
) -> Result<BayesFactor> {
    match density_at_zero(chains, method) {
        Ok(dz) => Ok(BayesFactor::new(
            study,
            log_prior_at_zero - dz.log_density,
            BfEstimator::SavageDickey,
            dz.mc_error,
            eta_prior_sd,
            thresholds,
        )),
        Err(NmaError::BeyondEstimableRange { lower_bound, .. }) => {
            Err(NmaError::BeyondEstimableRange {
                study: study.to_string(),
                lower_bound: lower_bound * log_prior_at_zero.exp(),
            })
        }
        Err(e) => Err(e),
    }
}

/// Log of the conditional posterior density of the shifts at zero given the
/// rest of the state.
fn log_conditional_at_zero(
    ds: &NetworkDataset,
    study: usize,
    st: &ParameterState,
    eta_var: f64,
) -> f64 {
    let s = ds.study(study);
    let b = s.baseline();
    let ln_prior0 = normal_ln_pdf(0.0, eta_var.sqrt());
    let integrate_delta = s.num_contrasts() == 1 && st.tau2 > 0.0;
    let mut total = 0.0;
    for (pos, arm) in s.arms().iter().enumerate() {
        let Some(c) = s.contrast_index(pos) else {
            continue;
        };
        let a = st.mu[study] + contrast(&st.theta, b, arm.treatment);
        total += if integrate_delta {
            ln_prior0 + log_binomial_normal(arm.events, arm.total, a, 0.0, st.tau2)
                - log_binomial_normal(arm.events, arm.total, a, 0.0, eta_var + st.tau2)
        } else {
            let a = a + st.delta[study][c];
            ln_prior0 + binomial_log_pmf_logit(arm.events, arm.total, a)
                - log_binomial_normal(arm.events, arm.total, a, 0.0, eta_var)
        };
    }
    total
}

/// Savage–Dickey `BF_{1:0}` for the mean-shift model of study index `study`.
pub fn bayes_factor_savage_dickey(
    ds: &NetworkDataset,
    study: usize,
    priors: &PriorConfig,
    cfg: &SamplerConfig,
    opts: &BfOptions,
) -> Result<BayesFactor> {
    cfg.validate()?;
    if study >= ds.num_studies() {
        return Err(NmaError::Dimension(format!("study index {study} out of range")));
    }
    let spec = ModelSpec::mean_shift(study, priors.clone());
    let sampler = NmaSampler::new(ds, &spec, 1.0)?;
    let id = ds.study(study).id().to_string();
    let esd = priors.eta_prior_sd();
    let m = ds.study(study).num_contrasts();
    let total = cfg.draws_per_chain() * cfg.chains;
    let stride = total.div_ceil(opts.max_draws.max(1)).max(1);
    let conditional = opts.method == DensityMethod::Conditional;

    let per_chain: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..cfg.chains)
        .into_par_iter()
        .map(|chain| {
            let mut cond = Vec::new();
            let mut etas = Vec::new();
            sampler.run_chain(cfg, chain, &mut |d| {
                if d.index % stride != 0 {
                    return;
                }
                if conditional {
                    cond.push(log_conditional_at_zero(ds, study, d.state, esd * esd));
                } else {
                    etas.push(d.state.eta.clone().expect("mean-shift state"));
                }
            })?;
            Ok((cond, etas))
        })
        .collect::<Result<_>>()?;

    if conditional {
        let chains: Vec<Vec<f64>> = per_chain.into_iter().map(|c| c.0).collect();
        let (log_post0, var) = log_mean_exp_with_var(&chains);
        let log_prior0 = m as f64 * normal_ln_pdf(0.0, esd);
        if !log_post0.is_finite() {
            return Err(NmaError::NonFinite(format!(
                "conditional density at zero for study {id}"
            )));
        }
        Ok(BayesFactor::new(
            id,
            log_prior0 - log_post0,
            BfEstimator::SavageDickey,
            var.sqrt(),
            esd,
            &opts.thresholds,
        ))
    } else {
        let chains: Vec<Vec<Vec<f64>>> = per_chain.into_iter().map(|c| c.1).collect();
        savage_dickey_from_draws(
            &id,
            &chains,
            m as f64 * normal_ln_pdf(0.0, esd),
            esd,
            opts.method,
            &opts.thresholds,
        )
    }
}

/// Stepping-stone `BF_{1:0}`: ratio of the mean-shift and standard
/// marginal likelihoods.
pub fn bayes_factor_stepping_stone(
    ds: &NetworkDataset,
    study: usize,
    priors: &PriorConfig,
    cfg: &SamplerConfig,
    opts: &BfOptions,
) -> Result<BayesFactor> {
    if study >= ds.num_studies() {
        return Err(NmaError::Dimension(format!("study index {study} out of range")));
    }
    let alt = ModelSpec::mean_shift(study, priors.clone());
    let null = ModelSpec::standard(priors.clone());
    let cfg1 = SamplerConfig {
        seed: derive_seed(cfg.seed, &[1]),
        ..cfg.clone()
    };
    let cfg0 = SamplerConfig {
        seed: derive_seed(cfg.seed, &[0]),
        ..cfg.clone()
    };
    let z1 = log_marginal_stepping_stone(ds, &alt, &cfg1, &opts.ladder)?;
    let z0 = log_marginal_stepping_stone(ds, &null, &cfg0, &opts.ladder)?;
    Ok(BayesFactor::new(
        ds.study(study).id(),
        z1.value - z0.value,
        BfEstimator::SteppingStone,
        (z1.mc_error.powi(2) + z0.mc_error.powi(2)).sqrt(),
        priors.eta_prior_sd(),
        &opts.thresholds,
    ))
}

/// Dispatch on `method`.
pub fn bayes_factor(
    ds: &NetworkDataset,
    study: usize,
    priors: &PriorConfig,
    cfg: &SamplerConfig,
    method: BfEstimator,
    opts: &BfOptions,
) -> Result<BayesFactor> {
    match method {
        BfEstimator::SavageDickey => bayes_factor_savage_dickey(ds, study, priors, cfg, opts),
        BfEstimator::SteppingStone => bayes_factor_stepping_stone(ds, study, priors, cfg, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_boundaries() {
        let t = EvidenceThresholds::default();
        assert_eq!(t.classify(0.5), EvidenceClass::FavorsNull);
        assert_eq!(t.classify(1.0), EvidenceClass::Weak);
        assert_eq!(t.classify(3.2), EvidenceClass::Weak);
        assert_eq!(t.classify(3.2000001), EvidenceClass::Moderate);
        assert_eq!(t.classify(100.0), EvidenceClass::Strong);
        assert_eq!(t.classify(150.0), EvidenceClass::Decisive);
    }

    #[test]
    fn ladder_shape_and_validation() {
        let l = default_ladder(16);
        assert_eq!(l.len(), 16);
        assert_eq!(l[0], 0.0);
        assert_eq!(l[15], 1.0);
        assert!((l[1] - (1.0f64 / 15.0).powi(3)).abs() < 1e-15);
        assert!(validate_ladder(&l).is_ok());
        assert!(validate_ladder(&[0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(validate_ladder(&[0.1, 1.0]).is_err());
        assert!(validate_ladder(&[0.0, 0.9]).is_err());
    }

    #[test]
    fn kde_and_normal_agree_on_gaussian_draws() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<Vec<f64>> = (0..20_000)
            .map(|_| vec![0.5 + rng.sample::<f64, _>(rand_distr::StandardNormal)])
            .collect();
        let truth = normal_ln_pdf(0.5, 1.0);
        let n = density_at_zero(&[draws.clone()], DensityMethod::Normal).unwrap();
        let k = density_at_zero(&[draws], DensityMethod::Kde).unwrap();
        assert_eq!(n.method, DensityMethod::Normal);
        assert!((n.log_density - truth).abs() < 0.03);
        assert!((k.log_density - truth).abs() < 0.05);
    }

    #[test]
    fn far_tail_kde_is_beyond_range() {
        let draws: Vec<Vec<f64>> = (0..1000).map(|i| vec![100.0 + (i as f64) * 1e-3]).collect();
        let err = savage_dickey_from_draws(
            "s",
            &[draws],
            normal_ln_pdf(0.0, 1.0),
            1.0,
            DensityMethod::Kde,
            &EvidenceThresholds::default(),
        )
        .unwrap_err();
        match err {
            NmaError::BeyondEstimableRange { study, lower_bound } => {
                assert_eq!(study, "s");
                assert!(lower_bound > 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
