//! Posterior predictive checks and the per-study outlier report.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::NetworkDataset;
use crate::error::{NmaError, Result};
use crate::marglik::{bayes_factor, BayesFactor, BfEstimator, BfOptions};
use crate::mcmc::{derive_seed, sample, PosteriorSamples, SamplerConfig};
use crate::model::{
    binomial_log_pmf_logit, contrast, expit, linear_predictor_unchecked, ModelSpec,
    ParameterState, PriorConfig,
};
use crate::quadrature::log_binomial_normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyKind {
    Likelihood,
    Sdo,
    GelmanChi2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Discrepancy {
    pub kind: DiscrepancyKind,
    pub value: f64,
}

/// Which predictive distribution replicates and model-based discrepancies
/// refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveMode {
    /// Study effects are redrawn from their population distribution for
    /// every replicate, and discrepancies integrate them out.
    Marginal,
    /// Study effects are held at the posterior draw.
    Conditional,
}

/// Replicated event counts, per study and arm.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplicateDataset {
    pub events: Vec<Vec<u64>>,
}

impl ReplicateDataset {
    /// The observed counts as a "replicate", for evaluating discrepancies on
    /// the data through the same code path.
    pub fn observed(ds: &NetworkDataset) -> Self {
        Self {
            events: ds
                .studies()
                .iter()
                .map(|s| s.arms().iter().map(|a| a.events).collect())
                .collect(),
        }
    }

    pub fn study(&self, i: usize) -> &[u64] {
        &self.events[i]
    }

    /// Arm proportions in study order, then arm order.
    pub fn proportions(&self, ds: &NetworkDataset) -> Vec<f64> {
        ds.studies()
            .iter()
            .zip(&self.events)
            .flat_map(|(s, ev)| {
                s.arms()
                    .iter()
                    .zip(ev)
                    .map(|(a, &r)| r as f64 / a.total as f64)
            })
            .collect()
    }
}

/// Logit of the arm probability without the study effect.
fn fixed_predictor(state: &ParameterState, ds: &NetworkDataset, study: usize, pos: usize) -> f64 {
    let s = ds.study(study);
    match s.contrast_index(pos) {
        None => state.mu[study],
        Some(_) => state.mu[study] + contrast(&state.theta, s.baseline(), s.arms()[pos].treatment),
    }
}

/// Replicate dataset at `state`; the random stream is keyed by `(seed, draw)`.
pub fn replicate(
    ds: &NetworkDataset,
    state: &ParameterState,
    mode: PredictiveMode,
    seed: u64,
    draw: usize,
) -> ReplicateDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x7265_706c, draw as u64]));
    let spec = ModelSpec::standard(PriorConfig::default());
    let half_sd = (state.tau2 / 2.0).max(0.0).sqrt();
    let events = ds
        .studies()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let shared: f64 = rng.sample(StandardNormal);
            s.arms()
                .iter()
                .enumerate()
                .map(|(pos, arm)| {
                    let lp = match mode {
                        PredictiveMode::Conditional => {
                            linear_predictor_unchecked(state, s, i, pos, &spec)
                        }
                        PredictiveMode::Marginal => {
                            let base = fixed_predictor(state, ds, i, pos);
                            match s.contrast_index(pos) {
                                None => base,
                                Some(_) => {
                                    let own: f64 = rng.sample(StandardNormal);
                                    base + half_sd * (shared + own)
                                }
                            }
                        }
                    };
                    let p = expit(lp);
                    if p <= 0.0 {
                        0
                    } else if p >= 1.0 {
                        arm.total
                    } else {
                        rng.sample(Binomial::new(arm.total, p).expect("valid binomial"))
                    }
                })
                .collect()
        })
        .collect();
    ReplicateDataset { events }
}

/// Replicate at pooled draw `s` of `samples`.
pub fn replicate_from_samples(
    ds: &NetworkDataset,
    samples: &PosteriorSamples,
    s: usize,
    mode: PredictiveMode,
    seed: u64,
) -> Result<ReplicateDataset> {
    if s >= samples.total_draws() {
        return Err(NmaError::Dimension(format!(
            "draw {s} out of range ({} draws)",
            samples.total_draws()
        )));
    }
    let state = samples
        .state(s)
        .ok_or_else(|| NmaError::Config("samples do not come from the network sampler".into()))?;
    Ok(replicate(ds, &state, mode, seed, s))
}

/// Sum of the study's arm log-pmfs for counts `events` at `state`.
pub fn f_likelihood(
    events: &[u64],
    ds: &NetworkDataset,
    study: usize,
    state: &ParameterState,
    mode: PredictiveMode,
) -> Discrepancy {
    let s = ds.study(study);
    let spec = ModelSpec::standard(PriorConfig::default());
    let value = s
        .arms()
        .iter()
        .zip(events)
        .enumerate()
        .map(|(pos, (arm, &r))| match mode {
            PredictiveMode::Conditional => binomial_log_pmf_logit(
                r,
                arm.total,
                linear_predictor_unchecked(state, s, study, pos, &spec),
            ),
            PredictiveMode::Marginal => {
                let a = fixed_predictor(state, ds, study, pos);
                let v = if s.contrast_index(pos).is_some() { state.tau2 } else { 0.0 };
                log_binomial_normal(r, arm.total, a, 0.0, v)
            }
        })
        .sum();
    Discrepancy {
        kind: DiscrepancyKind::Likelihood,
        value,
    }
}

/// Median and median absolute deviation of a proportion pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoolStats {
    pub median: f64,
    pub mad: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn pool_stats(pool: &[f64]) -> Result<PoolStats> {
    if pool.is_empty() {
        return Err(NmaError::DegeneratePool);
    }
    let mut v = pool.to_vec();
    let med = median(&mut v);
    let mut dev: Vec<f64> = pool.iter().map(|x| (x - med).abs()).collect();
    let mad = median(&mut dev);
    if !(mad > 0.0) {
        return Err(NmaError::DegeneratePool);
    }
    Ok(PoolStats { median: med, mad })
}

/// Outlyingness of the proportions `xs` against precomputed pool statistics.
pub fn sdo_with(stats: &PoolStats, xs: &[f64]) -> Discrepancy {
    Discrepancy {
        kind: DiscrepancyKind::Sdo,
        value: xs.iter().map(|x| (x - stats.median).abs()).sum::<f64>() / stats.mad,
    }
}

/// Outlyingness of the pool entries in `range` against the whole pool.
pub fn f_sdo(pool: &[f64], range: Range<usize>) -> Result<Discrepancy> {
    let stats = pool_stats(pool)?;
    Ok(sdo_with(&stats, &pool[range]))
}

/// `sum (r - n p)^2 / (n p (1 - p))` over the study's arms.
pub fn f_gelman_chi2(
    events: &[u64],
    ds: &NetworkDataset,
    study: usize,
    state: &ParameterState,
    mode: PredictiveMode,
) -> Result<Discrepancy> {
    let s = ds.study(study);
    let spec = ModelSpec::standard(PriorConfig::default());
    let mut value = 0.0;
    for (pos, (arm, &r)) in s.arms().iter().zip(events).enumerate() {
        let p = match mode {
            PredictiveMode::Conditional => {
                expit(linear_predictor_unchecked(state, s, study, pos, &spec))
            }
            PredictiveMode::Marginal => {
                let a = fixed_predictor(state, ds, study, pos);
                if s.contrast_index(pos).is_some() && state.tau2 > 0.0 {
                    log_binomial_normal(1, 1, a, 0.0, state.tau2).exp()
                } else {
                    expit(a)
                }
            }
        };
        if !(p > 0.0 && p < 1.0) {
            return Err(NmaError::BoundaryProbability {
                study: s.id().to_string(),
                prob: p,
            });
        }
        let n = arm.total as f64;
        value += (r as f64 - n * p).powi(2) / (n * p * (1.0 - p));
    }
    Ok(Discrepancy {
        kind: DiscrepancyKind::GelmanChi2,
        value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PPPValue {
    pub study: String,
    pub kind: DiscrepancyKind,
    pub value: f64,
    pub num_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcOptions {
    pub mode: PredictiveMode,
    /// Score replicates against the observed median/MAD instead of their own.
    pub freeze_pool: bool,
    /// Use at most this many evenly spaced posterior draws.
    pub max_draws: Option<usize>,
    /// Minimum number of draws required.
    pub min_draws: usize,
    pub seed: u64,
}

impl Default for PpcOptions {
    fn default() -> Self {
        Self {
            mode: PredictiveMode::Marginal,
            freeze_pool: false,
            max_draws: Some(4000),
            min_draws: 1000,
            seed: 1,
        }
    }
}

/// The three p-values of one study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyPValues {
    pub p_l: PPPValue,
    pub p_sdo: PPPValue,
    pub p_g: PPPValue,
}

fn draw_indices(total: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m > 0 && total > m => {
            let stride = total.div_ceil(m);
            (0..total).step_by(stride).collect()
        }
        _ => (0..total).collect(),
    }
}

/// Posterior predictive p-values of every study for all three discrepancies.
/// One replicate dataset per posterior draw is shared by all studies.
pub fn ppp_values(
    ds: &NetworkDataset,
    samples: &PosteriorSamples,
    opts: &PpcOptions,
) -> Result<Vec<StudyPValues>> {
    let layout = samples
        .layout()
        .ok_or_else(|| NmaError::Config("samples do not come from the network sampler".into()))?;
    let draws = draw_indices(samples.total_draws(), opts.max_draws);
    if draws.len() < opts.min_draws {
        return Err(NmaError::Config(format!(
            "posterior predictive p-values need at least {} draws, got {}",
            opts.min_draws,
            draws.len()
        )));
    }
    let observed = ReplicateDataset::observed(ds);
    let obs_pool = observed.proportions(ds);
    let obs_stats = pool_stats(&obs_pool)?;
    let props = ds.observed_proportions();
    let n = ds.num_studies();
    let obs_sdo: Vec<f64> = (0..n)
        .map(|i| sdo_with(&obs_stats, &obs_pool[props.study_range(i)]).value)
        .collect();

    let counts = draws
        .par_iter()
        .map(|&s| -> Result<Vec<[u32; 3]>> {
            let state = layout.unflatten(samples.pooled_draw(s));
            let rep = replicate(ds, &state, opts.mode, opts.seed, s);
            let rep_pool = rep.proportions(ds);
            let rep_stats = if opts.freeze_pool {
                obs_stats
            } else {
                pool_stats(&rep_pool)?
            };
            (0..n)
                .map(|i| {
                    let fl_obs = f_likelihood(observed.study(i), ds, i, &state, opts.mode).value;
                    let fl_rep = f_likelihood(rep.study(i), ds, i, &state, opts.mode).value;
                    let sdo_rep = sdo_with(&rep_stats, &rep_pool[props.study_range(i)]).value;
                    let g_obs = f_gelman_chi2(observed.study(i), ds, i, &state, opts.mode)?.value;
                    let g_rep = f_gelman_chi2(rep.study(i), ds, i, &state, opts.mode)?.value;
                    Ok([
                        u32::from(fl_rep <= fl_obs),
                        u32::from(sdo_rep >= obs_sdo[i]),
                        u32::from(g_rep >= g_obs),
                    ])
                })
                .collect()
        })
        .try_reduce(
            || vec![[0u32; 3]; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    for k in 0..3 {
                        x[k] += y[k];
                    }
                }
                Ok(a)
            },
        )?;

    let total = draws.len();
    let make = |i: usize, kind, c: u32| PPPValue {
        study: ds.study(i).id().to_string(),
        kind,
        value: c as f64 / total as f64,
        num_draws: total,
    };
    Ok(counts
        .iter()
        .enumerate()
        .map(|(i, c)| StudyPValues {
            p_l: make(i, DiscrepancyKind::Likelihood, c[0]),
            p_sdo: make(i, DiscrepancyKind::Sdo, c[1]),
            p_g: make(i, DiscrepancyKind::GelmanChi2, c[2]),
        })
        .collect())
}

/// p-value of one study and discrepancy.
pub fn ppp_value(
    ds: &NetworkDataset,
    samples: &PosteriorSamples,
    study: usize,
    kind: DiscrepancyKind,
    opts: &PpcOptions,
) -> Result<PPPValue> {
    if study >= ds.num_studies() {
        return Err(NmaError::Dimension(format!("study index {study} out of range")));
    }
    let mut all = ppp_values(ds, samples, opts)?;
    let row = all.swap_remove(study);
    Ok(match kind {
        DiscrepancyKind::Likelihood => row.p_l,
        DiscrepancyKind::Sdo => row.p_sdo,
        DiscrepancyKind::GelmanChi2 => row.p_g,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionThresholds {
    pub bf: f64,
    pub p: f64,
}

impl Default for DetectionThresholds {
    fn default() -> Self {
        Self { bf: 3.2, p: 0.05 }
    }
}

impl DetectionThresholds {
    pub fn flag(&self, bf: &BayesFactor, p: &StudyPValues) -> bool {
        bf.value > self.bf || [&p.p_l, &p.p_sdo, &p.p_g].iter().any(|v| v.value < self.p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRow {
    pub study: String,
    pub bayes_factor: BayesFactor,
    pub p_l: PPPValue,
    pub p_sdo: PPPValue,
    pub p_g: PPPValue,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub rows: Vec<DetectionRow>,
    pub thresholds: DetectionThresholds,
    pub max_rhat: Option<(String, f64)>,
}

impl DetectionReport {
    pub fn flagged(&self) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|r| r.flagged)
            .map(|r| r.study.as_str())
            .collect()
    }

    pub fn row(&self, study: &str) -> Option<&DetectionRow> {
        self.rows.iter().find(|r| r.study == study)
    }

    /// Flat CSV: `study,bf,bf_class,p_L,p_SDO,p_G,flagged`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["study", "bf", "bf_class", "p_L", "p_SDO", "p_G", "flagged"])?;
        for r in &self.rows {
            let bf = if r.bayes_factor.lower_bound {
                format!(">{}", r.bayes_factor.value)
            } else {
                r.bayes_factor.value.to_string()
            };
            w.write_record([
                r.study.clone(),
                bf,
                r.bayes_factor.evidence.to_string(),
                r.p_l.value.to_string(),
                r.p_sdo.value.to_string(),
                r.p_g.value.to_string(),
                r.flagged.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| NmaError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectOptions {
    pub priors: PriorConfig,
    pub estimator: BfEstimator,
    pub bf: BfOptions,
    pub ppc: PpcOptions,
    pub thresholds: DetectionThresholds,
    /// Abort when any scalar of the standard fit exceeds this split R-hat.
    pub rhat_limit: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            priors: PriorConfig::default(),
            estimator: BfEstimator::SavageDickey,
            bf: BfOptions::default(),
            ppc: PpcOptions::default(),
            thresholds: DetectionThresholds::default(),
            rhat_limit: 1.1,
        }
    }
}

/// Diagnostic error when any scalar's split R-hat exceeds `limit`.
pub fn check_rhat(samples: &PosteriorSamples, limit: f64) -> Result<()> {
    if let Some((name, r)) = samples.max_rhat() {
        if r > limit {
            let mut bad: Vec<String> = samples
                .diagnostics
                .iter()
                .filter_map(|d| d.rhat.filter(|&r| r > limit).map(|r| format!("{}={r:.3}", d.name)))
                .collect();
            bad.truncate(20);
            return Err(NmaError::Diagnostic(format!(
                "split R-hat {r:.3} on {name} exceeds {limit}; offending scalars: {}",
                bad.join(", ")
            )));
        }
    }
    Ok(())
}

/// Fit the standard model, compute every study's p-values from its draws,
/// run the per-study Bayes factor test, and flag studies.
pub fn detect(ds: &NetworkDataset, cfg: &SamplerConfig, opts: &DetectOptions) -> Result<DetectionReport> {
    detect_with_samples(ds, cfg, opts).map(|(report, _)| report)
}

/// [`detect`], also returning the standard-model draws.
pub fn detect_with_samples(
    ds: &NetworkDataset,
    cfg: &SamplerConfig,
    opts: &DetectOptions,
) -> Result<(DetectionReport, PosteriorSamples)> {
    let spec = ModelSpec::standard(opts.priors.clone());
    let samples = sample(ds, &spec, cfg)?;
    check_rhat(&samples, opts.rhat_limit)?;
    let ppc = PpcOptions {
        seed: derive_seed(cfg.seed, &[0x7070]),
        ..opts.ppc.clone()
    };
    let pvals = ppp_values(ds, &samples, &ppc)?;

    let bfs: Vec<BayesFactor> = (0..ds.num_studies())
        .into_par_iter()
        .map(|i| {
            let study_cfg = SamplerConfig {
                seed: derive_seed(cfg.seed, &[0xbf, i as u64]),
                ..cfg.clone()
            };
            match bayes_factor(ds, i, &opts.priors, &study_cfg, opts.estimator, &opts.bf) {
                Err(NmaError::BeyondEstimableRange { lower_bound, .. }) => {
                    let mut bf = BayesFactor::new(
                        ds.study(i).id(),
                        lower_bound.ln(),
                        opts.estimator,
                        f64::INFINITY,
                        opts.priors.eta_prior_sd(),
                        &opts.bf.thresholds,
                    );
                    bf.lower_bound = true;
                    Ok(bf)
                }
                other => other,
            }
        })
        .collect::<Result<_>>()?;

    let rows = bfs
        .into_iter()
        .zip(pvals)
        .map(|(bf, p)| DetectionRow {
            study: bf.study.clone(),
            flagged: opts.thresholds.flag(&bf, &p),
            bayes_factor: bf,
            p_l: p.p_l,
            p_sdo: p.p_sdo,
            p_g: p.p_g,
        })
        .collect();
    let report = DetectionReport {
        rows,
        thresholds: opts.thresholds,
        max_rhat: samples.max_rhat(),
    };
    Ok((report, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sdo_hand_example() {
        let pool = [0.1, 0.2, 0.3, 0.4, 0.5];
        let st = pool_stats(&pool).unwrap();
        assert!((st.median - 0.3).abs() < 1e-15);
        assert!((st.mad - 0.1).abs() < 1e-15);
        assert!((f_sdo(&pool, 4..5).unwrap().value - 2.0).abs() < 1e-12);
        assert_eq!(f_sdo(&pool, 2..3).unwrap().value, 0.0);
    }

    #[test]
    fn sdo_rejects_constant_pool() {
        assert!(matches!(
            f_sdo(&[0.2; 6], 0..2),
            Err(NmaError::DegeneratePool)
        ));
    }

    #[test]
    fn thinning_is_even() {
        assert_eq!(draw_indices(10, Some(4)), vec![0, 3, 6, 9]);
        assert_eq!(draw_indices(8, Some(4)), vec![0, 2, 4, 6]);
        assert_eq!(draw_indices(3, None), vec![0, 1, 2]);
    }
}
