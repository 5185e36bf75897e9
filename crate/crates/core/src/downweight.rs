//! Power-prior down-weighting of suspected outliers and comparison with the
//! full and exclusion analyses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::NetworkDataset;
use crate::error::{NmaError, Result};
use crate::mcmc::{quantile_sorted, sample, PosteriorSamples, SamplerConfig};
use crate::model::{basic_effect, BetaPrior, ModelSpec, PriorConfig};

/// Beta hyperparameters per down-weighted study id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownweightPlan {
    pub entries: BTreeMap<String, BetaPrior>,
}

impl DownweightPlan {
    pub fn new(entries: BTreeMap<String, BetaPrior>) -> Result<Self> {
        if entries.is_empty() {
            return Err(NmaError::Config("down-weighting plan is empty".into()));
        }
        for (id, p) in &entries {
            BetaPrior::new(p.a, p.b)
                .map_err(|e| NmaError::Config(format!("study {id}: {e}")))?;
        }
        Ok(Self { entries })
    }

    /// Every listed study with the same prior.
    pub fn uniform<S: AsRef<str>>(ids: &[S], prior: BetaPrior) -> Result<Self> {
        Self::new(
            ids.iter()
                .map(|s| (s.as_ref().to_string(), prior))
                .collect(),
        )
    }

    /// Parse `id=spec[,id=spec...]` where `spec` is `moderate`, `severe` or
    /// `a:b`. Ids may carry a `study` prefix (`study3` names study `3`).
    pub fn parse(text: &str, ds: &NetworkDataset) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| NmaError::Config(format!("plan entry '{item}' lacks '='")))?;
            let key = key.trim();
            let id = if ds.study_index(key).is_some() {
                key.to_string()
            } else {
                key.strip_prefix("study")
                    .filter(|rest| ds.study_index(rest).is_some())
                    .ok_or_else(|| NmaError::Config(format!("unknown study '{key}' in plan")))?
                    .to_string()
            };
            let prior = match value.trim() {
                "moderate" => BetaPrior::moderate(),
                "severe" => BetaPrior::severe(),
                other => {
                    let (a, b) = other.split_once(':').ok_or_else(|| {
                        NmaError::Config(format!("beta prior '{other}' is not moderate, severe or a:b"))
                    })?;
                    let parse = |s: &str| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| NmaError::Config(format!("bad beta parameter '{s}'")))
                    };
                    BetaPrior::new(parse(a)?, parse(b)?)?
                }
            };
            entries.insert(id, prior);
        }
        Self::new(entries)
    }

    /// Dataset indices paired with their priors.
    pub fn resolve(&self, ds: &NetworkDataset) -> Result<Vec<(usize, BetaPrior)>> {
        self.entries
            .iter()
            .map(|(id, p)| {
                ds.study_index(id)
                    .map(|i| (i, *p))
                    .ok_or_else(|| NmaError::Config(format!("plan names unknown study '{id}'")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub median: f64,
    pub low: f64,
    pub high: f64,
}

impl Interval {
    /// Median and central 95% interval.
    pub fn from_draws(draws: &[f64]) -> Self {
        let mut v = draws.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            median: quantile_sorted(&v, 0.5),
            low: quantile_sorted(&v, 0.025),
            high: quantile_sorted(&v, 0.975),
        }
    }
}

/// Odds ratio of treatment `k` versus `h` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OddsRatioSummary {
    pub h: usize,
    pub k: usize,
    pub label: String,
    pub log_or_median: f64,
    pub or: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSummary {
    pub study: String,
    pub prior: BetaPrior,
    pub mean: f64,
    pub interval: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonSummary {
    pub analysis: String,
    pub odds_ratios: Vec<OddsRatioSummary>,
    pub tau2: Interval,
    pub weights: Vec<WeightSummary>,
}

impl ComparisonSummary {
    pub fn odds_ratio(&self, h: usize, k: usize) -> Option<&OddsRatioSummary> {
        self.odds_ratios.iter().find(|o| o.h == h && o.k == k)
    }
}

/// Summaries of every ordered treatment pair, tau2 and any weights.
pub fn summarize(
    ds: &NetworkDataset,
    samples: &PosteriorSamples,
    analysis: &str,
    plan: &[(usize, BetaPrior)],
) -> Result<ComparisonSummary> {
    let layout = samples
        .layout()
        .ok_or_else(|| NmaError::Config("samples do not come from the network sampler".into()))?;
    let kk = ds.num_treatments();
    let thetas: Vec<Vec<f64>> = (0..kk - 1).map(|j| samples.pooled(layout.theta(j + 2))).collect();
    let total = samples.total_draws();
    let mut odds_ratios = Vec::new();
    for h in 1..=kk {
        for k in 1..=kk {
            if h == k {
                continue;
            }
            let log_or: Vec<f64> = (0..total)
                .map(|s| {
                    let th = |t: usize| if t == 1 { 0.0 } else { thetas[t - 2][s] };
                    th(k) - th(h)
                })
                .collect();
            let li = Interval::from_draws(&log_or);
            odds_ratios.push(OddsRatioSummary {
                h,
                k,
                label: format!("{} vs {}", ds.label(k), ds.label(h)),
                log_or_median: li.median,
                or: Interval {
                    median: li.median.exp(),
                    low: li.low.exp(),
                    high: li.high.exp(),
                },
            });
        }
    }
    let tau2 = Interval::from_draws(&samples.pooled(layout.tau2()));
    let weights = match layout.weight_range() {
        Some(range) => plan
            .iter()
            .zip(range)
            .map(|(&(i, prior), p)| {
                let w = samples.pooled(p);
                WeightSummary {
                    study: ds.study(i).id().to_string(),
                    prior,
                    mean: w.iter().sum::<f64>() / w.len() as f64,
                    interval: Interval::from_draws(&w),
                }
            })
            .collect(),
        None => Vec::new(),
    };
    Ok(ComparisonSummary {
        analysis: analysis.to_string(),
        odds_ratios,
        tau2,
        weights,
    })
}

pub fn standard_fit(
    ds: &NetworkDataset,
    priors: &PriorConfig,
    cfg: &SamplerConfig,
) -> Result<(PosteriorSamples, ComparisonSummary)> {
    let samples = sample(ds, &ModelSpec::standard(priors.clone()), cfg)?;
    let summary = summarize(ds, &samples, "full", &[])?;
    Ok((samples, summary))
}

/// Joint posterior with a power-prior weight on every planned study.
pub fn downweighted_fit(
    ds: &NetworkDataset,
    plan: &DownweightPlan,
    priors: &PriorConfig,
    cfg: &SamplerConfig,
) -> Result<(PosteriorSamples, ComparisonSummary)> {
    let resolved = plan.resolve(ds)?;
    let spec = ModelSpec::downweighted(resolved.clone(), priors.clone());
    let samples = sample(ds, &spec, cfg)?;
    let summary = summarize(ds, &samples, "downweighted", &resolved)?;
    Ok((samples, summary))
}

/// Standard fit after removing the listed study ids.
pub fn exclusion_fit<S: AsRef<str>>(
    ds: &NetworkDataset,
    excluded: &[S],
    priors: &PriorConfig,
    cfg: &SamplerConfig,
) -> Result<(PosteriorSamples, ComparisonSummary)> {
    let idx: Vec<usize> = excluded
        .iter()
        .map(|id| {
            ds.study_index(id.as_ref())
                .ok_or_else(|| NmaError::Config(format!("unknown study '{}'", id.as_ref())))
        })
        .collect::<Result<_>>()?;
    let reduced = ds.without(&idx)?;
    let samples = sample(&reduced, &ModelSpec::standard(priors.clone()), cfg)?;
    let summary = summarize(&reduced, &samples, "excluded", &[])?;
    Ok((samples, summary))
}

/// Full, down-weighted and exclusion analyses side by side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThreeWayComparison {
    pub full: ComparisonSummary,
    pub downweighted: ComparisonSummary,
    pub excluded: ComparisonSummary,
}

impl ThreeWayComparison {
    pub fn analyses(&self) -> [&ComparisonSummary; 3] {
        [&self.full, &self.downweighted, &self.excluded]
    }

    /// Forest-plot CSV: `contrast,analysis,or_median,ci_low,ci_high`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["contrast", "analysis", "or_median", "ci_low", "ci_high"])?;
        for a in self.analyses() {
            for o in a.odds_ratios.iter().filter(|o| o.h < o.k) {
                w.write_record([
                    o.label.clone(),
                    a.analysis.clone(),
                    o.or.median.to_string(),
                    o.or.low.to_string(),
                    o.or.high.to_string(),
                ])?;
            }
            w.write_record([
                "tau2".to_string(),
                a.analysis.clone(),
                a.tau2.median.to_string(),
                a.tau2.low.to_string(),
                a.tau2.high.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| NmaError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Run the three analyses in parallel; seeds are shared so differences come
/// from the models, not the streams.
pub fn compare(
    ds: &NetworkDataset,
    plan: &DownweightPlan,
    priors: &PriorConfig,
    cfg: &SamplerConfig,
) -> Result<ThreeWayComparison> {
    let excluded: Vec<&str> = plan.entries.keys().map(String::as_str).collect();
    let (full, (down, excl)) = rayon::join(
        || standard_fit(ds, priors, cfg),
        || {
            rayon::join(
                || downweighted_fit(ds, plan, priors, cfg),
                || exclusion_fit(ds, &excluded, priors, cfg),
            )
        },
    );
    Ok(ThreeWayComparison {
        full: full?.1,
        downweighted: down?.1,
        excluded: excl?.1,
    })
}

/// Bias of one contrast on the log-odds-ratio scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContrastBias {
    pub h: usize,
    pub k: usize,
    pub value: f64,
    /// The true contrast is zero, so `value` is the absolute bias.
    pub absolute: bool,
}

/// `(estimate - truth) / truth` for every contrast `k` vs `h` with `h < k`,
/// using posterior medians of the log odds ratio. `truth` holds the basic
/// parameters `theta_1k`, `k = 2..=K`.
pub fn relative_bias(estimates: &ComparisonSummary, truth: &[f64]) -> Vec<ContrastBias> {
    estimates
        .odds_ratios
        .iter()
        .filter(|o| o.h < o.k)
        .map(|o| {
            let t = basic_effect(truth, o.k) - basic_effect(truth, o.h);
            let diff = o.log_or_median - t;
            if t == 0.0 {
                ContrastBias {
                    h: o.h,
                    k: o.k,
                    value: diff,
                    absolute: true,
                }
            } else {
                ContrastBias {
                    h: o.h,
                    k: o.k,
                    value: diff / t,
                    absolute: false,
                }
            }
        })
        .collect()
}
