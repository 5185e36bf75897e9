//! Split-chain potential scale reduction and effective sample size.

use serde::Serialize;

use super::PosteriorSamples;
use crate::error::{NmaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamDiagnostics {
    pub name: String,
    /// `None` when the statistic is undefined (single chain, constant trace).
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
}

pub(crate) fn summarize(samples: &PosteriorSamples) -> Vec<ParamDiagnostics> {
    (0..samples.dim())
        .map(|p| {
            let traces = samples.traces(p);
            ParamDiagnostics {
                name: samples.names()[p].clone(),
                rhat: split_rhat(&traces).ok(),
                ess: ess(&traces).ok(),
            }
        })
        .collect()
}

/// Split R-hat of scalar `param` of `samples`.
pub fn rhat(samples: &PosteriorSamples, param: usize) -> Result<f64> {
    check_param(samples, param)?;
    split_rhat(&samples.traces(param))
}

/// Effective sample size of scalar `param` of `samples`.
pub fn effective_sample_size(samples: &PosteriorSamples, param: usize) -> Result<f64> {
    check_param(samples, param)?;
    ess(&samples.traces(param))
}

fn check_param(samples: &PosteriorSamples, param: usize) -> Result<()> {
    if param >= samples.dim() {
        return Err(NmaError::Dimension(format!(
            "parameter {param} out of range ({} scalars)",
            samples.dim()
        )));
    }
    Ok(())
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Gelman–Rubin statistic after splitting every chain in half.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(NmaError::Config(format!(
            "R-hat needs at least 2 chains, got {}",
            chains.len()
        )));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 4 {
        return Err(NmaError::Config(format!(
            "R-hat needs at least 4 draws per chain, got {n}"
        )));
    }
    let half = n / 2;
    let mut parts: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        parts.push(&c[..half]);
        parts.push(&c[n - half..n]);
    }
    let stats: Vec<(f64, f64)> = parts.iter().map(|p| mean_var(p)).collect();
    let m = stats.len() as f64;
    let h = half as f64;
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let b_over_n = stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>() / (m - 1.0);
    if w <= 0.0 && b_over_n <= 0.0 {
        return Err(NmaError::Degenerate(
            "R-hat of a trace with zero within- and between-chain variance".into(),
        ));
    }
    if w <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let var_plus = (h - 1.0) / h * w + b_over_n;
    Ok((var_plus / w).sqrt())
}

/// Autocovariance at lag `t` with divisor `n`.
fn autocov(x: &[f64], mean: f64, t: usize) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n - t {
        s += (x[i] - mean) * (x[i + t] - mean);
    }
    s / n as f64
}

/// Multi-chain effective sample size using Geyer's initial monotone
/// sequence on the combined autocorrelation estimate. Capped at the total
/// number of draws.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.is_empty() {
        return Err(NmaError::Config("ESS of zero chains".into()));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let m = chains.len();
    if n * m < 100 {
        return Err(NmaError::Config(format!(
            "ESS needs at least 100 draws, got {}",
            n * m
        )));
    }
    if n < 4 {
        return Err(NmaError::Config("ESS needs at least 4 draws per chain".into()));
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(c)).collect();
    let nf = n as f64;
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 {
        let grand = stats.iter().map(|s| s.0).sum::<f64>() / m as f64;
        stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0)
    } else {
        0.0
    };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if !(var_plus > 0.0) || !(w > 0.0) {
        return Err(NmaError::Degenerate("ESS of a constant trace".into()));
    }
    let rho = |t: usize| -> f64 {
        let mean_acov = chains
            .iter()
            .zip(&stats)
            .map(|(c, s)| autocov(c, s.0, t))
            .sum::<f64>()
            / m as f64;
        1.0 - (w - mean_acov) / var_plus
    };
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    let total = (n * m) as f64;
    let ess = total / tau.max(1.0 / total.log10().max(1.0));
    Ok(ess.min(total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn ar1(seed: u64, n: usize, rho: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = (1.0 - rho * rho).sqrt();
        let mut x = rng.sample::<f64, _>(StandardNormal);
        (0..n)
            .map(|_| {
                x = rho * x + sd * rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect()
    }

    #[test]
    fn rhat_near_one_for_same_stream() {
        let r = split_rhat(&[normals(1, 10_000, 0.0), normals(2, 10_000, 0.0)]).unwrap();
        assert!((0.99..=1.05).contains(&r), "{r}");
    }

    #[test]
    fn rhat_large_for_offset_chains() {
        let r = split_rhat(&[normals(1, 10_000, 0.0), normals(2, 10_000, 10.0)]).unwrap();
        assert!(r > 2.0, "{r}");
    }

    #[test]
    fn rhat_rejects_single_chain_and_constants() {
        assert!(split_rhat(&[normals(1, 100, 0.0)]).is_err());
        assert!(split_rhat(&[vec![1.0; 100], vec![1.0; 100]]).is_err());
        assert!(split_rhat(&[vec![1.0; 3], vec![2.0; 3]]).is_err());
    }

    #[test]
    fn ess_of_iid_stream() {
        let e = ess(&[normals(3, 10_000, 0.0)]).unwrap();
        assert!((8_000.0..=12_000.0).contains(&e), "{e}");
        assert!(e <= 10_000.0);
    }

    #[test]
    fn ess_of_ar1_matches_analytic() {
        let n = 100_000;
        let rho = 0.9;
        let e = ess(&[ar1(4, n, rho)]).unwrap();
        let analytic = n as f64 * (1.0 - rho) / (1.0 + rho);
        assert!(e > analytic / 1.5 && e < analytic * 1.5, "{e} vs {analytic}");
    }

    #[test]
    fn ess_rejects_constant_and_short() {
        assert!(ess(&[vec![2.0; 500]]).is_err());
        assert!(ess(&[normals(1, 50, 0.0)]).is_err());
    }
}
