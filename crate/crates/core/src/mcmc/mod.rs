//! Adaptive Metropolis-within-Gibbs sampling, multi-chain execution and
//! convergence diagnostics.

mod adapt;
pub mod diagnostics;
pub mod generic;
mod nma;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NmaError, Result};
use crate::model::ParameterState;

pub use adapt::StepAdapter;
pub use diagnostics::{effective_sample_size, rhat, ParamDiagnostics};
pub use generic::{sample_target, LogTarget};
pub use nma::{sample, sample_tempered, ChainDraw, NmaLayout, NmaSampler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Total iterations per chain, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub thin: usize,
    pub seed: u64,
    /// Iterations between step-size updates during burn-in.
    pub adapt_window: usize,
    pub target_accept: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 50_000,
            burn_in: 10_000,
            chains: 2,
            thin: 1,
            seed: 1,
            adapt_window: 50,
            target_accept: 0.44,
        }
    }
}

impl SamplerConfig {
    /// Desk-scale defaults: 10k iterations with 2k burn-in.
    pub fn desk() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 2_000,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.chains == 0 || self.thin == 0 || self.adapt_window == 0 {
            return Err(NmaError::Config(
                "iterations, chains, thin and adapt_window must be positive".into(),
            ));
        }
        if self.burn_in >= self.iterations {
            return Err(NmaError::Config(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(NmaError::Config("target_accept must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Stored draws per chain.
    pub fn draws_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// SplitMix64 finaliser, used to derive independent seeds from a master
/// seed and a list of tags.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut z = master ^ 0x9E37_79B9_7F4A_7C15;
    for &t in tags {
        z = mix64(z.wrapping_add(t.wrapping_mul(0xBF58_476D_1CE4_E5B9)).wrapping_add(0x9E37_79B9_7F4A_7C15));
    }
    mix64(z)
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for one chain of a run.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[chain as u64]))
}

/// Acceptance fraction of one update block after burn-in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockAcceptance {
    pub block: String,
    pub rate: f64,
}

/// Post-burn-in, thinned draws from one or more chains.
#[derive(Debug, Clone, Serialize)]
pub struct PosteriorSamples {
    names: Vec<String>,
    /// Per chain, draws stored row-major (`draw * dim + param`).
    draws: Vec<Vec<f64>>,
    /// Per chain, untempered log-likelihood at each stored draw.
    log_likelihood: Vec<Vec<f64>>,
    pub accept_rates: Vec<BlockAcceptance>,
    /// Per chain, step sizes of every scalar update recorded at the end of
    /// each adaptation window (over the whole run).
    #[serde(skip)]
    pub step_trace: Vec<Vec<Vec<f64>>>,
    pub diagnostics: Vec<ParamDiagnostics>,
    #[serde(skip)]
    layout: Option<NmaLayout>,
}

impl PosteriorSamples {
    pub(crate) fn new(
        names: Vec<String>,
        draws: Vec<Vec<f64>>,
        log_likelihood: Vec<Vec<f64>>,
        accept_rates: Vec<BlockAcceptance>,
        step_trace: Vec<Vec<Vec<f64>>>,
        layout: Option<NmaLayout>,
    ) -> Self {
        let mut s = Self {
            names,
            draws,
            log_likelihood,
            accept_rates,
            step_trace,
            diagnostics: Vec::new(),
            layout,
        };
        s.diagnostics = diagnostics::summarize(&s);
        s
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn num_chains(&self) -> usize {
        self.draws.len()
    }

    pub fn draws_per_chain(&self) -> usize {
        if self.names.is_empty() {
            return self.log_likelihood.first().map_or(0, Vec::len);
        }
        self.draws.first().map_or(0, |c| c.len() / self.names.len())
    }

    pub fn total_draws(&self) -> usize {
        self.num_chains() * self.draws_per_chain()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// One flat draw.
    pub fn draw(&self, chain: usize, s: usize) -> &[f64] {
        let d = self.dim();
        &self.draws[chain][s * d..(s + 1) * d]
    }

    /// Draw `s` counting across chains in order.
    pub fn pooled_draw(&self, s: usize) -> &[f64] {
        let per = self.draws_per_chain();
        self.draw(s / per, s % per)
    }

    /// Trace of one scalar for one chain.
    pub fn chain_trace(&self, chain: usize, param: usize) -> Vec<f64> {
        let d = self.dim();
        self.draws[chain].iter().skip(param).step_by(d).copied().collect()
    }

    /// Per-chain traces of one scalar.
    pub fn traces(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.num_chains()).map(|c| self.chain_trace(c, param)).collect()
    }

    /// All chains of one scalar concatenated.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        self.traces(param).concat()
    }

    pub fn log_likelihood(&self, chain: usize) -> &[f64] {
        &self.log_likelihood[chain]
    }

    pub fn pooled_log_likelihood(&self) -> Vec<f64> {
        self.log_likelihood.concat()
    }

    pub fn layout(&self) -> Option<&NmaLayout> {
        self.layout.as_ref()
    }

    /// Draw `s` of the pooled chains as a model state. Only available for
    /// samples produced by the network sampler.
    pub fn state(&self, s: usize) -> Option<ParameterState> {
        self.layout.as_ref().map(|l| l.unflatten(self.pooled_draw(s)))
    }

    /// Write draws as long-format CSV: `chain,iter,param,value`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["chain", "iter", "param", "value"])?;
        for c in 0..self.num_chains() {
            for s in 0..self.draws_per_chain() {
                for (p, name) in self.names.iter().enumerate() {
                    w.write_record([
                        c.to_string(),
                        s.to_string(),
                        name.clone(),
                        self.draw(c, s)[p].to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Largest split R-hat over all scalars (NaN-free entries only).
    pub fn max_rhat(&self) -> Option<(String, f64)> {
        self.diagnostics
            .iter()
            .filter_map(|d| d.rhat.map(|r| (d.name.clone(), r)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Sample quantile with linear interpolation (type 7).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with divisor `n - 1`.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() as f64 - 1.0)
}
