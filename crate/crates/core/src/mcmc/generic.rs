//! Component-wise adaptive random-walk Metropolis for small targets given as
//! a prior and a likelihood over an unconstrained real vector.

use rayon::prelude::*;

use super::adapt::StepAdapter;
use super::{chain_rng, BlockAcceptance, PosteriorSamples, SamplerConfig};
use crate::error::{NmaError, Result};

/// Log-density split into prior and likelihood so that the likelihood can be
/// tempered.
pub trait LogTarget: Sync {
    fn dim(&self) -> usize;

    fn log_prior(&self, x: &[f64]) -> f64;

    fn log_likelihood(&self, x: &[f64]) -> f64;

    fn initial(&self) -> Vec<f64>;

    fn names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x[{i}]")).collect()
    }

    fn initial_steps(&self) -> Vec<f64> {
        vec![1.0; self.dim()]
    }
}

/// Everything one chain hands back to the assembler.
pub(crate) struct ChainOutput {
    pub draws: Vec<f64>,
    pub log_likelihood: Vec<f64>,
    pub step_trace: Vec<Vec<f64>>,
    /// (block, accepted, attempted) after burn-in.
    pub accepts: Vec<(String, u64, u64)>,
}

/// `beta * ll` with the convention `0 * -inf = 0`.
#[inline]
pub(crate) fn tempered(beta: f64, ll: f64) -> f64 {
    if beta == 0.0 {
        0.0
    } else {
        beta * ll
    }
}

/// Sample `prior * likelihood^temperature`.
pub fn sample_target<T: LogTarget>(
    target: &T,
    cfg: &SamplerConfig,
    temperature: f64,
) -> Result<PosteriorSamples> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&temperature) {
        return Err(NmaError::Config(format!(
            "temperature must lie in [0, 1], got {temperature}"
        )));
    }
    let outputs: Vec<ChainOutput> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(target, cfg, temperature, c))
        .collect::<Result<_>>()?;
    Ok(assemble(target.names(), outputs, None))
}

pub(crate) fn assemble(
    names: Vec<String>,
    outputs: Vec<ChainOutput>,
    layout: Option<super::NmaLayout>,
) -> PosteriorSamples {
    let mut blocks: Vec<(String, u64, u64)> = Vec::new();
    for out in &outputs {
        for (name, a, t) in &out.accepts {
            match blocks.iter_mut().find(|b| &b.0 == name) {
                Some(b) => {
                    b.1 += a;
                    b.2 += t;
                }
                None => blocks.push((name.clone(), *a, *t)),
            }
        }
    }
    let accept_rates = blocks
        .into_iter()
        .map(|(block, a, t)| BlockAcceptance {
            block,
            rate: if t == 0 { 0.0 } else { a as f64 / t as f64 },
        })
        .collect();
    let mut draws = Vec::with_capacity(outputs.len());
    let mut lls = Vec::with_capacity(outputs.len());
    let mut traces = Vec::with_capacity(outputs.len());
    for out in outputs {
        draws.push(out.draws);
        lls.push(out.log_likelihood);
        traces.push(out.step_trace);
    }
    PosteriorSamples::new(names, draws, lls, accept_rates, traces, layout)
}

fn run_chain<T: LogTarget>(
    target: &T,
    cfg: &SamplerConfig,
    beta: f64,
    chain: usize,
) -> Result<ChainOutput> {
    let dim = target.dim();
    let mut rng = chain_rng(cfg.seed, chain);
    let mut x = target.initial();
    if x.len() != dim {
        return Err(NmaError::Dimension(format!(
            "initial point has {} entries, target has {dim}",
            x.len()
        )));
    }
    let mut lp = target.log_prior(&x);
    let mut ll = target.log_likelihood(&x);
    if !lp.is_finite() || !tempered(beta, ll).is_finite() {
        return Err(NmaError::NonFinite("log-density at the initial point".into()));
    }
    let mut adapt = StepAdapter::new(&target.initial_steps(), cfg.target_accept);
    let n_store = cfg.draws_per_chain();
    let mut draws = Vec::with_capacity(n_store * dim);
    let mut lls = Vec::with_capacity(n_store);
    let mut trace = Vec::new();
    if cfg.burn_in == 0 {
        adapt.freeze();
    }

    for it in 0..cfg.iterations {
        for j in 0..dim {
            let old = x[j];
            x[j] = old + adapt.propose(j, &mut rng);
            let lp_new = target.log_prior(&x);
            let mut accepted = false;
            if lp_new > f64::NEG_INFINITY {
                let ll_new = if beta == 0.0 { ll } else { target.log_likelihood(&x) };
                let log_ratio = lp_new - lp + tempered(beta, ll_new) - tempered(beta, ll);
                let u: f64 = rand::Rng::random(&mut rng);
                if u.ln() < log_ratio {
                    lp = lp_new;
                    ll = ll_new;
                    accepted = true;
                }
            }
            if !accepted {
                x[j] = old;
            }
            adapt.record(j, accepted);
        }
        if (it + 1) % cfg.adapt_window == 0 {
            adapt.end_window();
            trace.push(adapt.steps());
        }
        if it + 1 == cfg.burn_in {
            check_burn_in(&adapt, &[("x".to_string(), 0..dim)])?;
            adapt.freeze();
        }
        if it >= cfg.burn_in && (it - cfg.burn_in + 1) % cfg.thin == 0 {
            draws.extend_from_slice(&x);
            lls.push(if beta == 0.0 { target.log_likelihood(&x) } else { ll });
        }
    }
    let (a, t) = adapt.totals(0..dim);
    Ok(ChainOutput {
        draws,
        log_likelihood: lls,
        step_trace: trace,
        accepts: vec![("x".to_string(), a, t)],
    })
}

/// Fail when a block accepted nothing during burn-in.
pub(crate) fn check_burn_in(
    adapt: &StepAdapter,
    blocks: &[(String, std::ops::Range<usize>)],
) -> Result<()> {
    for (name, range) in blocks {
        let (a, t) = adapt.totals(range.clone());
        if t > 0 && a == 0 {
            return Err(NmaError::Diagnostic(format!(
                "block '{name}' accepted no proposals during burn-in ({t} attempts)"
            )));
        }
    }
    Ok(())
}
