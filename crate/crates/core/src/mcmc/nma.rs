//! Metropolis-within-Gibbs sampler for the network meta-analysis model.
//!
//! Scalar Gaussian random-walk updates on every `mu_i`, `theta_1k`, `delta`
//! component, `eta` component, `log tau` and `logit w_j`. Three extra moves
//! improve mixing between location and random-effect parameters without
//! changing the target: a `theta` step paired with the opposite `delta`
//! step (likelihood unchanged), a joint rescaling of `tau` and all `delta`
//! (non-centred heterogeneity move), and an `eta` step paired with the
//! opposite `delta` step in the tested study.

use std::f64::consts::LN_2;
use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use super::adapt::StepAdapter;
use super::generic::{assemble, check_burn_in, ChainOutput};
use super::{chain_rng, PosteriorSamples, SamplerConfig};
use crate::data::NetworkDataset;
use crate::error::{NmaError, Result};
use crate::model::{
    binomial_kernel, expit, linear_predictor_unchecked, log_prior, logit, BinomialConstants,
    ModelSpec, ModelVariant, ParameterState, TauPriorScale,
};

/// Positions of the model parameters in a flat draw.
#[derive(Debug, Clone, PartialEq)]
pub struct NmaLayout {
    n_studies: usize,
    n_theta: usize,
    delta_offsets: Vec<usize>,
    delta_lens: Vec<usize>,
    tau2: usize,
    eta: Option<(usize, usize)>,
    weights: Option<(usize, usize)>,
    dim: usize,
    names: Vec<String>,
}

impl NmaLayout {
    pub fn new(ds: &NetworkDataset, spec: &ModelSpec) -> Self {
        let n_studies = ds.num_studies();
        let n_theta = ds.num_treatments() - 1;
        let mut names: Vec<String> = ds
            .studies()
            .iter()
            .map(|s| format!("mu[{}]", s.id()))
            .collect();
        names.extend((2..=ds.num_treatments()).map(|k| format!("theta[{k}]")));
        let mut offset = n_studies + n_theta;
        let mut delta_offsets = Vec::with_capacity(n_studies);
        let mut delta_lens = Vec::with_capacity(n_studies);
        for s in ds.studies() {
            delta_offsets.push(offset);
            delta_lens.push(s.num_contrasts());
            offset += s.num_contrasts();
            names.extend(s.contrast_treatments().map(|k| format!("delta[{},{k}]", s.id())));
        }
        let tau2 = offset;
        names.push("tau2".into());
        offset += 1;
        let eta = spec.mean_shift_study().map(|i| {
            let s = ds.study(i);
            names.extend(s.contrast_treatments().map(|k| format!("eta[{k}]")));
            let e = (offset, s.num_contrasts());
            offset += s.num_contrasts();
            e
        });
        let weights = match &spec.variant {
            ModelVariant::Downweighted { outliers } => {
                names.extend(outliers.iter().map(|(i, _)| format!("w[{}]", ds.study(*i).id())));
                let w = (offset, outliers.len());
                offset += outliers.len();
                Some(w)
            }
            _ => None,
        };
        Self {
            n_studies,
            n_theta,
            delta_offsets,
            delta_lens,
            tau2,
            eta,
            weights,
            dim: offset,
            names,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn mu(&self, study: usize) -> usize {
        study
    }

    /// Index of `theta_1k` for 1-based treatment `k >= 2`.
    pub fn theta(&self, k: usize) -> usize {
        assert!(k >= 2 && k - 2 < self.n_theta, "treatment {k} has no basic parameter");
        self.n_studies + k - 2
    }

    pub fn theta_range(&self) -> Range<usize> {
        self.n_studies..self.n_studies + self.n_theta
    }

    pub fn delta(&self, study: usize, c: usize) -> usize {
        assert!(c < self.delta_lens[study]);
        self.delta_offsets[study] + c
    }

    pub fn tau2(&self) -> usize {
        self.tau2
    }

    pub fn eta_range(&self) -> Option<Range<usize>> {
        self.eta.map(|(o, n)| o..o + n)
    }

    pub fn weight_range(&self) -> Option<Range<usize>> {
        self.weights.map(|(o, n)| o..o + n)
    }

    pub fn flatten_into(&self, st: &ParameterState, out: &mut Vec<f64>) {
        out.extend_from_slice(&st.mu);
        out.extend_from_slice(&st.theta);
        for d in &st.delta {
            out.extend_from_slice(d);
        }
        out.push(st.tau2);
        if let Some(eta) = &st.eta {
            out.extend_from_slice(eta);
        }
        if let Some(w) = &st.weights {
            out.extend_from_slice(w);
        }
    }

    pub fn flatten(&self, st: &ParameterState) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim);
        self.flatten_into(st, &mut v);
        v
    }

    pub fn unflatten(&self, x: &[f64]) -> ParameterState {
        assert_eq!(x.len(), self.dim, "flat draw has the wrong length");
        ParameterState {
            mu: x[..self.n_studies].to_vec(),
            theta: x[self.theta_range()].to_vec(),
            delta: self
                .delta_offsets
                .iter()
                .zip(&self.delta_lens)
                .map(|(&o, &n)| x[o..o + n].to_vec())
                .collect(),
            tau2: x[self.tau2],
            eta: self.eta_range().map(|r| x[r].to_vec()),
            weights: self.weight_range().map(|r| x[r].to_vec()),
        }
    }
}

/// Current state handed to a draw consumer.
#[derive(Debug, Clone, Copy)]
pub struct ChainDraw<'a> {
    pub chain: usize,
    /// Index among the stored draws of this chain.
    pub index: usize,
    pub state: &'a ParameterState,
    /// Untempered log-likelihood, weights applied.
    pub log_likelihood: f64,
}

/// Adaptation record and acceptance counts of one chain.
#[derive(Debug, Clone)]
pub struct ChainReport {
    pub step_trace: Vec<Vec<f64>>,
    pub accepts: Vec<(String, u64, u64)>,
}

struct Slots {
    mu: Range<usize>,
    theta: Range<usize>,
    theta_shift: Range<usize>,
    delta: Range<usize>,
    log_tau: Range<usize>,
    tau_scale: Range<usize>,
    eta: Range<usize>,
    eta_shift: Range<usize>,
    w: Range<usize>,
    total: usize,
}

impl Slots {
    fn new(n_mu: usize, n_theta: usize, n_delta: usize, n_eta: usize, n_w: usize) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let mu = take(n_mu);
        let theta = take(n_theta);
        let theta_shift = take(n_theta);
        let delta = take(n_delta);
        let log_tau = take(1);
        let tau_scale = take(1);
        let eta = take(n_eta);
        let eta_shift = take(n_eta);
        let w = take(n_w);
        Self {
            mu,
            theta,
            theta_shift,
            delta,
            log_tau,
            tau_scale,
            eta,
            eta_shift,
            w,
            total: at,
        }
    }

    fn initial_steps(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.total];
        let blocks = [
            (&self.mu, 0.3),
            (&self.theta, 0.2),
            (&self.theta_shift, 0.2),
            (&self.delta, 0.3),
            (&self.log_tau, 0.3),
            (&self.tau_scale, 0.1),
            (&self.eta, 0.3),
            (&self.eta_shift, 0.3),
            (&self.w, 0.5),
        ];
        for (r, v) in blocks {
            s[r.clone()].iter_mut().for_each(|x| *x = v);
        }
        s
    }

    fn blocks(&self) -> Vec<(String, Range<usize>)> {
        [
            ("mu", &self.mu),
            ("theta", &self.theta),
            ("theta_shift", &self.theta_shift),
            ("delta", &self.delta),
            ("log_tau", &self.log_tau),
            ("tau_scale", &self.tau_scale),
            ("eta", &self.eta),
            ("eta_shift", &self.eta_shift),
            ("w", &self.w),
        ]
        .into_iter()
        .filter(|(_, r)| !r.is_empty())
        .map(|(n, r)| (n.to_string(), r.clone()))
        .collect()
    }
}

/// Precomputed structure for sampling one model on one dataset at one
/// likelihood temperature.
pub struct NmaSampler<'a> {
    ds: &'a NetworkDataset,
    spec: &'a ModelSpec,
    beta: f64,
    constants: BinomialConstants,
    arm_offsets: Vec<usize>,
    /// Arm position of each contrast, per study.
    contrast_pos: Vec<Vec<usize>>,
    /// Per basic parameter: arms whose predictor contains it, with sign.
    theta_touch: Vec<Vec<(usize, usize, f64)>>,
    /// Per basic parameter: distinct studies in `theta_touch`.
    theta_studies: Vec<Vec<usize>>,
    weight_slot: Vec<Option<usize>>,
    total_delta: usize,
    delta_active: bool,
    tau_free: bool,
    slots: Slots,
}

struct ChainState {
    st: ParameterState,
    ll_arm: Vec<f64>,
    ll_study: Vec<f64>,
    q: Vec<f64>,
    u: f64,
    scratch: Vec<f64>,
    saved: Vec<f64>,
}

#[inline]
fn quad(d: &[f64]) -> f64 {
    let (s, q) = d.iter().fold((0.0, 0.0), |(s, q), &x| (s + x, q + x * x));
    q - s * s / (d.len() as f64 + 1.0)
}

#[inline]
fn accept(rng: &mut ChaCha8Rng, log_ratio: f64) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    if log_ratio >= 0.0 {
        return true;
    }
    let e: f64 = rng.sample(Exp1);
    -e < log_ratio
}

impl<'a> NmaSampler<'a> {
    pub fn new(ds: &'a NetworkDataset, spec: &'a ModelSpec, temperature: f64) -> Result<Self> {
        spec.validate(ds)?;
        if !(0.0..=1.0).contains(&temperature) {
            return Err(NmaError::Config(format!(
                "temperature must lie in [0, 1], got {temperature}"
            )));
        }
        let k = ds.num_treatments();
        let mut arm_offsets = Vec::with_capacity(ds.num_studies() + 1);
        let mut at = 0;
        for s in ds.studies() {
            arm_offsets.push(at);
            at += s.num_arms();
        }
        arm_offsets.push(at);
        let contrast_pos: Vec<Vec<usize>> = ds
            .studies()
            .iter()
            .map(|s| (0..s.num_arms()).filter(|&p| p != s.baseline_pos()).collect())
            .collect();
        let mut theta_touch = vec![Vec::new(); k - 1];
        let mut theta_studies = vec![Vec::new(); k - 1];
        for (i, s) in ds.studies().iter().enumerate() {
            let b = s.baseline();
            for (pos, arm) in s.arms().iter().enumerate() {
                if pos == s.baseline_pos() {
                    continue;
                }
                if arm.treatment >= 2 {
                    theta_touch[arm.treatment - 2].push((i, pos, 1.0));
                }
                if b >= 2 {
                    theta_touch[b - 2].push((i, pos, -1.0));
                }
            }
        }
        for (j, touches) in theta_touch.iter_mut().enumerate() {
            touches.sort_by_key(|t| (t.0, t.1));
            let mut studies: Vec<usize> = touches.iter().map(|t| t.0).collect();
            studies.dedup();
            theta_studies[j] = studies;
        }
        let weight_slot = (0..ds.num_studies()).map(|i| spec.weight_slot(i)).collect();
        let total_delta: usize = ds.studies().iter().map(|s| s.num_contrasts()).sum();
        let fixed = spec.priors.fixed_tau2;
        let delta_active = fixed != Some(0.0);
        let tau_free = fixed.is_none();
        let n_eta = spec
            .mean_shift_study()
            .map_or(0, |i| ds.study(i).num_contrasts());
        let n_w = match &spec.variant {
            ModelVariant::Downweighted { outliers } => outliers.len(),
            _ => 0,
        };
        let slots = Slots::new(ds.num_studies(), k - 1, total_delta, n_eta, n_w);
        Ok(Self {
            ds,
            spec,
            beta: temperature,
            constants: BinomialConstants::new(ds),
            arm_offsets,
            contrast_pos,
            theta_touch,
            theta_studies,
            weight_slot,
            total_delta,
            delta_active,
            tau_free,
            slots,
        })
    }

    /// Starting point: empirical baseline log-odds for `mu`, zero effects,
    /// `tau = 0.1`, weights at their prior means.
    pub fn initial_state(&self) -> ParameterState {
        let mut st = ParameterState::zeros(self.ds, self.spec);
        for (i, s) in self.ds.studies().iter().enumerate() {
            let a = &s.arms()[s.baseline_pos()];
            st.mu[i] = logit((a.events as f64 + 0.5) / (a.total as f64 + 1.0));
        }
        st.tau2 = self.spec.priors.fixed_tau2.unwrap_or(0.01);
        if let (ModelVariant::Downweighted { outliers }, Some(w)) =
            (&self.spec.variant, st.weights.as_mut())
        {
            for (wj, (_, prior)) in w.iter_mut().zip(outliers) {
                *wj = prior.mean();
            }
        }
        st
    }

    #[inline]
    fn arm_ll(&self, st: &ParameterState, i: usize, pos: usize) -> f64 {
        let s = self.ds.study(i);
        let lp = linear_predictor_unchecked(st, s, i, pos, self.spec);
        let a = &s.arms()[pos];
        self.constants.study(i)[pos] + binomial_kernel(a.events, a.total, lp)
    }

    #[inline]
    fn weight(&self, st: &ParameterState, i: usize) -> f64 {
        match (self.weight_slot[i], &st.weights) {
            (Some(j), Some(w)) => w[j],
            _ => 1.0,
        }
    }

    /// Fill `out` with the study's arm log-likelihoods and return their sum.
    fn study_ll(&self, st: &ParameterState, i: usize, out: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for (pos, o) in out.iter_mut().enumerate().take(self.ds.study(i).num_arms()) {
            *o = self.arm_ll(st, i, pos);
            total += *o;
        }
        total
    }

    fn study_sum(&self, c: &ChainState, i: usize) -> f64 {
        c.ll_arm[self.arm_offsets[i]..self.arm_offsets[i + 1]].iter().sum()
    }

    fn total_ll(&self, c: &ChainState) -> f64 {
        (0..self.ds.num_studies())
            .map(|i| self.weight(&c.st, i) * c.ll_study[i])
            .sum()
    }

    /// Heterogeneity prior plus Jacobian, as a density over `u = ln tau`.
    fn log_tau_u(&self, u: f64) -> f64 {
        let p = &self.spec.priors;
        let lp = p.log_tau_prior((2.0 * u).exp());
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + match p.tau_prior_scale {
            TauPriorScale::OnTau2 => LN_2 + 2.0 * u,
            TauPriorScale::OnTau => u,
        }
    }

    /// `tau2`-dependent part of the summed study-effect prior.
    fn delta_prior(&self, tau2: f64, qsum: f64) -> f64 {
        -0.5 * self.total_delta as f64 * (tau2 / 2.0).ln() - qsum / tau2
    }

    #[inline]
    fn normal_diff(&self, new: f64, old: f64) -> f64 {
        let v = self.spec.priors.normal_sd * self.spec.priors.normal_sd;
        -(new * new - old * old) / (2.0 * v)
    }

    #[inline]
    fn eta_diff(&self, new: f64, old: f64) -> f64 {
        let sd = self.spec.priors.eta_prior_sd();
        -(new * new - old * old) / (2.0 * sd * sd)
    }

    fn init_chain(&self) -> Result<ChainState> {
        let st = self.initial_state();
        let full = log_prior(&st, self.spec);
        if !full.is_finite() {
            return Err(NmaError::NonFinite("log-prior at the initial state".into()));
        }
        let n_arms = *self.arm_offsets.last().unwrap_or(&0);
        let max_scratch = n_arms.max(self.total_delta).max(
            self.theta_touch.iter().map(Vec::len).max().unwrap_or(0),
        );
        let mut c = ChainState {
            u: if st.tau2 > 0.0 { 0.5 * st.tau2.ln() } else { f64::NEG_INFINITY },
            q: st.delta.iter().map(|d| quad(d)).collect(),
            st,
            ll_arm: vec![0.0; n_arms],
            ll_study: vec![0.0; self.ds.num_studies()],
            scratch: vec![0.0; max_scratch],
            saved: vec![0.0; max_scratch],
        };
        for i in 0..self.ds.num_studies() {
            let (a, b) = (self.arm_offsets[i], self.arm_offsets[i + 1]);
            let mut buf = vec![0.0; b - a];
            c.ll_study[i] = self.study_ll(&c.st, i, &mut buf);
            c.ll_arm[a..b].copy_from_slice(&buf);
        }
        let ll = self.total_ll(&c);
        if !ll.is_finite() {
            return Err(NmaError::NonFinite("log-likelihood at the initial state".into()));
        }
        Ok(c)
    }

    /// Run one chain, passing every stored draw to `sink`.
    pub fn run_chain(
        &self,
        cfg: &SamplerConfig,
        chain: usize,
        sink: &mut dyn FnMut(ChainDraw<'_>),
    ) -> Result<ChainReport> {
        cfg.validate()?;
        let mut rng = chain_rng(cfg.seed, chain);
        let mut c = self.init_chain()?;
        let mut adapt = StepAdapter::new(&self.slots.initial_steps(), cfg.target_accept);
        let blocks = self.slots.blocks();
        let mut trace = Vec::new();
        if cfg.burn_in == 0 {
            adapt.freeze();
        }
        let mut stored = 0;
        for it in 0..cfg.iterations {
            self.sweep(&mut c, &mut adapt, &mut rng);
            if (it + 1) % cfg.adapt_window == 0 {
                adapt.end_window();
                trace.push(adapt.steps());
            }
            if it + 1 == cfg.burn_in {
                check_burn_in(&adapt, &blocks)?;
                adapt.freeze();
            }
            if it >= cfg.burn_in && (it - cfg.burn_in + 1) % cfg.thin == 0 {
                sink(ChainDraw {
                    chain,
                    index: stored,
                    state: &c.st,
                    log_likelihood: self.total_ll(&c),
                });
                stored += 1;
            }
        }
        let accepts = blocks
            .into_iter()
            .map(|(name, r)| {
                let (a, t) = adapt.totals(r);
                (name, a, t)
            })
            .collect();
        Ok(ChainReport {
            step_trace: trace,
            accepts,
        })
    }

    fn sweep(&self, c: &mut ChainState, adapt: &mut StepAdapter, rng: &mut ChaCha8Rng) {
        let beta = self.beta;
        let n = self.ds.num_studies();

        for i in 0..n {
            let slot = self.slots.mu.start + i;
            let eps = adapt.propose(slot, rng);
            let old = c.st.mu[i];
            c.st.mu[i] = old + eps;
            let (a, b) = (self.arm_offsets[i], self.arm_offsets[i + 1]);
            let new_ll = self.study_ll(&c.st, i, &mut c.scratch[..b - a]);
            let w = self.weight(&c.st, i);
            let ratio = beta * w * (new_ll - c.ll_study[i]) + self.normal_diff(c.st.mu[i], old);
            let ok = accept(rng, ratio);
            if ok {
                c.ll_arm[a..b].copy_from_slice(&c.scratch[..b - a]);
                c.ll_study[i] = new_ll;
            } else {
                c.st.mu[i] = old;
            }
            adapt.record(slot, ok);
        }

        for j in 0..self.theta_touch.len() {
            self.update_theta(c, adapt, rng, j);
        }

        if self.delta_active {
            for j in 0..self.theta_touch.len() {
                self.shift_theta(c, adapt, rng, j);
            }
            let mut slot = self.slots.delta.start;
            for i in 0..n {
                for ci in 0..c.st.delta[i].len() {
                    self.update_delta(c, adapt, rng, slot, i, ci);
                    slot += 1;
                }
            }
        }

        if self.tau_free {
            self.update_log_tau(c, adapt, rng);
            self.scale_tau(c, adapt, rng);
        }

        if let Some(t) = self.spec.mean_shift_study() {
            let m = self.contrast_pos[t].len();
            for ci in 0..m {
                self.update_eta(c, adapt, rng, t, ci);
            }
            if self.delta_active {
                for ci in 0..m {
                    self.shift_eta(c, adapt, rng, t, ci);
                }
            }
        }

        if let ModelVariant::Downweighted { outliers } = &self.spec.variant {
            for (j, (i, prior)) in outliers.iter().enumerate() {
                let slot = self.slots.w.start + j;
                let w_old = c.st.weights.as_ref().expect("weights")[j];
                let v = logit(w_old) + adapt.propose(slot, rng);
                let w_new = expit(v);
                let lp_new = prior.ln_pdf(w_new);
                let ok = if lp_new == f64::NEG_INFINITY {
                    false
                } else {
                    let ratio = beta * (w_new - w_old) * c.ll_study[*i] + lp_new
                        - prior.ln_pdf(w_old)
                        + (w_new * (1.0 - w_new)).ln()
                        - (w_old * (1.0 - w_old)).ln();
                    accept(rng, ratio)
                };
                if ok {
                    c.st.weights.as_mut().expect("weights")[j] = w_new;
                }
                adapt.record(slot, ok);
            }
        }
    }

    fn update_theta(
        &self,
        c: &mut ChainState,
        adapt: &mut StepAdapter,
        rng: &mut ChaCha8Rng,
        j: usize,
    ) {
        let slot = self.slots.theta.start + j;
        let eps = adapt.propose(slot, rng);
        let old = c.st.theta[j];
        c.st.theta[j] = old + eps;
        let touches = &self.theta_touch[j];
        let mut dll = 0.0;
        for (t, &(i, pos, _)) in touches.iter().enumerate() {
            let new = self.arm_ll(&c.st, i, pos);
            c.scratch[t] = new;
            dll += self.weight(&c.st, i) * (new - c.ll_arm[self.arm_offsets[i] + pos]);
        }
        let ratio = self.beta * dll + self.normal_diff(c.st.theta[j], old);
        let ok = accept(rng, ratio);
        if ok {
            for (t, &(i, pos, _)) in touches.iter().enumerate() {
                c.ll_arm[self.arm_offsets[i] + pos] = c.scratch[t];
            }
            for &i in &self.theta_studies[j] {
                c.ll_study[i] = self.study_sum(c, i);
            }
        } else {
            c.st.theta[j] = old;
        }
        adapt.record(slot, ok);
    }

    /// `theta_j += eps` with every affected `delta` moved the opposite way.
    fn shift_theta(
        &self,
        c: &mut ChainState,
        adapt: &mut StepAdapter,
        rng: &mut ChaCha8Rng,
        j: usize,
    ) {
        let slot = self.slots.theta_shift.start + j;
        let eps = adapt.propose(slot, rng);
        let old = c.st.theta[j];
        c.st.theta[j] = old + eps;
        let touches = &self.theta_touch[j];
        for (t, &(i, pos, sign)) in touches.iter().enumerate() {
            let ci = self.ds.study(i).contrast_index(pos).expect("non-baseline arm");
            c.saved[t] = c.st.delta[i][ci];
            c.st.delta[i][ci] -= sign * eps;
        }
        let tau2 = c.st.tau2;
        let mut dprior = self.normal_diff(c.st.theta[j], old);
        for &i in &self.theta_studies[j] {
            dprior -= (quad(&c.st.delta[i]) - c.q[i]) / tau2;
        }
        let mut dll = 0.0;
        for (t, &(i, pos, _)) in touches.iter().enumerate() {
            let new = self.arm_ll(&c.st, i, pos);
            c.scratch[t] = new;
            dll += self.weight(&c.st, i) * (new - c.ll_arm[self.arm_offsets[i] + pos]);
        }
        let ok = accept(rng, self.beta * dll + dprior);
        if ok {
            for (t, &(i, pos, _)) in touches.iter().enumerate() {
                c.ll_arm[self.arm_offsets[i] + pos] = c.scratch[t];
            }
            for &i in &self.theta_studies[j] {
                c.ll_study[i] = self.study_sum(c, i);
                c.q[i] = quad(&c.st.delta[i]);
            }
        } else {
            c.st.theta[j] = old;
            for (t, &(i, pos, _)) in touches.iter().enumerate() {
                let ci = self.ds.study(i).contrast_index(pos).expect("non-baseline arm");
                c.st.delta[i][ci] = c.saved[t];
            }
        }
        adapt.record(slot, ok);
    }

    fn update_delta(
        &self,
        c: &mut ChainState,
        adapt: &mut StepAdapter,
        rng: &mut ChaCha8Rng,
        slot: usize,
        i: usize,
        ci: usize,
    ) {
        let eps = adapt.propose(slot, rng);
        let old = c.st.delta[i][ci];
        c.st.delta[i][ci] = old + eps;
        let pos = self.contrast_pos[i][ci];
        let idx = self.arm_offsets[i] + pos;
        let new = self.arm_ll(&c.st, i, pos);
        let q_new = quad(&c.st.delta[i]);
        let ratio = self.beta * self.weight(&c.st, i) * (new - c.ll_arm[idx])
            - (q_new - c.q[i]) / c.st.tau2;
        let ok = accept(rng, ratio);
        if ok {
            c.ll_arm[idx] = new;
            c.ll_study[i] = self.study_sum(c, i);
            c.q[i] = q_new;
        } else {
            c.st.delta[i][ci] = old;
        }
        adapt.record(slot, ok);
    }

    fn update_log_tau(&self, c: &mut ChainState, adapt: &mut StepAdapter, rng: &mut ChaCha8Rng) {
        let slot = self.slots.log_tau.start;
        let u_new = c.u + adapt.propose(slot, rng);
        let g_new = self.log_tau_u(u_new);
        let ok = if g_new == f64::NEG_INFINITY {
            false
        } else {
            let qsum: f64 = c.q.iter().sum();
            let tau2_new = (2.0 * u_new).exp();
            let ratio = g_new - self.log_tau_u(c.u) + self.delta_prior(tau2_new, qsum)
                - self.delta_prior(c.st.tau2, qsum);
            accept(rng, ratio)
        };
        if ok {
            c.u = u_new;
            c.st.tau2 = (2.0 * u_new).exp();
        }
        adapt.record(slot, ok);
    }

    /// `tau -> tau e^eps` with every `delta -> delta e^eps`. The study-effect
    /// prior change cancels the Jacobian, leaving likelihood and `tau` prior.
    fn scale_tau(&self, c: &mut ChainState, adapt: &mut StepAdapter, rng: &mut ChaCha8Rng) {
        let slot = self.slots.tau_scale.start;
        let eps = adapt.propose(slot, rng);
        let u_new = c.u + eps;
        let g_new = self.log_tau_u(u_new);
        if g_new == f64::NEG_INFINITY {
            adapt.record(slot, false);
            return;
        }
        let factor = eps.exp();
        let mut k = 0;
        for d in c.st.delta.iter_mut() {
            for x in d.iter_mut() {
                c.saved[k] = *x;
                *x *= factor;
                k += 1;
            }
        }
        let mut dll = 0.0;
        let mut new_study = Vec::with_capacity(self.ds.num_studies());
        for i in 0..self.ds.num_studies() {
            let (a, b) = (self.arm_offsets[i], self.arm_offsets[i + 1]);
            let new = self.study_ll(&c.st, i, &mut c.scratch[a..b]);
            dll += self.weight(&c.st, i) * (new - c.ll_study[i]);
            new_study.push(new);
        }
        let ratio = self.beta * dll + g_new - self.log_tau_u(c.u);
        let ok = accept(rng, ratio);
        if ok {
            let n_arms = c.ll_arm.len();
            c.ll_arm.copy_from_slice(&c.scratch[..n_arms]);
            c.ll_study = new_study;
            c.u = u_new;
            c.st.tau2 = (2.0 * u_new).exp();
            for (q, d) in c.q.iter_mut().zip(&c.st.delta) {
                *q = quad(d);
            }
        } else {
            let mut k = 0;
            for d in c.st.delta.iter_mut() {
                for x in d.iter_mut() {
                    *x = c.saved[k];
                    k += 1;
                }
            }
        }
        adapt.record(slot, ok);
    }

    fn update_eta(
        &self,
        c: &mut ChainState,
        adapt: &mut StepAdapter,
        rng: &mut ChaCha8Rng,
        t: usize,
        ci: usize,
    ) {
        let slot = self.slots.eta.start + ci;
        let eps = adapt.propose(slot, rng);
        let eta = c.st.eta.as_mut().expect("eta");
        let old = eta[ci];
        eta[ci] = old + eps;
        let new_val = eta[ci];
        let pos = self.contrast_pos[t][ci];
        let idx = self.arm_offsets[t] + pos;
        let new = self.arm_ll(&c.st, t, pos);
        let ratio = self.beta * self.weight(&c.st, t) * (new - c.ll_arm[idx])
            + self.eta_diff(new_val, old);
        let ok = accept(rng, ratio);
        if ok {
            c.ll_arm[idx] = new;
            c.ll_study[t] = self.study_sum(c, t);
        } else {
            c.st.eta.as_mut().expect("eta")[ci] = old;
        }
        adapt.record(slot, ok);
    }

    /// `eta_c += eps` and `delta_c -= eps` in the tested study.
    fn shift_eta(
        &self,
        c: &mut ChainState,
        adapt: &mut StepAdapter,
        rng: &mut ChaCha8Rng,
        t: usize,
        ci: usize,
    ) {
        let slot = self.slots.eta_shift.start + ci;
        let eps = adapt.propose(slot, rng);
        let eta = c.st.eta.as_mut().expect("eta");
        let old_eta = eta[ci];
        eta[ci] = old_eta + eps;
        let new_eta = eta[ci];
        let old_delta = c.st.delta[t][ci];
        c.st.delta[t][ci] = old_delta - eps;
        let pos = self.contrast_pos[t][ci];
        let idx = self.arm_offsets[t] + pos;
        let new = self.arm_ll(&c.st, t, pos);
        let q_new = quad(&c.st.delta[t]);
        let ratio = self.beta * self.weight(&c.st, t) * (new - c.ll_arm[idx])
            + self.eta_diff(new_eta, old_eta)
            - (q_new - c.q[t]) / c.st.tau2;
        let ok = accept(rng, ratio);
        if ok {
            c.ll_arm[idx] = new;
            c.ll_study[t] = self.study_sum(c, t);
            c.q[t] = q_new;
        } else {
            c.st.eta.as_mut().expect("eta")[ci] = old_eta;
            c.st.delta[t][ci] = old_delta;
        }
        adapt.record(slot, ok);
    }
}

/// Sample the posterior of `spec` given `ds`.
pub fn sample(ds: &NetworkDataset, spec: &ModelSpec, cfg: &SamplerConfig) -> Result<PosteriorSamples> {
    sample_tempered(ds, spec, cfg, 1.0)
}

/// Sample the power posterior `prior * likelihood^temperature`.
pub fn sample_tempered(
    ds: &NetworkDataset,
    spec: &ModelSpec,
    cfg: &SamplerConfig,
    temperature: f64,
) -> Result<PosteriorSamples> {
    cfg.validate()?;
    let sampler = NmaSampler::new(ds, spec, temperature)?;
    let layout = NmaLayout::new(ds, spec);
    let per_chain = cfg.draws_per_chain();
    let outputs: Vec<ChainOutput> = (0..cfg.chains)
        .into_par_iter()
        .map(|chain| {
            let mut draws = Vec::with_capacity(per_chain * layout.dim());
            let mut lls = Vec::with_capacity(per_chain);
            let report = sampler.run_chain(cfg, chain, &mut |d| {
                layout.flatten_into(d.state, &mut draws);
                lls.push(d.log_likelihood);
            })?;
            Ok(ChainOutput {
                draws,
                log_likelihood: lls,
                step_trace: report.step_trace,
                accepts: report.accepts,
            })
        })
        .collect::<Result<_>>()?;
    Ok(assemble(layout.names().to_vec(), outputs, Some(layout)))
}
