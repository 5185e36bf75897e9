use rand::Rng;
use rand_distr::StandardNormal;

/// Robbins–Monro step-size controller for a set of scalar random-walk
/// updates. Each slot keeps its own log step size, nudged toward the target
/// acceptance rate at the end of every window. Adaptation stops for good
/// once [`StepAdapter::freeze`] is called.
#[derive(Debug, Clone)]
pub struct StepAdapter {
    log_step: Vec<f64>,
    step: Vec<f64>,
    window_accepts: Vec<u32>,
    window_tries: Vec<u32>,
    total_accepts: Vec<u64>,
    total_tries: Vec<u64>,
    windows: u32,
    target: f64,
    frozen: bool,
}

impl StepAdapter {
    pub fn new(initial: &[f64], target: f64) -> Self {
        let n = initial.len();
        Self {
            log_step: initial.iter().map(|s| s.ln()).collect(),
            step: initial.to_vec(),
            window_accepts: vec![0; n],
            window_tries: vec![0; n],
            total_accepts: vec![0; n],
            total_tries: vec![0; n],
            windows: 0,
            target,
            frozen: false,
        }
    }

    pub fn len(&self) -> usize {
        self.log_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_step.is_empty()
    }

    #[inline]
    pub fn step(&self, slot: usize) -> f64 {
        self.step[slot]
    }

    /// Gaussian proposal increment for `slot`.
    #[inline]
    pub fn propose<R: Rng>(&self, slot: usize, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.step(slot) * z
    }

    #[inline]
    pub fn record(&mut self, slot: usize, accepted: bool) {
        self.window_tries[slot] += 1;
        self.total_tries[slot] += 1;
        if accepted {
            self.window_accepts[slot] += 1;
            self.total_accepts[slot] += 1;
        }
    }

    /// Close the current window: update steps (unless frozen) and reset the
    /// window counters.
    pub fn end_window(&mut self) {
        if !self.frozen {
            self.windows += 1;
            let gamma = (1.0 / f64::from(self.windows).sqrt()).min(1.0);
            for i in 0..self.log_step.len() {
                let tries = self.window_tries[i];
                if tries == 0 {
                    continue;
                }
                let rate = f64::from(self.window_accepts[i]) / f64::from(tries);
                self.log_step[i] = (self.log_step[i] + gamma * (rate - self.target)).clamp(-30.0, 30.0);
                self.step[i] = self.log_step[i].exp();
            }
        }
        self.window_accepts.iter_mut().for_each(|a| *a = 0);
        self.window_tries.iter_mut().for_each(|t| *t = 0);
    }

    /// Stop adapting and reset the acceptance totals.
    pub fn freeze(&mut self) {
        self.frozen = true;
        self.total_accepts.iter_mut().for_each(|a| *a = 0);
        self.total_tries.iter_mut().for_each(|t| *t = 0);
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn steps(&self) -> Vec<f64> {
        self.step.clone()
    }

    /// Accepted and attempted counts summed over `slots` since the last reset.
    pub fn totals(&self, slots: std::ops::Range<usize>) -> (u64, u64) {
        slots.fold((0, 0), |(a, t), i| {
            (a + self.total_accepts[i], t + self.total_tries[i])
        })
    }
}
