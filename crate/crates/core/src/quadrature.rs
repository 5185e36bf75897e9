//! One-dimensional integrals of a binomial likelihood against a normal
//! density on the log-odds scale.

use std::f64::consts::PI;

use crate::model::{binomial_kernel, expit, ln_binomial_coefficient};

/// `ln ∫ Bin(r | n, expit(a + s)) N(s; m, v) ds`, binomial coefficient
/// included. With `v = 0` this is the binomial log-pmf at `a + m`.
pub fn log_binomial_normal(r: u64, n: u64, a: f64, m: f64, v: f64) -> f64 {
    let coef = ln_binomial_coefficient(n, r);
    if v <= 0.0 {
        return coef + binomial_kernel(r, n, a + m);
    }
    let rf = r as f64;
    let nf = n as f64;
    let h = |s: f64| binomial_kernel(r, n, a + s) - 0.5 * (s - m) * (s - m) / v;

    // The integrand is log-concave, so damped Newton finds its mode.
    let mut s = m;
    let mut hs = h(s);
    for _ in 0..200 {
        let p = expit(a + s);
        let grad = rf - nf * p - (s - m) / v;
        let curv = nf * p * (1.0 - p) + 1.0 / v;
        let step = grad / curv;
        let mut t = 1.0;
        let mut next = s + step;
        let mut hn = h(next);
        while hn < hs && t > 1e-12 {
            t *= 0.5;
            next = s + t * step;
            hn = h(next);
        }
        let moved = (next - s).abs();
        if hn >= hs {
            s = next;
            hs = hn;
        }
        if moved < 1e-12 * (1.0 + s.abs()) {
            break;
        }
    }
    let p = expit(a + s);
    let scale = 1.0 / (nf * p * (1.0 - p) + 1.0 / v).sqrt();

    const DROP: f64 = 45.0;
    let bound = |dir: f64| {
        let mut w = scale;
        for _ in 0..200 {
            if h(s + dir * w) < hs - DROP {
                break;
            }
            w *= 2.0;
        }
        s + dir * w
    };
    let lo = bound(-1.0);
    let hi = bound(1.0);
    let f = |x: f64| (h(x) - hs).exp();
    coef + hs + trapezoid(&f, lo, hi, 0.5 * scale).ln() - 0.5 * (2.0 * PI * v).ln()
}

/// Trapezoid rule with step halving. For smooth integrands that are
/// negligible at both ends it converges geometrically in the number of
/// points, so a few refinements reach near machine precision.
fn trapezoid(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, initial_step: f64) -> f64 {
    let mut n = ((hi - lo) / initial_step).ceil().max(8.0) as usize;
    let mut step = (hi - lo) / n as f64;
    let mut total = 0.5 * (f(lo) + f(hi)) + (1..n).map(|i| f(lo + i as f64 * step)).sum::<f64>();
    let mut estimate = total * step;
    for _ in 0..14 {
        total += (0..n).map(|i| f(lo + (i as f64 + 0.5) * step)).sum::<f64>();
        n *= 2;
        step *= 0.5;
        let next = total * step;
        let converged = (next - estimate).abs() <= 1e-10 * next;
        estimate = next;
        if converged {
            break;
        }
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::binomial_log_pmf_logit;

    /// Plain trapezoid on a wide fine grid.
    fn brute(r: u64, n: u64, a: f64, m: f64, v: f64) -> f64 {
        let sd = v.sqrt();
        let (lo, hi) = (m - 12.0 * sd - 30.0, m + 12.0 * sd + 30.0);
        let k = 400_000;
        let dx = (hi - lo) / k as f64;
        let mut acc = 0.0;
        for i in 0..=k {
            let s = lo + i as f64 * dx;
            let w = if i == 0 || i == k { 0.5 } else { 1.0 };
            let lpdf = -0.5 * (2.0 * PI * v).ln() - 0.5 * (s - m).powi(2) / v;
            acc += w * (binomial_log_pmf_logit(r, n, a + s) + lpdf).exp();
        }
        (acc * dx).ln()
    }

    #[test]
    fn matches_brute_force() {
        for &(r, n, a, m, v) in &[
            (3u64, 10u64, 0.0, 0.0, 0.5),
            (0, 125, 0.3, 0.0, 1000.0),
            (125, 125, -0.2, 0.5, 0.01),
            (40, 90, -1.0, 0.2, 2.0),
            (0, 60, 0.0, 0.0, 0.096),
        ] {
            let got = log_binomial_normal(r, n, a, m, v);
            let want = brute(r, n, a, m, v);
            assert!((got - want).abs() < 1e-6, "{r} {n} {a} {m} {v}: {got} vs {want}");
        }
    }

    #[test]
    fn zero_variance_is_plain_pmf() {
        let got = log_binomial_normal(4, 9, 0.3, -0.1, 0.0);
        assert!((got - binomial_log_pmf_logit(4, 9, 0.2)).abs() < 1e-12);
    }
}
