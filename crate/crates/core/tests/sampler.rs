mod common;

use common::{batch_mean_se, ks_statistic, normal_cdf, GaussianToy, InterceptToy};
use nma_outlier::data::smoking_cessation;
use nma_outlier::mcmc::{sample, sample_target, sample_tempered, SamplerConfig};
use nma_outlier::model::{ModelSpec, PriorConfig};

fn cfg(iterations: usize, burn_in: usize, seed: u64) -> SamplerConfig {
    SamplerConfig {
        iterations,
        burn_in,
        seed,
        ..SamplerConfig::default()
    }
}

/// Mean and variance checks against known moments, 3 Monte Carlo errors each.
fn assert_moments(chains: &[Vec<f64>], mean: f64, var: f64) {
    let se_mean = batch_mean_se(chains, 25);
    let sq: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| c.iter().map(|x| (x - mean).powi(2)).collect())
        .collect();
    let se_var = batch_mean_se(&sq, 25);
    let n: usize = chains.iter().map(Vec::len).sum();
    let m = chains.iter().flatten().sum::<f64>() / n as f64;
    let v = sq.iter().flatten().sum::<f64>() / n as f64;
    assert!((m - mean).abs() < 3.0 * se_mean, "mean {m} vs {mean} (se {se_mean})");
    assert!((v - var).abs() < 3.0 * se_var, "variance {v} vs {var} (se {se_var})");
}

#[test]
fn intercept_toy_matches_quadrature() {
    let toy = InterceptToy {
        r: 7,
        n: 10,
        prior_sd: 1000f64.sqrt(),
    };
    let (mean, var) = toy.quadrature_moments(-10.0, 10.0);
    let s = sample_target(&toy, &cfg(60_000, 5_000, 11), 1.0).unwrap();
    assert_moments(&s.traces(0), mean, var);
}

#[test]
fn gaussian_toy_matches_closed_form() {
    let toy = GaussianToy {
        y: [1.3, -0.4],
        s: [0.5, 2.0],
        p: [3.0, 1.0],
    };
    let s = sample_target(&toy, &cfg(60_000, 5_000, 12), 1.0).unwrap();
    for (j, (mean, var)) in toy.posterior().into_iter().enumerate() {
        assert_moments(&s.traces(j), mean, var);
    }
    let x = s.pooled(0);
    let y = s.pooled(1);
    let (mx, my) = (
        x.iter().sum::<f64>() / x.len() as f64,
        y.iter().sum::<f64>() / y.len() as f64,
    );
    let cov = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.len() as f64;
    let scale = (toy.posterior()[0].1 * toy.posterior()[1].1).sqrt();
    assert!(cov.abs() < 0.05 * scale, "cross covariance {cov}");
}

#[test]
fn tempered_to_zero_recovers_the_priors() {
    let ds = smoking_cessation();
    let priors = PriorConfig::default();
    let c = SamplerConfig {
        thin: 20,
        ..cfg(102_000, 2_000, 5)
    };
    let s = sample_tempered(&ds, &ModelSpec::standard(priors.clone()), &c, 0.0).unwrap();
    assert_eq!(s.total_draws(), 10_000);
    let layout = s.layout().unwrap();
    let sd = priors.normal_sd;
    for p in [layout.mu(0), layout.mu(7), layout.theta(2), layout.theta(4)] {
        let d = ks_statistic(&s.pooled(p), |x| normal_cdf(x / sd));
        assert!(d < 0.05, "{}: KS {d}", s.names()[p]);
    }
    let d = ks_statistic(&s.pooled(layout.tau2()), |x| (x / priors.tau_upper).clamp(0.0, 1.0));
    assert!(d < 0.05, "tau2: KS {d}");
}

#[test]
fn fixed_seed_is_reproducible_across_thread_counts() {
    let ds = smoking_cessation();
    let spec = ModelSpec::standard(PriorConfig::default());
    let c = cfg(3_000, 1_000, 77);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample(&ds, &spec, &c).unwrap())
    };
    let a = run(1);
    let b = run(3);
    for p in 0..a.dim() {
        assert_eq!(a.pooled(p), b.pooled(p));
    }
    let other = sample(&ds, &spec, &c.clone().with_seed(78)).unwrap();
    assert_ne!(a.pooled(0), other.pooled(0));
}

#[test]
fn smoking_fit_converges_at_desk_scale() {
    let ds = smoking_cessation();
    let s = sample(&ds, &ModelSpec::standard(PriorConfig::default()), &SamplerConfig::desk()).unwrap();
    let (name, r) = s.max_rhat().unwrap();
    assert!(r < 1.1, "{name}: {r}");
    for a in &s.accept_rates {
        assert!(a.rate > 0.05 && a.rate < 0.95, "{}: {}", a.block, a.rate);
    }
}
