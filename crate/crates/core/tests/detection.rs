use nma_outlier::data::{smoking_cessation, Arm, NetworkDataset, Study};
use nma_outlier::detection::{
    detect, f_sdo, pool_stats, ppp_values, replicate_from_samples, DetectOptions, PpcOptions, PredictiveMode,
};
use nma_outlier::error::NmaError;
use nma_outlier::mcmc::{sample, SamplerConfig};
use nma_outlier::model::{expit, ModelSpec, PriorConfig};
use nma_outlier::simgen::{generate, scenario};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn short(seed: u64) -> SamplerConfig {
    SamplerConfig {
        iterations: 1_500,
        burn_in: 1_000,
        seed,
        ..SamplerConfig::default()
    }
}

proptest! {
    #[test]
    fn sdo_is_affine_invariant(
        pool in prop::collection::vec(0.0f64..1.0, 6..60),
        scale in 0.01f64..10.0,
        shift in -5.0f64..5.0,
        start in 0usize..4,
        len in 1usize..3,
    ) {
        prop_assume!(pool_stats(&pool).map(|s| s.mad > 1e-6).unwrap_or(false));
        let moved: Vec<f64> = pool.iter().map(|x| scale * x + shift).collect();
        let a = f_sdo(&pool, start..start + len).unwrap().value;
        let b = f_sdo(&moved, start..start + len).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{} vs {}", a, b);
    }
}

#[test]
fn sdo_halving_map_example() {
    let pool = [0.1, 0.2, 0.35, 0.4, 0.8, 0.05, 0.3];
    let moved: Vec<f64> = pool.iter().map(|x| 0.5 * x + 0.1).collect();
    for r in [0..2, 2..4, 4..7] {
        let a = f_sdo(&pool, r.clone()).unwrap().value;
        let b = f_sdo(&moved, r).unwrap().value;
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn constant_pool_is_degenerate() {
    assert!(matches!(f_sdo(&[0.3; 8], 0..2), Err(NmaError::DegeneratePool)));
}

#[test]
fn p_values_have_granularity_one_over_s() {
    let ds = smoking_cessation();
    let samples = sample(&ds, &ModelSpec::standard(PriorConfig::default()), &short(4)).unwrap();
    assert_eq!(samples.total_draws(), 1000);
    let opts = PpcOptions {
        max_draws: None,
        ..PpcOptions::default()
    };
    for row in ppp_values(&ds, &samples, &opts).unwrap() {
        for p in [&row.p_l, &row.p_sdo, &row.p_g] {
            assert_eq!(p.num_draws, 1000);
            assert!((0.0..=1.0).contains(&p.value));
            let scaled = p.value * 1000.0;
            assert!((scaled - scaled.round()).abs() < 1e-9, "{}", p.value);
        }
    }
}

#[test]
fn too_few_draws_is_an_error() {
    let ds = smoking_cessation();
    let c = SamplerConfig {
        iterations: 1_200,
        ..short(4)
    };
    let samples = sample(&ds, &ModelSpec::standard(PriorConfig::default()), &c).unwrap();
    assert!(ppp_values(&ds, &samples, &PpcOptions::default()).is_err());
}

#[test]
fn outlier_gets_small_likelihood_p_value() {
    let net = generate(&scenario(17).unwrap().with_seed(3)).unwrap();
    let samples = sample(&net.dataset, &ModelSpec::standard(PriorConfig::default()), &SamplerConfig::desk()).unwrap();
    let ps = ppp_values(&net.dataset, &samples, &PpcOptions::default()).unwrap();
    let out = net.outlier_indices()[0];
    assert!(ps[out].p_l.value < 0.05, "outlier p_L {}", ps[out].p_l.value);
    let median_other = {
        let mut v: Vec<f64> = (0..ps.len()).filter(|&i| i != out).map(|i| ps[i].p_l.value).collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    assert!(median_other > 0.2, "typical p_L {median_other}");
}

fn two_study_toy() -> NetworkDataset {
    let study = |id: &str, r1, r2| {
        Study::new(id, vec![Arm::new(1, r1, 100).unwrap(), Arm::new(2, r2, 100).unwrap()]).unwrap()
    };
    NetworkDataset::new(vec![study("a", 20, 35), study("b", 30, 38)], 2, None).unwrap()
}

/// Mean replicated proportion per arm against a forward simulation of the
/// predictive probability at the same draws.
fn forward_simulation_check(mode: PredictiveMode) {
    let ds = two_study_toy();
    let samples = sample(&ds, &ModelSpec::standard(PriorConfig::default()), &SamplerConfig::desk()).unwrap();
    let layout = samples.layout().unwrap();
    let s_total = samples.total_draws();
    let draws: Vec<usize> = (0..s_total).step_by(4).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..2 {
        for (pos, arm) in ds.study(i).arms().iter().enumerate() {
            let mut rep = Vec::new();
            let mut oracle = Vec::new();
            for &s in &draws {
                let x = samples.pooled_draw(s);
                let r = replicate_from_samples(&ds, &samples, s, mode, 5).unwrap();
                rep.push(r.study(i)[pos] as f64 / arm.total as f64);
                let mu = x[layout.mu(i)];
                oracle.push(if pos == 0 {
                    expit(mu)
                } else {
                    let base = mu + x[layout.theta(2)];
                    match mode {
                        PredictiveMode::Conditional => expit(base + x[layout.delta(i, 0)]),
                        PredictiveMode::Marginal => {
                            let sd = x[layout.tau2()].sqrt();
                            (0..400)
                                .map(|_| expit(base + sd * rng.sample::<f64, _>(StandardNormal)))
                                .sum::<f64>()
                                / 400.0
                        }
                    }
                });
            }
            let n = rep.len() as f64;
            let m_rep = rep.iter().sum::<f64>() / n;
            let m_or = oracle.iter().sum::<f64>() / n;
            let diffs: Vec<f64> = rep.iter().zip(&oracle).map(|(a, b)| a - b).collect();
            let md = diffs.iter().sum::<f64>() / n;
            let se = (diffs.iter().map(|d| (d - md).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
            assert!((m_rep - m_or).abs() < 4.0 * se, "{mode:?} study {i} arm {pos}: {m_rep} vs {m_or} (se {se})");
        }
    }
}

#[test]
fn conditional_replicates_match_forward_simulation() {
    forward_simulation_check(PredictiveMode::Conditional);
}

#[test]
fn marginal_replicates_match_forward_simulation() {
    forward_simulation_check(PredictiveMode::Marginal);
}

#[test]
fn smoking_detection_flags_study_three() {
    let report = detect(&smoking_cessation(), &SamplerConfig::desk().with_seed(42), &DetectOptions::default()).unwrap();
    assert!(report.flagged().contains(&"3"), "flagged {:?}", report.flagged());
    let csv = report.to_csv().unwrap();
    assert!(csv.starts_with("study,bf,bf_class,p_L,p_SDO,p_G,flagged\n"));
    assert_eq!(csv.lines().count(), 25);
}

#[test]
fn failed_convergence_is_a_diagnostic_error() {
    let opts = DetectOptions {
        rhat_limit: 1.0001,
        ..DetectOptions::default()
    };
    let err = detect(&smoking_cessation(), &short(1), &opts).unwrap_err();
    assert!(err.is_diagnostic(), "{err}");
}
