mod common;

use common::{ln_choose, BetaBinomialToy, GaussianToy, InterceptToy};
use nma_outlier::marglik::{
    bayes_factor, default_ladder, savage_dickey_from_draws, stepping_stone, BfEstimator, BfOptions,
    DensityMethod, EvidenceThresholds,
};
use nma_outlier::mcmc::{sample_target, SamplerConfig};
use nma_outlier::model::PriorConfig;
use nma_outlier::simgen::{generate, scenario};

fn cfg(seed: u64) -> SamplerConfig {
    SamplerConfig {
        iterations: 22_000,
        burn_in: 2_000,
        seed,
        ..SamplerConfig::default()
    }
}

const TOY: BetaBinomialToy = BetaBinomialToy { r: 3, n: 10 };

#[test]
fn beta_binomial_evidence() {
    let est = stepping_stone(|t, c| sample_target(&TOY, c, t), &cfg(1), &default_ladder(16)).unwrap();
    let exact = (1.0f64 / 11.0).ln();
    assert!((est.value - exact).abs() < 0.05, "{} vs {exact}", est.value);
    assert!(est.mc_error > 0.0 && est.mc_error < 0.05);
}

#[test]
fn gaussian_evidence() {
    let toy = GaussianToy {
        y: [1.3, -0.4],
        s: [0.5, 2.0],
        p: [3.0, 1.0],
    };
    let est = stepping_stone(|t, c| sample_target(&toy, c, t), &cfg(2), &default_ladder(16)).unwrap();
    assert!(
        (est.value - toy.log_evidence()).abs() < 0.05,
        "{} vs {}",
        est.value,
        toy.log_evidence()
    );
}

fn coarse_and_fine<T: nma_outlier::mcmc::LogTarget>(toy: &T, seed: u64) -> (f64, f64, f64) {
    let fine = stepping_stone(|t, c| sample_target(toy, c, t), &cfg(seed), &default_ladder(16)).unwrap();
    let coarse = stepping_stone(|t, c| sample_target(toy, c, t), &cfg(seed), &[0.0, 1.0]).unwrap();
    assert_eq!(coarse.rungs.len(), 1);
    (coarse.value, coarse.mc_error, fine.mc_error)
}

#[test]
fn ladder_refinement_reduces_the_error() {
    let (value, coarse, fine) = coarse_and_fine(&TOY, 3);
    assert!((value - (1.0f64 / 11.0).ln()).abs() < 4.0 * coarse);
    assert!(coarse > fine, "coarse {coarse} fine {fine}");
    assert!(stepping_stone(|t, c| sample_target(&TOY, c, t), &cfg(3), &[0.0, 0.5]).is_err());

    // A vaguer prior makes the single prior-to-posterior step harder.
    let vague = InterceptToy {
        r: 3,
        n: 10,
        prior_sd: 1000f64.sqrt(),
    };
    let (value_v, coarse_v, fine_v) = coarse_and_fine(&vague, 3);
    assert!(value_v.is_finite());
    assert!(coarse_v / fine_v > coarse / fine, "vague {} flat {}", coarse_v / fine_v, coarse / fine);
}

#[test]
fn savage_dickey_agrees_with_stepping_stone_on_the_toy() {
    // Alternative: free logit with the logistic prior. Null: probability 1/2.
    let log_m0 = ln_choose(10, 3) - 10.0 * 2f64.ln();
    let exact = (1.0f64 / 11.0).ln() - log_m0;

    let ss = stepping_stone(|t, c| sample_target(&TOY, c, t), &cfg(4), &default_ladder(16)).unwrap();
    let ss_log_bf = ss.value - log_m0;

    let post = sample_target(&TOY, &cfg(5), 1.0).unwrap();
    let chains: Vec<Vec<Vec<f64>>> = post
        .traces(0)
        .into_iter()
        .map(|c| c.into_iter().map(|x| vec![x]).collect())
        .collect();
    let sd = savage_dickey_from_draws(
        "toy",
        &chains,
        0.25f64.ln(),
        f64::NAN,
        DensityMethod::Kde,
        &EvidenceThresholds::default(),
    )
    .unwrap();

    let combined = (ss.mc_error.powi(2) + sd.mc_error.powi(2)).sqrt();
    assert!(
        (sd.log_value - ss_log_bf).abs() < 3.0 * combined,
        "sd {} ss {ss_log_bf} combined error {combined}",
        sd.log_value
    );
    assert!(
        (sd.log_value - exact).abs() < 3.0 * sd.mc_error,
        "sd {} ({}) exact {exact}",
        sd.log_value,
        sd.mc_error
    );
}

#[test]
fn savage_dickey_agrees_with_stepping_stone_on_a_network() {
    let mut sc = scenario(25).unwrap();
    sc.s_range = (0.04, 0.16);
    let net = generate(&sc.with_seed(9)).unwrap();
    let study = net.outlier_indices()[0];
    let priors = PriorConfig {
        eta_sd: Some(3.0),
        ..PriorConfig::default()
    };
    let opts = BfOptions::default();
    let c = SamplerConfig::desk().with_seed(6);
    let sd = bayes_factor(&net.dataset, study, &priors, &c, BfEstimator::SavageDickey, &opts).unwrap();
    let ss = bayes_factor(&net.dataset, study, &priors, &c, BfEstimator::SteppingStone, &opts).unwrap();
    let combined = (ss.mc_error.powi(2) + sd.mc_error.powi(2)).sqrt();
    assert!(
        (sd.log_value - ss.log_value).abs() < 3.0 * combined,
        "sd {} ({}) ss {} ({})",
        sd.log_value,
        sd.mc_error,
        ss.log_value,
        ss.mc_error
    );
}

#[test]
fn bayes_factor_shrinks_as_the_shift_prior_widens() {
    let mut sc = scenario(25).unwrap();
    sc.s_range = (0.04, 0.25);
    let net = generate(&sc.with_seed(21)).unwrap();
    let study = net.outlier_indices()[0];
    let c = SamplerConfig::desk().with_seed(8);
    let bfs: Vec<f64> = [10.0, 1000f64.sqrt(), 100.0]
        .into_iter()
        .map(|sd| {
            let priors = PriorConfig {
                eta_sd: Some(sd),
                ..PriorConfig::default()
            };
            let bf = bayes_factor(&net.dataset, study, &priors, &c, BfEstimator::SavageDickey, &BfOptions::default())
                .unwrap();
            assert_eq!(bf.eta_prior_sd, sd);
            bf.log_value
        })
        .collect();
    assert!(bfs[0] > bfs[1] && bfs[1] > bfs[2], "{bfs:?}");
}
