use nma_outlier::simgen::{generate, scenario, scenario_grid, true_effects, Geometry, SimScenario};
use std::collections::BTreeMap;

fn residuals(sc: &SimScenario, reps: u64) -> (Vec<f64>, Vec<f64>) {
    let mut clean = Vec::new();
    let mut outlying = Vec::new();
    for rep in 0..reps {
        let net = generate(&sc.with_seed(1000 + rep)).unwrap();
        let th = |k: usize| if k == 1 { 0.0 } else { net.truth[k - 2] };
        let outliers = net.outlier_indices();
        for (i, s) in net.dataset.studies().iter().enumerate() {
            let b = s.baseline();
            let dir = outliers
                .iter()
                .position(|&o| o == i)
                .map(|j| net.outlier_directions[j] as f64);
            for (c, k) in s.contrast_treatments().enumerate() {
                let r = net.study_effects[i][c] - (th(k) - th(b));
                match dir {
                    Some(d) => outlying.push(r - d * net.shift),
                    None => clean.push(r),
                }
            }
        }
    }
    (clean, outlying)
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn study_effects_follow_the_heterogeneity_distribution() {
    let sc = scenario(8).unwrap();
    assert_eq!(sc.geometry, Geometry::Balanced100);
    assert_eq!(sc.tau2, 0.287);
    let (clean, outlying) = residuals(&sc, 20);
    let (m, v) = mean_var(&clean);
    let n = clean.len() as f64;
    assert!(m.abs() < 4.0 * (0.287 / n).sqrt(), "mean {m}");
    // variance of a sample variance of normals is 2 sigma^4 / (n - 1)
    assert!((v - 0.287).abs() < 4.0 * 0.287 * (2.0 / (n - 1.0)).sqrt(), "variance {v}");
    let (mo, _) = mean_var(&outlying);
    assert_eq!(outlying.len(), 60);
    assert!(mo.abs() < 4.0 * (0.287f64 / 60.0).sqrt());
}

#[test]
fn no_heterogeneity_means_exact_effects() {
    let (clean, outlying) = residuals(&scenario(1).unwrap(), 3);
    assert!(clean.iter().chain(&outlying).all(|r| r.abs() < 1e-12));
}

#[test]
fn arm_sizes_and_baseline_risks() {
    let mut sizes = Vec::new();
    let mut control = Vec::new();
    for rep in 0..20 {
        let net = generate(&scenario(1).unwrap().null_variant().with_seed(rep)).unwrap();
        for s in net.dataset.studies() {
            for a in s.arms() {
                assert!((50..=200).contains(&a.total));
                sizes.push(a.total as f64);
            }
            control.push(s.arms()[0].proportion());
        }
    }
    let (ms, vs) = mean_var(&sizes);
    assert!((ms - 125.0).abs() < 4.0 * (vs / sizes.len() as f64).sqrt(), "sizes {ms}");
    let (mc, vc) = mean_var(&control);
    assert!((mc - 0.5).abs() < 4.0 * (vc / control.len() as f64).sqrt(), "control {mc}");
}

#[test]
fn outliers_are_two_arm_studies_with_both_signs() {
    let mut signs = BTreeMap::new();
    for rep in 0..40 {
        let net = generate(&scenario(32).unwrap().with_seed(rep)).unwrap();
        assert_eq!(net.outlier_ids.len(), 3);
        for i in net.outlier_indices() {
            assert_eq!(net.dataset.study(i).num_arms(), 2);
        }
        for d in &net.outlier_directions {
            *signs.entry(*d).or_insert(0) += 1;
        }
        assert!(!net.outlier_contrasts().is_empty());
    }
    assert!(signs[&1] > 20 && signs[&-1] > 20, "{signs:?}");
}

#[test]
fn generation_is_deterministic() {
    let sc = scenario(20).unwrap().with_seed(5);
    assert_eq!(generate(&sc).unwrap(), generate(&sc).unwrap());
    assert_ne!(generate(&sc).unwrap().dataset, generate(&sc.with_seed(6)).unwrap().dataset);
}

#[test]
fn grid_covers_every_combination() {
    let grid = scenario_grid();
    assert_eq!(grid.len(), 32);
    for g in Geometry::ALL {
        for outliers in [1, 3] {
            let taus: Vec<f64> = grid
                .iter()
                .filter(|s| s.geometry == g && s.num_outliers == outliers)
                .map(|s| s.tau2)
                .collect();
            assert_eq!(taus, vec![0.0, 0.032, 0.096, 0.287]);
        }
    }
    let s17 = scenario(17).unwrap();
    assert_eq!((s17.geometry, s17.num_outliers, s17.tau2), (Geometry::UnbalancedFair27, 1, 0.0));
    assert_eq!(true_effects(5), vec![0.25, 0.5, 0.75, 1.0]);
    for g in Geometry::ALL {
        let net = generate(&SimScenario::new(g, 0.0, 0)).unwrap();
        assert_eq!(net.dataset.num_studies(), g.layout().num_studies());
        assert!(net.dataset.connectivity().connected);
    }
}
