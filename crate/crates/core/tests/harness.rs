use std::fs;
use std::path::Path;

use nma_outlier::harness::{aggregate, run_experiment, ExperimentConfig};
use nma_outlier::mcmc::SamplerConfig;

fn small(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(vec![25, 28], dir);
    cfg.replications = 3;
    cfg.seed = 11;
    cfg.mcmc = SamplerConfig {
        iterations: 2_000,
        burn_in: 800,
        ..SamplerConfig::desk()
    };
    cfg
}

fn outputs(dir: &Path) -> Vec<String> {
    ["table1.csv", "table2.csv", "bias.csv", "failures.txt"]
        .iter()
        .map(|f| fs::read_to_string(dir.join(f)).unwrap())
        .collect()
}

#[test]
fn interrupted_run_resumes_to_the_same_aggregates() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let full = run_experiment(&small(a.path())).unwrap();

    let mut partial = small(b.path());
    partial.replications = 2;
    run_experiment(&partial).unwrap();
    // A replication that was cut off before its marker was written.
    let dir = b.path().join("checkpoints").join("scenario_25");
    fs::remove_file(dir.join("rep_0001.done")).unwrap();
    fs::write(dir.join("rep_0001_outliers.csv"), "garbage").unwrap();
    let resumed = run_experiment(&small(b.path())).unwrap();

    assert_eq!(full, resumed);
    assert_eq!(outputs(a.path()), outputs(b.path()));
    assert_eq!(aggregate(&small(b.path())).unwrap(), resumed);
}

#[derive(serde::Deserialize)]
struct Outlier {
    p_l: f64,
    p_sdo: f64,
    bf: f64,
}

#[test]
fn aggregates_match_the_checkpoint_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let result = run_experiment(&cfg).unwrap();
    assert_eq!(result.table1.len(), 2);
    assert_eq!(result.table2.len(), 2);
    for row in &result.table1 {
        let cdir = dir.path().join("checkpoints").join(format!("scenario_{}", row.scenario));
        let mut recs = Vec::new();
        for rep in 0..cfg.replications {
            if cdir.join(format!("rep_{rep:04}.done")).exists() {
                let mut r = csv::Reader::from_path(cdir.join(format!("rep_{rep:04}_outliers.csv"))).unwrap();
                recs.extend(r.deserialize::<Outlier>().map(Result::unwrap));
            }
        }
        assert_eq!(recs.len() + row.failed, cfg.replications);
        let n = recs.len() as f64;
        assert_eq!(row.mean_p_l, recs.iter().map(|r| r.p_l).sum::<f64>() / n);
        assert_eq!(row.mean_p_sdo, recs.iter().map(|r| r.p_sdo).sum::<f64>() / n);
        assert_eq!(row.mean_bf, recs.iter().map(|r| r.bf.min(1e6)).sum::<f64>() / n);
    }
    for row in &result.table2 {
        for p in [row.fp_bf, row.fp_pl, row.fp_psdo, row.fp_pg, row.fp_any] {
            assert!((0.0..=1.0).contains(&p));
        }
    }
    let t1 = fs::read_to_string(dir.path().join("table1.csv")).unwrap();
    assert!(t1.starts_with("scenario,tau2,outlier_slot,mean_bf,mean_p_L,mean_p_SDO,mean_p_G"));
    let t2 = fs::read_to_string(dir.path().join("table2.csv")).unwrap();
    assert!(t2.starts_with("design,tau2,fp_bf,fp_pL,fp_pSDO,fp_pG"));
    let bias = fs::read_to_string(dir.path().join("bias.csv")).unwrap();
    assert!(bias.starts_with("scenario,contrast,"));
    assert!(bias.contains("bias_plain,bias_downweighted"));
}

#[test]
fn failed_replications_are_counted_not_averaged() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.scenarios = vec![25];
    cfg.replications = 2;
    cfg.detect.rhat_limit = 1.0;
    let result = run_experiment(&cfg).unwrap();
    assert_eq!(result.table1[0].failed, 2);
    assert_eq!(result.table1[0].replications, 0);
    assert!(result.table1[0].mean_p_l.is_nan());
    assert_eq!(result.table2[0].failed, 2);
    assert_eq!(result.failures.len(), 4);
    let log = fs::read_to_string(dir.path().join("failures.txt")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.contains("R-hat"));
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.replications = 0;
    assert!(run_experiment(&cfg).is_err());
    cfg.replications = 1;
    cfg.scenarios = vec![0];
    assert!(run_experiment(&cfg).is_err());
}
