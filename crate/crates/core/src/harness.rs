//! Simulation experiments: generate, detect, down-weight, aggregate.
//!
//! Every replication writes flat CSV checkpoints under
//! `<output_dir>/checkpoints` and a completion marker last, so an
//! interrupted run resumes where it stopped. Aggregates are always rebuilt
//! from the checkpoint files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{detect_with_samples, DetectOptions, DetectionReport};
use crate::downweight::{downweighted_fit, relative_bias, summarize, DownweightPlan};
use crate::error::{NmaError, Result};
use crate::mcmc::{derive_seed, SamplerConfig};
use crate::model::BetaPrior;
use crate::simgen::{generate, scenario_grid, Geometry, SimScenario, TAU2_GRID};

/// Bayes factors above this are truncated before averaging, so one
/// astronomically large value cannot dominate a mean.
pub const BF_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Scenario ids from the 32-scenario grid.
    pub scenarios: Vec<usize>,
    pub replications: usize,
    pub mcmc: SamplerConfig,
    pub detect: DetectOptions,
    #[serde(skip)]
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Run the contaminated scenarios themselves.
    #[serde(default = "yes")]
    pub contaminated_runs: bool,
    /// Also run the uncontaminated variant of every scenario.
    pub null_runs: bool,
    /// Down-weight flagged studies and record relative bias.
    pub downweight: bool,
    pub downweight_prior: BetaPrior,
    /// Override the scenario's outlier severity.
    pub severity: Option<f64>,
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    /// Desk-scale defaults: 50 replications of 10,000 iterations.
    pub fn desk(scenarios: Vec<usize>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            scenarios,
            replications: 50,
            mcmc: SamplerConfig::desk(),
            detect: DetectOptions::default(),
            output_dir: output_dir.into(),
            seed: 1,
            contaminated_runs: true,
            null_runs: true,
            downweight: true,
            downweight_prior: BetaPrior::moderate(),
            severity: None,
        }
    }

    /// 1000 replications of 50,000 iterations.
    pub fn paper_scale(mut self) -> Self {
        self.replications = 1000;
        self.mcmc = SamplerConfig::default();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(NmaError::Config("replications must be at least 1".into()));
        }
        if !self.contaminated_runs && !self.null_runs {
            return Err(NmaError::Config("neither contaminated nor null runs selected".into()));
        }
        if self.scenarios.is_empty() {
            return Err(NmaError::Config("no scenarios selected".into()));
        }
        self.mcmc.validate()?;
        for &id in &self.scenarios {
            crate::simgen::scenario(id)?;
        }
        Ok(())
    }

    fn contaminated_list(&self) -> Vec<SimScenario> {
        if self.contaminated_runs {
            self.scenario_list()
        } else {
            Vec::new()
        }
    }

    fn scenario_list(&self) -> Vec<SimScenario> {
        let grid = scenario_grid();
        self.scenarios
            .iter()
            .map(|&id| {
                let mut s = grid[id - 1].clone();
                if let Some(sev) = self.severity {
                    s.severity = sev;
                }
                s
            })
            .collect()
    }

    /// Null designs `(geometry, tau2)` implied by the selected scenarios.
    fn null_designs(&self) -> Vec<(Geometry, f64)> {
        let mut out: Vec<(Geometry, f64)> = Vec::new();
        if self.null_runs {
            for s in self.scenario_list() {
                if !out.iter().any(|&(g, t)| g == s.geometry && t == s.tau2) {
                    out.push((s.geometry, s.tau2));
                }
            }
        }
        out
    }
}

/// One induced outlier in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierRecord {
    pub slot: usize,
    pub study: String,
    pub bf: f64,
    pub log_bf: f64,
    pub p_l: f64,
    pub p_sdo: f64,
    pub p_g: f64,
    pub flagged: bool,
}

/// Relative bias of one contrast in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRecord {
    pub contrast: String,
    pub touched: bool,
    pub bias_plain: f64,
    pub bias_downweighted: f64,
}

/// False-positive counts of one null replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullRecord {
    pub studies: usize,
    pub fp_bf: usize,
    pub fp_pl: usize,
    pub fp_psdo: usize,
    pub fp_pg: usize,
    pub fp_any: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Row {
    pub scenario: usize,
    pub tau2: f64,
    pub outlier_slot: usize,
    pub mean_bf: f64,
    #[serde(rename = "mean_p_L")]
    pub mean_p_l: f64,
    #[serde(rename = "mean_p_SDO")]
    pub mean_p_sdo: f64,
    #[serde(rename = "mean_p_G")]
    pub mean_p_g: f64,
    pub mean_log10_bf: f64,
    pub detection_rate: f64,
    pub replications: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table2Row {
    pub design: String,
    pub tau2: f64,
    pub fp_bf: f64,
    #[serde(rename = "fp_pL")]
    pub fp_pl: f64,
    #[serde(rename = "fp_pSDO")]
    pub fp_psdo: f64,
    #[serde(rename = "fp_pG")]
    pub fp_pg: f64,
    pub fp_any: f64,
    pub replications: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasRow {
    pub scenario: usize,
    pub contrast: String,
    pub touched: bool,
    pub bias_plain: f64,
    pub bias_downweighted: f64,
    pub replications: usize,
}

/// Per scenario: how often down-weighting lowered the mean absolute
/// relative bias of the contrasts compared by outlying studies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasImprovement {
    pub scenario: usize,
    pub improved: usize,
    pub replications: usize,
}

impl BiasImprovement {
    pub fn fraction(&self) -> f64 {
        if self.replications == 0 {
            0.0
        } else {
            self.improved as f64 / self.replications as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub table1: Vec<Table1Row>,
    pub table2: Vec<Table2Row>,
    pub bias: Vec<BiasRow>,
    pub bias_improvement: Vec<BiasImprovement>,
    pub failures: Vec<String>,
}

impl ExperimentResult {
    pub fn table1_for(&self, scenario: usize) -> Vec<&Table1Row> {
        self.table1.iter().filter(|r| r.scenario == scenario).collect()
    }

    pub fn table2_for(&self, design: Geometry, tau2: f64) -> Option<&Table2Row> {
        self.table2
            .iter()
            .find(|r| r.design == design.name() && r.tau2 == tau2)
    }
}

fn contaminated_dir(root: &Path, scenario: usize) -> PathBuf {
    root.join("checkpoints").join(format!("scenario_{scenario:02}"))
}

fn null_dir(root: &Path, g: Geometry, tau2: f64) -> PathBuf {
    root.join("checkpoints").join(format!("null_{}_tau2_{tau2}", g.name()))
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(!rows.is_empty())
        .from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| NmaError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(NmaError::from)).collect()
}

enum Outcome {
    Done,
    Failed(String),
}

fn checkpoint_state(dir: &Path, rep: usize) -> Option<Outcome> {
    if dir.join(format!("rep_{rep:04}.done")).exists() {
        Some(Outcome::Done)
    } else {
        fs::read_to_string(dir.join(format!("rep_{rep:04}.failed")))
            .ok()
            .map(Outcome::Failed)
    }
}

/// The marker holds the replication's compute time in seconds.
fn mark_done(dir: &Path, rep: usize, start: Instant) -> Result<()> {
    write_atomic(
        &dir.join(format!("rep_{rep:04}.done")),
        &format!("{:.3}\n", start.elapsed().as_secs_f64()),
    )
}

fn mark_failed(dir: &Path, rep: usize, err: &NmaError) -> Result<()> {
    write_atomic(&dir.join(format!("rep_{rep:04}.failed")), &err.to_string())
}

fn flag_sets(report: &DetectionReport) -> NullRecord {
    let t = report.thresholds;
    let mut rec = NullRecord {
        studies: report.rows.len(),
        fp_bf: 0,
        fp_pl: 0,
        fp_psdo: 0,
        fp_pg: 0,
        fp_any: 0,
    };
    for r in &report.rows {
        rec.fp_bf += usize::from(r.bayes_factor.value > t.bf);
        rec.fp_pl += usize::from(r.p_l.value < t.p);
        rec.fp_psdo += usize::from(r.p_sdo.value < t.p);
        rec.fp_pg += usize::from(r.p_g.value < t.p);
        rec.fp_any += usize::from(r.flagged);
    }
    rec
}

fn run_contaminated(cfg: &ExperimentConfig, sc: &SimScenario, rep: usize, dir: &Path) -> Result<()> {
    let start = Instant::now();
    let seed = derive_seed(cfg.seed, &[sc.id as u64, rep as u64]);
    let net = generate(&sc.with_seed(seed))?;
    let mcmc = cfg.mcmc.clone().with_seed(derive_seed(seed, &[1]));
    let (report, samples) = detect_with_samples(&net.dataset, &mcmc, &cfg.detect)?;

    let outliers: Vec<OutlierRecord> = net
        .outlier_ids
        .iter()
        .enumerate()
        .map(|(slot, id)| {
            let row = report.row(id).expect("every study has a report row");
            OutlierRecord {
                slot: slot + 1,
                study: id.clone(),
                bf: row.bayes_factor.value,
                log_bf: row.bayes_factor.log_value,
                p_l: row.p_l.value,
                p_sdo: row.p_sdo.value,
                p_g: row.p_g.value,
                flagged: row.flagged,
            }
        })
        .collect();

    let mut bias = Vec::new();
    if cfg.downweight {
        let plain = summarize(&net.dataset, &samples, "full", &[])?;
        let flagged = report.flagged();
        let down = if flagged.is_empty() {
            plain.clone()
        } else {
            let plan = DownweightPlan::uniform(&flagged, cfg.downweight_prior)?;
            downweighted_fit(&net.dataset, &plan, &cfg.detect.priors, &mcmc)?.1
        };
        let touched = net.outlier_contrasts();
        let bp = relative_bias(&plain, &net.truth);
        let bd = relative_bias(&down, &net.truth);
        for (p, d) in bp.iter().zip(&bd) {
            bias.push(BiasRecord {
                contrast: format!("{}-{}", p.h, p.k),
                touched: touched.contains(&(p.h, p.k)),
                bias_plain: p.value,
                bias_downweighted: d.value,
            });
        }
    }

    write_atomic(
        &dir.join(format!("rep_{rep:04}_outliers.csv")),
        &to_csv(&outliers, &["slot", "study", "bf", "log_bf", "p_l", "p_sdo", "p_g", "flagged"])?,
    )?;
    write_atomic(
        &dir.join(format!("rep_{rep:04}_bias.csv")),
        &to_csv(&bias, &["contrast", "touched", "bias_plain", "bias_downweighted"])?,
    )?;
    mark_done(dir, rep, start)
}

fn run_null(cfg: &ExperimentConfig, g: Geometry, tau2: f64, rep: usize, dir: &Path) -> Result<()> {
    let start = Instant::now();
    let gi = Geometry::ALL.iter().position(|&x| x == g).expect("known geometry") as u64;
    let ti = TAU2_GRID.iter().position(|&x| x == tau2).unwrap_or(99) as u64;
    let seed = derive_seed(cfg.seed, &[0x6e75_6c6c, gi, ti, rep as u64]);
    let mut sc = SimScenario::new(g, tau2, 0);
    sc.seed = seed;
    let net = generate(&sc)?;
    let mcmc = cfg.mcmc.clone().with_seed(derive_seed(seed, &[1]));
    let (report, _) = detect_with_samples(&net.dataset, &mcmc, &cfg.detect)?;
    write_atomic(
        &dir.join(format!("rep_{rep:04}_null.csv")),
        &to_csv(&[flag_sets(&report)], &[])?,
    )?;
    mark_done(dir, rep, start)
}

enum Task {
    Contaminated(SimScenario, usize),
    Null(Geometry, f64, usize),
}

/// Run (or resume) the experiment and aggregate its checkpoints.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let root = &cfg.output_dir;
    let scenarios = cfg.contaminated_list();
    let nulls = cfg.null_designs();
    for s in &scenarios {
        fs::create_dir_all(contaminated_dir(root, s.id))?;
    }
    for &(g, t) in &nulls {
        fs::create_dir_all(null_dir(root, g, t))?;
    }
    write_atomic(&root.join("config.json"), &serde_json::to_string_pretty(cfg)?)?;

    let mut tasks = Vec::new();
    for rep in 0..cfg.replications {
        for s in &scenarios {
            if checkpoint_state(&contaminated_dir(root, s.id), rep).is_none() {
                tasks.push(Task::Contaminated(s.clone(), rep));
            }
        }
        for &(g, t) in &nulls {
            if checkpoint_state(&null_dir(root, g, t), rep).is_none() {
                tasks.push(Task::Null(g, t, rep));
            }
        }
    }
    info!("{} replication tasks to run", tasks.len());

    tasks.par_iter().try_for_each(|task| -> Result<()> {
        let (dir, rep, outcome) = match task {
            Task::Contaminated(s, rep) => {
                let dir = contaminated_dir(root, s.id);
                let out = run_contaminated(cfg, s, *rep, &dir);
                (dir, *rep, out)
            }
            Task::Null(g, t, rep) => {
                let dir = null_dir(root, *g, *t);
                let out = run_null(cfg, *g, *t, *rep, &dir);
                (dir, *rep, out)
            }
        };
        match outcome {
            Ok(()) => Ok(()),
            Err(e @ (NmaError::Io(_) | NmaError::Csv(_) | NmaError::Json(_))) => Err(e),
            Err(e) => {
                warn!("{} replication {rep} failed: {e}", dir.display());
                mark_failed(&dir, rep, &e)
            }
        }
    })?;

    let result = aggregate(cfg)?;
    write_outputs(root, &result)?;
    Ok(result)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Rebuild every aggregate from the checkpoint files alone.
pub fn aggregate(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let root = &cfg.output_dir;
    let mut result = ExperimentResult {
        table1: Vec::new(),
        table2: Vec::new(),
        bias: Vec::new(),
        bias_improvement: Vec::new(),
        failures: Vec::new(),
    };

    for s in cfg.contaminated_list() {
        let dir = contaminated_dir(root, s.id);
        let mut outliers: Vec<Vec<OutlierRecord>> = Vec::new();
        let mut bias: Vec<Vec<BiasRecord>> = Vec::new();
        let mut failed = 0;
        for rep in 0..cfg.replications {
            match checkpoint_state(&dir, rep) {
                Some(Outcome::Done) => {
                    outliers.push(read_csv(&dir.join(format!("rep_{rep:04}_outliers.csv")))?);
                    bias.push(read_csv(&dir.join(format!("rep_{rep:04}_bias.csv")))?);
                }
                Some(Outcome::Failed(msg)) => {
                    failed += 1;
                    result
                        .failures
                        .push(format!("scenario {} replication {rep}: {msg}", s.id));
                }
                None => {
                    return Err(NmaError::Config(format!(
                        "scenario {} replication {rep} has no checkpoint",
                        s.id
                    )))
                }
            }
        }
        for slot in 1..=s.num_outliers {
            let recs: Vec<&OutlierRecord> = outliers
                .iter()
                .filter_map(|rep| rep.iter().find(|r| r.slot == slot))
                .collect();
            result.table1.push(Table1Row {
                scenario: s.id,
                tau2: s.tau2,
                outlier_slot: slot,
                mean_bf: mean(recs.iter().map(|r| r.bf.min(BF_CAP))),
                mean_p_l: mean(recs.iter().map(|r| r.p_l)),
                mean_p_sdo: mean(recs.iter().map(|r| r.p_sdo)),
                mean_p_g: mean(recs.iter().map(|r| r.p_g)),
                mean_log10_bf: mean(recs.iter().map(|r| r.log_bf / std::f64::consts::LN_10)),
                detection_rate: mean(recs.iter().map(|r| f64::from(u8::from(r.flagged)))),
                replications: recs.len(),
                failed,
            });
        }
        if cfg.downweight && !bias.is_empty() {
            let contrasts: Vec<String> = bias[0].iter().map(|b| b.contrast.clone()).collect();
            for c in &contrasts {
                let recs: Vec<&BiasRecord> = bias
                    .iter()
                    .filter_map(|rep| rep.iter().find(|b| &b.contrast == c))
                    .collect();
                result.bias.push(BiasRow {
                    scenario: s.id,
                    contrast: c.clone(),
                    touched: recs.iter().filter(|r| r.touched).count() * 2 > recs.len(),
                    bias_plain: mean(recs.iter().map(|r| r.bias_plain)),
                    bias_downweighted: mean(recs.iter().map(|r| r.bias_downweighted)),
                    replications: recs.len(),
                });
            }
            let improved = bias
                .iter()
                .filter(|rep| {
                    let touched: Vec<&BiasRecord> = rep.iter().filter(|b| b.touched).collect();
                    !touched.is_empty()
                        && mean(touched.iter().map(|b| b.bias_downweighted.abs()))
                            < mean(touched.iter().map(|b| b.bias_plain.abs()))
                })
                .count();
            result.bias_improvement.push(BiasImprovement {
                scenario: s.id,
                improved,
                replications: bias.len(),
            });
        }
    }

    for (g, t) in cfg.null_designs() {
        let dir = null_dir(root, g, t);
        let mut recs: Vec<NullRecord> = Vec::new();
        let mut failed = 0;
        for rep in 0..cfg.replications {
            match checkpoint_state(&dir, rep) {
                Some(Outcome::Done) => {
                    recs.extend(read_csv::<NullRecord>(&dir.join(format!("rep_{rep:04}_null.csv")))?)
                }
                Some(Outcome::Failed(msg)) => {
                    failed += 1;
                    result
                        .failures
                        .push(format!("null {} tau2 {t} replication {rep}: {msg}", g.name()));
                }
                None => {
                    return Err(NmaError::Config(format!(
                        "null {} tau2 {t} replication {rep} has no checkpoint",
                        g.name()
                    )))
                }
            }
        }
        let total: usize = recs.iter().map(|r| r.studies).sum();
        let prop = |f: fn(&NullRecord) -> usize| {
            if total == 0 {
                f64::NAN
            } else {
                recs.iter().map(f).sum::<usize>() as f64 / total as f64
            }
        };
        result.table2.push(Table2Row {
            design: g.name().to_string(),
            tau2: t,
            fp_bf: prop(|r| r.fp_bf),
            fp_pl: prop(|r| r.fp_pl),
            fp_psdo: prop(|r| r.fp_psdo),
            fp_pg: prop(|r| r.fp_pg),
            fp_any: prop(|r| r.fp_any),
            replications: recs.len(),
            failed,
        });
    }
    Ok(result)
}

/// Compute seconds recorded by the completed replications of `cfg`.
pub fn compute_seconds(cfg: &ExperimentConfig) -> f64 {
    let root = &cfg.output_dir;
    let mut dirs: Vec<PathBuf> = cfg
        .contaminated_list()
        .iter()
        .map(|s| contaminated_dir(root, s.id))
        .collect();
    dirs.extend(cfg.null_designs().into_iter().map(|(g, t)| null_dir(root, g, t)));
    dirs.iter()
        .flat_map(|d| (0..cfg.replications).map(move |rep| d.join(format!("rep_{rep:04}.done"))))
        .filter_map(|p| fs::read_to_string(p).ok())
        .filter_map(|t| t.trim().parse::<f64>().ok())
        .sum()
}

/// Write `table1.csv`, `table2.csv`, `bias.csv` and `failures.txt`.
pub fn write_outputs(dir: &Path, result: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(
        &dir.join("table1.csv"),
        &to_csv(
            &result.table1,
            &["scenario", "tau2", "outlier_slot", "mean_bf", "mean_p_L", "mean_p_SDO", "mean_p_G"],
        )?,
    )?;
    write_atomic(
        &dir.join("table2.csv"),
        &to_csv(&result.table2, &["design", "tau2", "fp_bf", "fp_pL", "fp_pSDO", "fp_pG"])?,
    )?;
    write_atomic(
        &dir.join("bias.csv"),
        &to_csv(&result.bias, &["scenario", "contrast", "bias_plain", "bias_downweighted"])?,
    )?;
    let mut failures = result.failures.join("\n");
    if !failures.is_empty() {
        failures.push('\n');
    }
    write_atomic(&dir.join("failures.txt"), &failures)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_designs_are_deduplicated() {
        let cfg = ExperimentConfig::desk(vec![17, 21, 20], "/tmp/unused");
        assert_eq!(
            cfg.null_designs(),
            vec![(Geometry::UnbalancedFair27, 0.0), (Geometry::UnbalancedFair27, 0.287)]
        );
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::desk(vec![33], "/tmp/unused");
        assert!(cfg.validate().is_err());
        cfg.scenarios = vec![1];
        cfg.replications = 0;
        assert!(cfg.validate().is_err());
    }
}
