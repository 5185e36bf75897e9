//! Synthetic binary-outcome networks with injected outlying studies.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Arm, NetworkDataset, Study};
use crate::error::{NmaError, Result};
use crate::mcmc::derive_seed;
use crate::model::{basic_effect, expit, logit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Balanced100,
    UnbalancedWell35,
    UnbalancedFair27,
    UnbalancedPoor15,
}

impl Geometry {
    pub const ALL: [Geometry; 4] = [
        Geometry::Balanced100,
        Geometry::UnbalancedWell35,
        Geometry::UnbalancedFair27,
        Geometry::UnbalancedPoor15,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Balanced100 => "balanced_100",
            Self::UnbalancedWell35 => "unbalanced_well_35",
            Self::UnbalancedFair27 => "unbalanced_fair_27",
            Self::UnbalancedPoor15 => "unbalanced_poor_15",
        }
    }

    fn fixture(&self) -> &'static str {
        match self {
            Self::Balanced100 => include_str!("../data/geometries/balanced_100.json"),
            Self::UnbalancedWell35 => include_str!("../data/geometries/unbalanced_well_35.json"),
            Self::UnbalancedFair27 => include_str!("../data/geometries/unbalanced_fair_27.json"),
            Self::UnbalancedPoor15 => include_str!("../data/geometries/unbalanced_poor_15.json"),
        }
    }

    /// The bundled study-count table.
    pub fn layout(&self) -> GeometryLayout {
        serde_json::from_str(self.fixture()).expect("bundled geometry fixture is valid")
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Geometry {
    type Err = NmaError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| NmaError::Config(format!("unknown geometry '{s}'")))
    }
}

/// One design (set of compared treatments) and how many studies use it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignCount {
    pub treatments: Vec<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometryLayout {
    pub name: String,
    pub description: String,
    pub num_treatments: usize,
    pub designs: Vec<DesignCount>,
}

impl GeometryLayout {
    pub fn num_studies(&self) -> usize {
        self.designs.iter().map(|d| d.count).sum()
    }

    /// Treatments of every study, in study order.
    pub fn study_designs(&self) -> Vec<&[usize]> {
        self.designs
            .iter()
            .flat_map(|d| std::iter::repeat_n(d.treatments.as_slice(), d.count))
            .collect()
    }
}

pub const TAU2_GRID: [f64; 4] = [0.0, 0.032, 0.096, 0.287];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    /// Position in the 32-scenario grid (1-based); 0 for ad hoc scenarios.
    pub id: usize,
    pub geometry: Geometry,
    pub tau2: f64,
    pub num_outliers: usize,
    /// Multiplier of `sqrt(s2_max + tau2)` giving the outlier shift.
    pub severity: f64,
    pub s_range: (f64, f64),
    pub seed: u64,
}

impl SimScenario {
    pub fn new(geometry: Geometry, tau2: f64, num_outliers: usize) -> Self {
        Self {
            id: 0,
            geometry,
            tau2,
            num_outliers,
            severity: 3.0,
            s_range: (4.0, 12.25),
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !TAU2_GRID.contains(&self.tau2) {
            return Err(NmaError::Config(format!(
                "tau2 {} is not in the grid {TAU2_GRID:?}",
                self.tau2
            )));
        }
        if self.severity != 2.5 && self.severity != 3.0 {
            return Err(NmaError::Config(format!(
                "severity must be 2.5 or 3.0, got {}",
                self.severity
            )));
        }
        let (lo, hi) = self.s_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(NmaError::Config(format!("invalid variance range ({lo}, {hi})")));
        }
        if self.num_outliers > 3 {
            return Err(NmaError::Config("at most 3 outliers are supported".into()));
        }
        Ok(())
    }

    /// Outlier shift `C = severity * sqrt(s2_max + tau2)`.
    pub fn shift(&self) -> f64 {
        self.severity * (self.s_range.1 + self.tau2).sqrt()
    }

    /// The same scenario with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// The same scenario without contamination.
    pub fn null_variant(&self) -> Self {
        Self {
            num_outliers: 0,
            ..self.clone()
        }
    }
}

/// The 32 scenarios: geometry, then number of outliers, then tau2.
pub fn scenario_grid() -> Vec<SimScenario> {
    let mut out = Vec::with_capacity(32);
    for g in Geometry::ALL {
        for outliers in [1, 3] {
            for tau2 in TAU2_GRID {
                let mut s = SimScenario::new(g, tau2, outliers);
                s.id = out.len() + 1;
                out.push(s);
            }
        }
    }
    out
}

pub fn scenario(id: usize) -> Result<SimScenario> {
    scenario_grid()
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| NmaError::Config(format!("scenario {id} is not in 1..=32")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratedNetwork {
    #[serde(skip)]
    pub dataset: NetworkDataset,
    /// True basic parameters `theta_1k`, `k = 2..=K`.
    pub truth: Vec<f64>,
    pub outlier_ids: Vec<String>,
    /// `+1` or `-1` per outlier.
    pub outlier_directions: Vec<i8>,
    /// Drawn study-specific log odds ratios versus the study baseline.
    pub study_effects: Vec<Vec<f64>>,
    pub shift: f64,
}

impl GeneratedNetwork {
    pub fn outlier_indices(&self) -> Vec<usize> {
        self.outlier_ids
            .iter()
            .filter_map(|id| self.dataset.study_index(id))
            .collect()
    }

    /// Treatment pairs `(h, k)`, `h < k`, compared by any outlying study.
    pub fn outlier_contrasts(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = self
            .outlier_indices()
            .into_iter()
            .flat_map(|i| {
                let s = self.dataset.study(i);
                let b = s.baseline();
                s.contrast_treatments().map(move |k| (b.min(k), b.max(k))).collect::<Vec<_>>()
            })
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }
}

/// True basic parameters at equal spacing in `(0, 1]`.
pub fn true_effects(num_treatments: usize) -> Vec<f64> {
    let m = (num_treatments - 1) as f64;
    (1..num_treatments).map(|j| j as f64 / m).collect()
}

const MAX_REDRAWS: usize = 100;

pub fn generate(scenario: &SimScenario) -> Result<GeneratedNetwork> {
    scenario.validate()?;
    let layout = scenario.geometry.layout();
    let k = layout.num_treatments;
    let designs = layout.study_designs();
    let truth = true_effects(k);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, &[0x5349_4d]));

    let two_arm: Vec<usize> = (0..designs.len()).filter(|&i| designs[i].len() == 2).collect();
    if scenario.num_outliers > two_arm.len() {
        return Err(NmaError::Simulation(format!(
            "{} outliers requested but only {} two-arm studies",
            scenario.num_outliers,
            two_arm.len()
        )));
    }
    let mut outliers: Vec<usize> = sample_indices(&mut rng, two_arm.len(), scenario.num_outliers)
        .into_iter()
        .map(|j| two_arm[j])
        .collect();
    outliers.sort_unstable();
    let directions: Vec<i8> = outliers
        .iter()
        .map(|_| if rng.random::<bool>() { 1 } else { -1 })
        .collect();
    let shift = scenario.shift();
    let half_sd = (scenario.tau2 / 2.0).sqrt();

    let mut studies = Vec::with_capacity(designs.len());
    let mut effects = Vec::with_capacity(designs.len());
    for (i, treatments) in designs.iter().enumerate() {
        let b = treatments[0];
        let sizes: Vec<u64> = treatments
            .iter()
            .map(|_| rng.random_range(50.0..=200.0_f64).round() as u64)
            .collect();
        let base_risk = rng.random_range(0.4..0.6);
        let offset = outliers
            .iter()
            .position(|&o| o == i)
            .map_or(0.0, |j| directions[j] as f64 * shift);
        let mut lors = Vec::new();
        let mut probs = Vec::new();
        let mut ok = false;
        for _ in 0..MAX_REDRAWS {
            let shared: f64 = rng.sample(StandardNormal);
            lors = treatments[1..]
                .iter()
                .map(|&t| {
                    let own: f64 = rng.sample(StandardNormal);
                    basic_effect(&truth, t) - basic_effect(&truth, b)
                        + offset
                        + half_sd * (shared + own)
                })
                .collect();
            probs = std::iter::once(base_risk)
                .chain(lors.iter().map(|l| expit(logit(base_risk) + l)))
                .collect();
            if probs.iter().all(|&p| p > 0.0 && p < 1.0) {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(NmaError::Simulation(format!(
                "study {} kept drawing arm probabilities outside (0, 1)",
                i + 1
            )));
        }
        let arms = treatments
            .iter()
            .zip(&sizes)
            .zip(&probs)
            .map(|((&t, &n), &p)| {
                let r = rng.sample(Binomial::new(n, p).expect("valid binomial"));
                Arm::new(t, r, n)
            })
            .collect::<Result<Vec<_>>>()?;
        studies.push(Study::new((i + 1).to_string(), arms)?);
        effects.push(lors);
    }
    let dataset = NetworkDataset::new(studies, k, None)?;
    Ok(GeneratedNetwork {
        outlier_ids: outliers.iter().map(|i| (i + 1).to_string()).collect(),
        dataset,
        truth,
        outlier_directions: directions,
        study_effects: effects,
        shift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_stated_sizes() {
        let sizes: Vec<usize> = Geometry::ALL.iter().map(|g| g.layout().num_studies()).collect();
        assert_eq!(sizes, vec![100, 35, 27, 15]);
        for g in Geometry::ALL {
            let l = g.layout();
            assert_eq!(l.name, g.name());
            assert!(l.designs.iter().all(|d| (1..=10).contains(&d.count)));
        }
    }

    #[test]
    fn grid_numbering() {
        let g = scenario_grid();
        assert_eq!(g.len(), 32);
        assert_eq!((g[0].geometry, g[0].tau2, g[0].num_outliers), (Geometry::Balanced100, 0.0, 1));
        assert_eq!(g[4].num_outliers, 3);
        assert_eq!(g[16].geometry, Geometry::UnbalancedFair27);
        assert_eq!(g[16].tau2, 0.0);
        let last = &g[31];
        assert_eq!((last.geometry, last.tau2, last.num_outliers), (Geometry::UnbalancedPoor15, 0.287, 3));
    }

    #[test]
    fn shift_formula() {
        let s = SimScenario::new(Geometry::UnbalancedFair27, 0.0, 1);
        assert!((s.shift() - 10.5).abs() < 1e-12);
    }
}
