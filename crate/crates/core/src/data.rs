//! Arm-level binomial network data: validated domain types, connectivity of
//! the comparison graph, and CSV/JSON ingestion.
//!
//! Treatments are identified by 1-based indices `1..=K`; treatment 1 is the
//! global reference. Each study's baseline is the lowest treatment index it
//! contains.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NmaError, Result};

/// One treatment arm of a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arm {
    pub treatment: usize,
    pub events: u64,
    pub total: u64,
}

impl Arm {
    pub fn new(treatment: usize, events: u64, total: u64) -> Result<Self> {
        if total == 0 {
            return Err(NmaError::InvalidData(format!(
                "arm for treatment {treatment} has total 0"
            )));
        }
        if events > total {
            return Err(NmaError::InvalidData(format!(
                "arm for treatment {treatment} has events {events} > total {total}"
            )));
        }
        if treatment == 0 {
            return Err(NmaError::InvalidData("treatment indices start at 1".into()));
        }
        Ok(Self {
            treatment,
            events,
            total,
        })
    }

    pub fn proportion(&self) -> f64 {
        self.events as f64 / self.total as f64
    }
}

/// A randomised study comparing two or more treatments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Study {
    id: String,
    arms: Vec<Arm>,
    #[serde(skip)]
    baseline_pos: usize,
}

impl Study {
    pub fn new(id: impl Into<String>, arms: Vec<Arm>) -> Result<Self> {
        let id = id.into();
        if arms.len() < 2 {
            return Err(NmaError::InvalidData(format!(
                "study {id} has {} arm(s); at least two are required",
                arms.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for arm in &arms {
            if !seen.insert(arm.treatment) {
                return Err(NmaError::InvalidData(format!(
                    "study {id} lists treatment {} more than once",
                    arm.treatment
                )));
            }
        }
        let baseline_pos = arms
            .iter()
            .enumerate()
            .min_by_key(|(_, a)| a.treatment)
            .map(|(i, _)| i)
            .expect("non-empty");
        Ok(Self {
            id,
            arms,
            baseline_pos,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    /// Baseline treatment `b_i` (lowest treatment index in the study).
    pub fn baseline(&self) -> usize {
        self.arms[self.baseline_pos].treatment
    }

    /// Position of the baseline arm within [`Study::arms`].
    pub fn baseline_pos(&self) -> usize {
        self.baseline_pos
    }

    /// Index into the study's relative-effect vector for the arm at `pos`,
    /// or `None` for the baseline arm. Contrasts follow arm order with the
    /// baseline skipped.
    pub fn contrast_index(&self, pos: usize) -> Option<usize> {
        use std::cmp::Ordering;
        match pos.cmp(&self.baseline_pos) {
            Ordering::Less => Some(pos),
            Ordering::Equal => None,
            Ordering::Greater => Some(pos - 1),
        }
    }

    /// Number of relative effects (`k_i - 1`).
    pub fn num_contrasts(&self) -> usize {
        self.arms.len() - 1
    }

    /// Treatments of the non-baseline arms, in contrast order.
    pub fn contrast_treatments(&self) -> impl Iterator<Item = usize> + '_ {
        self.arms
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != self.baseline_pos)
            .map(|(_, a)| a.treatment)
    }

    pub fn contains(&self, treatment: usize) -> bool {
        self.arms.iter().any(|a| a.treatment == treatment)
    }
}

/// Connected flag plus the partition of treatments into components.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConnectivityResult {
    pub connected: bool,
    /// Components as sorted lists of 1-based treatment indices, ordered by
    /// their smallest member.
    pub components: Vec<Vec<usize>>,
}

/// Components of the comparison graph whose nodes are treatments `1..=K`
/// and whose edges join treatments compared within a study.
pub fn connectivity_check(num_treatments: usize, studies: &[Study]) -> ConnectivityResult {
    let mut adjacency = vec![Vec::new(); num_treatments + 1];
    for study in studies {
        let ts: Vec<usize> = study.arms().iter().map(|a| a.treatment).collect();
        for (i, &a) in ts.iter().enumerate() {
            for &b in &ts[i + 1..] {
                if a <= num_treatments && b <= num_treatments {
                    adjacency[a].push(b);
                    adjacency[b].push(a);
                }
            }
        }
    }
    let mut label = vec![usize::MAX; num_treatments + 1];
    let mut components = Vec::new();
    for start in 1..=num_treatments {
        if label[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = vec![start];
        label[start] = id;
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            for &next in &adjacency[node] {
                if label[next] == usize::MAX {
                    label[next] = id;
                    members.push(next);
                    queue.push_back(next);
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }
    ConnectivityResult {
        connected: components.len() <= 1,
        components,
    }
}

/// A validated, connected network of arm-level binomial studies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkDataset {
    studies: Vec<Study>,
    num_treatments: usize,
    treatment_labels: Option<Vec<String>>,
}

impl NetworkDataset {
    pub fn new(
        studies: Vec<Study>,
        num_treatments: usize,
        treatment_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if num_treatments < 2 {
            return Err(NmaError::InvalidData(
                "a network needs at least two treatments".into(),
            ));
        }
        if studies.is_empty() {
            return Err(NmaError::InvalidData("dataset has no studies".into()));
        }
        if let Some(labels) = &treatment_labels {
            if labels.len() != num_treatments {
                return Err(NmaError::InvalidData(format!(
                    "{} treatment labels for {num_treatments} treatments",
                    labels.len()
                )));
            }
        }
        let mut ids = BTreeSet::new();
        for study in &studies {
            if !ids.insert(study.id()) {
                return Err(NmaError::InvalidData(format!(
                    "duplicate study id {}",
                    study.id()
                )));
            }
            for arm in study.arms() {
                if arm.treatment > num_treatments {
                    return Err(NmaError::InvalidData(format!(
                        "study {} uses treatment {} outside 1..{num_treatments}",
                        study.id(),
                        arm.treatment
                    )));
                }
            }
        }
        let conn = connectivity_check(num_treatments, &studies);
        if !conn.connected {
            return Err(NmaError::Disconnected {
                components: conn.components,
            });
        }
        Ok(Self {
            studies,
            num_treatments,
            treatment_labels,
        })
    }

    pub fn studies(&self) -> &[Study] {
        &self.studies
    }

    pub fn study(&self, index: usize) -> &Study {
        &self.studies[index]
    }

    pub fn num_studies(&self) -> usize {
        self.studies.len()
    }

    pub fn num_treatments(&self) -> usize {
        self.num_treatments
    }

    pub fn num_arms(&self) -> usize {
        self.studies.iter().map(Study::num_arms).sum()
    }

    pub fn treatment_labels(&self) -> Option<&[String]> {
        self.treatment_labels.as_deref()
    }

    /// Display name for treatment `k` (1-based).
    pub fn label(&self, k: usize) -> String {
        match &self.treatment_labels {
            Some(labels) => labels[k - 1].clone(),
            None => k.to_string(),
        }
    }

    /// Index of the study with the given id.
    pub fn study_index(&self, id: &str) -> Option<usize> {
        self.studies.iter().position(|s| s.id() == id)
    }

    pub fn connectivity(&self) -> ConnectivityResult {
        connectivity_check(self.num_treatments, &self.studies)
    }

    /// The dataset with the given studies removed. Fails if the remainder is
    /// disconnected, naming the comparison edges that only removed studies
    /// supported.
    pub fn without(&self, excluded: &[usize]) -> Result<Self> {
        let kept: Vec<Study> = self
            .studies
            .iter()
            .enumerate()
            .filter(|(i, _)| !excluded.contains(i))
            .map(|(_, s)| s.clone())
            .collect();
        let conn = connectivity_check(self.num_treatments, &kept);
        if !conn.connected {
            let kept_edges = comparison_edges(&kept);
            let lost: Vec<String> = comparison_edges(&self.studies)
                .difference(&kept_edges)
                .map(|(a, b)| format!("{}-{}", self.label(*a), self.label(*b)))
                .collect();
            return Err(NmaError::InvalidData(format!(
                "excluding these studies disconnects the network (lost edges: {}); components: {:?}",
                lost.join(", "),
                conn.components
            )));
        }
        Self::new(kept, self.num_treatments, self.treatment_labels.clone())
    }

    /// Observed proportions `x_ik = r_ik / n_ik` in study order, then arm order.
    pub fn observed_proportions(&self) -> ObservedProportions {
        observed_proportions(self)
    }
}

fn comparison_edges(studies: &[Study]) -> BTreeSet<(usize, usize)> {
    let mut edges = BTreeSet::new();
    for s in studies {
        for (i, a) in s.arms().iter().enumerate() {
            for b in &s.arms()[i + 1..] {
                edges.insert((a.treatment.min(b.treatment), a.treatment.max(b.treatment)));
            }
        }
    }
    edges
}

/// One observed proportion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProportionEntry {
    pub study: String,
    pub treatment: usize,
    pub x: f64,
}

/// Flat list of per-arm proportions with per-study offsets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservedProportions {
    pub values: Vec<ProportionEntry>,
    #[serde(skip)]
    offsets: Vec<usize>,
}

impl ObservedProportions {
    /// All proportions as a plain vector (the pool scored by SDO).
    pub fn pool(&self) -> Vec<f64> {
        self.values.iter().map(|e| e.x).collect()
    }

    /// Range of `values` that belongs to study `i`.
    pub fn study_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn observed_proportions(ds: &NetworkDataset) -> ObservedProportions {
    let mut values = Vec::with_capacity(ds.num_arms());
    let mut offsets = Vec::with_capacity(ds.num_studies() + 1);
    offsets.push(0);
    for s in ds.studies() {
        for a in s.arms() {
            values.push(ProportionEntry {
                study: s.id().to_string(),
                treatment: a.treatment,
                x: a.proportion(),
            });
        }
        offsets.push(values.len());
    }
    ObservedProportions { values, offsets }
}

/// On-disk dataset formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Json,
}

impl DataFormat {
    /// Guess the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => DataFormat::Json,
            _ => DataFormat::Csv,
        }
    }
}

impl std::str::FromStr for DataFormat {
    type Err = NmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "json" => Ok(DataFormat::Json),
            other => Err(NmaError::Parse(format!("unknown data format {other}"))),
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<NetworkDataset> {
    let path = path.as_ref();
    let mut text = String::new();
    fs::File::open(path)?.read_to_string(&mut text)?;
    match format {
        DataFormat::Csv => parse_csv(&text),
        DataFormat::Json => parse_json(&text),
    }
}

pub fn write_dataset(ds: &NetworkDataset, path: impl AsRef<Path>, format: DataFormat) -> Result<()> {
    let mut file = fs::File::create(path)?;
    match format {
        DataFormat::Csv => file.write_all(to_csv(ds)?.as_bytes())?,
        DataFormat::Json => file.write_all(to_json(ds)?.as_bytes())?,
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    study: String,
    treatment: String,
    events: String,
    total: String,
}

/// Parse the canonical `study,treatment,events,total` CSV.
///
/// Treatment codes that are all positive integers keep their numeric order;
/// other codes are numbered by first appearance. Rows of one study need not
/// be contiguous.
pub fn parse_csv(text: &str) -> Result<NetworkDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let expected = ["study", "treatment", "events", "total"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(NmaError::Parse(format!(
            "expected header study,treatment,events,total, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut raw = Vec::new();
    for (line, row) in reader.deserialize::<CsvRow>().enumerate() {
        let row = row?;
        let events: u64 = row.events.parse().map_err(|_| {
            NmaError::Parse(format!("row {}: bad events value {:?}", line + 2, row.events))
        })?;
        let total: u64 = row.total.parse().map_err(|_| {
            NmaError::Parse(format!("row {}: bad total value {:?}", line + 2, row.total))
        })?;
        raw.push((row.study, row.treatment, events, total));
    }
    assemble(raw, None)
}

fn assemble(
    raw: Vec<(String, String, u64, u64)>,
    explicit_labels: Option<Vec<String>>,
) -> Result<NetworkDataset> {
    let labels = match explicit_labels {
        Some(l) => l,
        None => treatment_order(raw.iter().map(|r| r.1.as_str())),
    };
    let index: HashMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i + 1))
        .collect();
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<Arm>> = HashMap::new();
    for (study, treatment, events, total) in &raw {
        let t = *index.get(treatment.as_str()).ok_or_else(|| {
            NmaError::Parse(format!("study {study}: unknown treatment {treatment}"))
        })?;
        let arm = Arm::new(t, *events, *total)
            .map_err(|e| NmaError::InvalidData(format!("study {study}: {e}")))?;
        let arms = grouped.entry(study.clone()).or_insert_with(|| {
            order.push(study.clone());
            Vec::new()
        });
        if arms.iter().any(|a| a.treatment == t) {
            return Err(NmaError::InvalidData(format!(
                "duplicate row for study {study}, treatment {treatment}"
            )));
        }
        arms.push(arm);
    }
    let studies = order
        .into_iter()
        .map(|id| {
            let arms = grouped.remove(&id).expect("grouped");
            Study::new(id, arms)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = labels.len();
    NetworkDataset::new(studies, k, Some(labels))
}

fn treatment_order<'a>(codes: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for c in codes {
        if !seen.iter().any(|s| s == c) {
            seen.push(c.to_string());
        }
    }
    let numeric: Option<Vec<u64>> = seen.iter().map(|s| s.parse::<u64>().ok()).collect();
    if let Some(mut nums) = numeric {
        nums.sort_unstable();
        // Keep the original spelling of each code.
        return nums
            .into_iter()
            .map(|n| {
                seen.iter()
                    .find(|s| s.parse::<u64>().ok() == Some(n))
                    .cloned()
                    .expect("present")
            })
            .collect();
    }
    seen
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonDataset {
    #[serde(default)]
    treatments: Option<Vec<serde_json::Value>>,
    studies: Vec<JsonStudy>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonStudy {
    id: serde_json::Value,
    arms: Vec<JsonArm>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonArm {
    treatment: serde_json::Value,
    events: u64,
    total: u64,
}

fn value_to_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Parse the JSON mirror of the CSV format. When `treatments` is present it
/// fixes the treatment order, and arms may name a treatment either by label
/// or by 1-based index.
pub fn parse_json(text: &str) -> Result<NetworkDataset> {
    let doc: JsonDataset = serde_json::from_str(text)?;
    let labels: Option<Vec<String>> = doc
        .treatments
        .as_ref()
        .map(|ts| ts.iter().map(value_to_string).collect());
    let mut raw = Vec::new();
    for s in &doc.studies {
        let id = value_to_string(&s.id);
        for a in &s.arms {
            let code = match (&a.treatment, &labels) {
                (serde_json::Value::Number(n), Some(l)) => {
                    let idx = n.as_u64().filter(|&i| i >= 1 && (i as usize) <= l.len()).ok_or_else(
                        || NmaError::Parse(format!("study {id}: treatment index {n} out of range")),
                    )?;
                    l[idx as usize - 1].clone()
                }
                (v, _) => value_to_string(v),
            };
            raw.push((id.clone(), code, a.events, a.total));
        }
    }
    assemble(raw, labels)
}

/// Canonical CSV with 1-based treatment indices.
pub fn to_csv(ds: &NetworkDataset) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["study", "treatment", "events", "total"])?;
    for s in ds.studies() {
        for a in s.arms() {
            writer.write_record([
                s.id().to_string(),
                a.treatment.to_string(),
                a.events.to_string(),
                a.total.to_string(),
            ])?;
        }
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| NmaError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn to_json(ds: &NetworkDataset) -> Result<String> {
    let labels: Vec<String> = (1..=ds.num_treatments()).map(|k| ds.label(k)).collect();
    let doc = JsonDataset {
        treatments: Some(labels.iter().cloned().map(serde_json::Value::String).collect()),
        studies: ds
            .studies()
            .iter()
            .map(|s| JsonStudy {
                id: serde_json::Value::String(s.id().to_string()),
                arms: s
                    .arms()
                    .iter()
                    .map(|a| JsonArm {
                        treatment: serde_json::Value::String(labels[a.treatment - 1].clone()),
                        events: a.events,
                        total: a.total,
                    })
                    .collect(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

const SMOKING_JSON: &str = include_str!("../data/smoking.json");

/// Smoking-cessation network: 24 trials of four counselling interventions
/// (1 = no contact, 2 = self-help, 3 = individual counselling,
/// 4 = group counselling).
pub fn smoking_cessation() -> NetworkDataset {
    parse_json(SMOKING_JSON).expect("bundled dataset is valid")
}
