//! Noisy seed labels. Two annotators share one interface: a simulated
//! oracle with a planted confusion tensor, and an LLM chat endpoint with
//! self-consistency voting.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::error::{CaneError, Result};
use crate::graph::Truth;
use crate::rng::{derive_indexed, stage_rng};
use crate::seeds::SeedPlan;

pub mod llm;

pub use llm::{ChatTransport, HttpTransport, LlmAnnotator, LlmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub label: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Simulated,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: usize,
    pub is_probe: bool,
    pub votes: Vec<Vote>,
    pub source: Source,
}

/// Majority label; ties go to the highest summed confidence, then to the
/// lowest class id. `None` for an empty ballot.
pub fn majority_vote(votes: &[Vote]) -> Option<usize> {
    let mut tally: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for v in votes {
        let e = tally.entry(v.label).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += v.confidence;
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for (&label, &(count, conf)) in &tally {
        let better = match best {
            None => true,
            Some((_, bc, bconf)) => count > bc || (count == bc && conf > bconf),
        };
        if better {
            best = Some((label, count, conf));
        }
    }
    best.map(|(label, _, _)| label)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    entries: BTreeMap<usize, Annotation>,
}

#[derive(Serialize, Deserialize)]
struct AnnotationLine {
    node: usize,
    label: usize,
    probe: bool,
    votes: Vec<Vote>,
    #[serde(default = "default_source")]
    source: Source,
}

fn default_source() -> Source {
    Source::Simulated
}

impl AnnotationSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a node from its ballot. Fails on an empty ballot.
    pub fn insert_votes(&mut self, node: usize, votes: Vec<Vote>, is_probe: bool, source: Source) -> Result<()> {
        let label = majority_vote(&votes).ok_or_else(|| CaneError::arg(format!("node {node} has no votes")))?;
        self.entries.insert(
            node,
            Annotation {
                label,
                is_probe,
                votes,
                source,
            },
        );
        Ok(())
    }

    pub fn get(&self, node: usize) -> Option<&Annotation> {
        self.entries.get(&node)
    }

    pub fn label(&self, node: usize) -> Option<usize> {
        self.entries.get(&node).map(|a| a.label)
    }

    pub fn contains(&self, node: usize) -> bool {
        self.entries.contains_key(&node)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in node order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Annotation)> {
        self.entries.iter().map(|(&v, a)| (v, a))
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    /// Union; entries in `other` win on overlap.
    pub fn merge(&mut self, other: AnnotationSet) {
        self.entries.extend(other.entries);
    }

    /// Subset restricted to `nodes`, preserving entries.
    pub fn restrict(&self, nodes: impl IntoIterator<Item = usize>) -> AnnotationSet {
        AnnotationSet {
            entries: nodes
                .into_iter()
                .filter_map(|v| self.entries.get(&v).map(|a| (v, a.clone())))
                .collect(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (&node, a) in &self.entries {
            let line = AnnotationLine {
                node,
                label: a.label,
                probe: a.is_probe,
                votes: a.votes.clone(),
                source: a.source,
            };
            out.push_str(&serde_json::to_string(&line).expect("annotation serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, num_classes: usize) -> Result<Self> {
        let mut set = AnnotationSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: AnnotationLine =
                serde_json::from_str(line).map_err(|e| CaneError::format("annotations.jsonl", i + 1, e.to_string()))?;
            if rec.label >= num_classes || rec.votes.iter().any(|v| v.label >= num_classes) {
                return Err(CaneError::format("annotations.jsonl", i + 1, "label out of range"));
            }
            if rec.votes.is_empty() {
                return Err(CaneError::format("annotations.jsonl", i + 1, "no votes"));
            }
            set.entries.insert(
                rec.node,
                Annotation {
                    label: rec.label,
                    is_probe: rec.probe,
                    votes: rec.votes,
                    source: rec.source,
                },
            );
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| CaneError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, num_classes: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CaneError::io(path, e))?;
        Self::from_jsonl(&text, num_classes)
    }
}

/// Splits annotations into the plan's probe prefix and the remainder.
pub fn probe_split(ann: &AnnotationSet, plan: &SeedPlan) -> (AnnotationSet, AnnotationSet) {
    let probe = ann.restrict(plan.probe().iter().copied());
    let rest = AnnotationSet {
        entries: ann
            .entries
            .iter()
            .filter(|(v, _)| !probe.contains(**v))
            .map(|(&v, a)| (v, a.clone()))
            .collect(),
    };
    (probe, rest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Global,
    ClassConditional,
    ClusterConditional,
}

/// Planted confusion tensor `K × C × C` (K = 1 unless cluster-conditional).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedNoiseModel {
    pub kind: NoiseKind,
    pub tensor: Vec<Vec<Vec<f64>>>,
    pub seed: u64,
}

fn uniform_row(c: usize, i: usize, diag: f64) -> Vec<f64> {
    let off = (1.0 - diag) / (c - 1) as f64;
    (0..c).map(|j| if j == i { diag } else { off }).collect()
}

impl PlantedNoiseModel {
    pub fn validate(&self) -> Result<()> {
        if self.tensor.is_empty() {
            return Err(CaneError::arg("empty noise tensor"));
        }
        if self.kind != NoiseKind::ClusterConditional && self.tensor.len() != 1 {
            return Err(CaneError::arg("non-cluster noise models carry a single matrix"));
        }
        let c = self.tensor[0].len();
        for (k, m) in self.tensor.iter().enumerate() {
            if m.len() != c {
                return Err(CaneError::arg(format!(
                    "cluster {k} matrix has {} rows, expected {c}",
                    m.len()
                )));
            }
            for (i, row) in m.iter().enumerate() {
                if row.len() != c || row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(CaneError::arg(format!("row [{k}][{i}] is not a probability vector")));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(CaneError::arg(format!("row [{k}][{i}] sums to {s}")));
                }
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.tensor[0].len()
    }

    pub fn identity(c: usize) -> Self {
        Self::class_conditional(c, 1.0, 0)
    }

    /// Same diagonal for every class, off-diagonal mass uniform.
    pub fn class_conditional(c: usize, diag: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::ClassConditional,
            tensor: vec![(0..c).map(|i| uniform_row(c, i, diag)).collect()],
            seed,
        }
    }

    /// One diagonal value per cluster, uniform off-diagonal fill.
    pub fn cluster_conditional(diags: &[f64], c: usize, seed: u64) -> Self {
        Self {
            kind: NoiseKind::ClusterConditional,
            tensor: diags
                .iter()
                .map(|&d| (0..c).map(|i| uniform_row(c, i, d)).collect())
                .collect(),
            seed,
        }
    }

    /// Per-cluster diagonals evenly spaced over `[lo, hi]`.
    pub fn cluster_grid(k: usize, c: usize, lo: f64, hi: f64, seed: u64) -> Self {
        let diags: Vec<f64> = (0..k)
            .map(|i| {
                if k == 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (k - 1) as f64
                }
            })
            .collect();
        Self::cluster_conditional(&diags, c, seed)
    }

    pub fn row(&self, cluster: usize, class: usize) -> &[f64] {
        let k = if self.kind == NoiseKind::ClusterConditional {
            cluster
        } else {
            0
        };
        &self.tensor[k][class]
    }

    pub fn diag(&self, cluster: usize, class: usize) -> f64 {
        self.row(cluster, class)[class]
    }
}

fn draw(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Outcome of one annotation request batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationBatch {
    pub annotations: AnnotationSet,
    /// Nodes that produced no usable answer; they are dropped from the seed set.
    pub failed: Vec<usize>,
}

pub trait Annotator {
    fn annotate(&self, nodes: &[usize], probe: bool) -> Result<AnnotationBatch>;
}

/// Simulated annotator: each node's label is drawn from
/// `tensor[cluster(v)][truth(v)]` with a per-node stream, so results do not
/// depend on batching or call order.
#[derive(Debug, Clone)]
pub struct SimulatedAnnotator {
    truth: Truth,
    clusters: Vec<usize>,
    model: PlantedNoiseModel,
}

impl SimulatedAnnotator {
    pub fn new(truth: Truth, clusters: Vec<usize>, model: PlantedNoiseModel) -> Result<Self> {
        model.validate()?;
        if model.num_classes() != truth.num_classes() {
            return Err(CaneError::arg("noise tensor and truth disagree on class count"));
        }
        if model.kind == NoiseKind::ClusterConditional {
            let k = model.tensor.len();
            if clusters.iter().any(|&c| c >= k) {
                return Err(CaneError::arg("cluster id outside the noise tensor"));
            }
        }
        Ok(Self { truth, clusters, model })
    }

    pub fn label_for(&self, v: usize) -> Result<usize> {
        let y = self
            .truth
            .get(v)
            .ok_or_else(|| CaneError::arg(format!("no true label for node {v}")))?;
        let k = self.clusters.get(v).copied().unwrap_or(0);
        let mut rng = stage_rng(derive_indexed(self.model.seed, "simulated-annotator", v as u64));
        Ok(draw(self.model.row(k, y), rng.random::<f64>()))
    }
}

impl Annotator for SimulatedAnnotator {
    fn annotate(&self, nodes: &[usize], probe: bool) -> Result<AnnotationBatch> {
        let mut set = AnnotationSet::new();
        for &v in nodes {
            let label = self.label_for(v)?;
            set.insert_votes(
                v,
                vec![Vote {
                    label,
                    confidence: 100.0,
                }],
                probe,
                Source::Simulated,
            )?;
        }
        Ok(AnnotationBatch {
            annotations: set,
            failed: Vec::new(),
        })
    }
}

/// Replays previously collected annotations; requested nodes without a
/// record are reported as failed.
#[derive(Debug, Clone)]
pub struct RecordedAnnotator {
    records: AnnotationSet,
}

impl RecordedAnnotator {
    pub fn new(records: AnnotationSet) -> Self {
        Self { records }
    }
}

impl Annotator for RecordedAnnotator {
    fn annotate(&self, nodes: &[usize], probe: bool) -> Result<AnnotationBatch> {
        let mut batch = AnnotationBatch::default();
        for &v in nodes {
            match self.records.get(v) {
                Some(a) => batch.annotations.insert_votes(v, a.votes.clone(), probe, a.source)?,
                None => batch.failed.push(v),
            }
        }
        Ok(batch)
    }
}

/// Annotates every seed of `plan` with the planted model.
pub fn simulate_annotations(
    truth: &Truth,
    cm: &ClusterModel,
    model: &PlantedNoiseModel,
    plan: &SeedPlan,
) -> Result<AnnotationSet> {
    let sim = SimulatedAnnotator::new(truth.clone(), cm.assignment.clone(), model.clone())?;
    let mut set = sim.annotate(plan.probe(), true)?.annotations;
    set.merge(sim.annotate(plan.rest(), false)?.annotations);
    Ok(set)
}
