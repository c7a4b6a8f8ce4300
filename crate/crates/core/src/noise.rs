//! Cluster-conditional transition tensor estimated from probe annotations
//! through cross-modality neighbor agreement, with hierarchical back-off.

use std::fs;
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::annotate::AnnotationSet;
use crate::cluster::ClusterModel;
use crate::error::{CaneError, Result};
use crate::graph::{Graph, Truth};

pub const DEFAULT_MIN_SUPPORT: usize = 3;
pub const DEFAULT_K_FEAT: usize = 5;
pub const DIAG_CEIL: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backoff {
    Cell,
    Cluster,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub min_support: usize,
    pub k_feat: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            min_support: DEFAULT_MIN_SUPPORT,
            k_feat: DEFAULT_K_FEAT,
        }
    }
}

/// `T[k][i][j] = P(annotated j | true i, cluster k)`; only the diagonal is
/// estimated, the rest of each row is filled uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTensor {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "C")]
    pub c: usize,
    pub min_support: usize,
    pub tensor: Vec<Vec<Vec<f64>>>,
    pub support: Vec<Vec<usize>>,
    pub backoff: Vec<Vec<Backoff>>,
}

impl TransitionTensor {
    /// Builds rows from raw diagonal estimates: clamp to `[1/C, 0.999]`,
    /// then spread the remaining mass uniformly.
    pub fn from_diagonals(
        diags: &[Vec<f64>],
        support: Vec<Vec<usize>>,
        backoff: Vec<Vec<Backoff>>,
        min_support: usize,
    ) -> Self {
        let k = diags.len();
        let c = diags.first().map_or(0, Vec::len);
        let floor = 1.0 / c as f64;
        let tensor = diags
            .iter()
            .map(|row| {
                (0..c)
                    .map(|i| {
                        let d = row[i].clamp(floor, DIAG_CEIL);
                        let off = (1.0 - d) / (c - 1) as f64;
                        (0..c).map(|j| if i == j { d } else { off }).collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            k,
            c,
            min_support,
            tensor,
            support,
            backoff,
        }
    }

    pub fn diag(&self, cluster: usize, class: usize) -> f64 {
        let k = if self.k == 1 { 0 } else { cluster };
        self.tensor[k][class][class]
    }

    /// Cluster average `(1/K) Σ_k T[k]`.
    pub fn class_average(&self) -> Vec<Vec<f64>> {
        let mut avg = vec![vec![0.0; self.c]; self.c];
        for m in &self.tensor {
            for (i, row) in m.iter().enumerate() {
                for (j, &p) in row.iter().enumerate() {
                    avg[i][j] += p / self.k as f64;
                }
            }
        }
        avg
    }

    /// Reliability-free tensor: every diagonal at the ceiling.
    pub fn identity(k: usize, c: usize) -> Self {
        Self::from_diagonals(
            &vec![vec![1.0; c]; k],
            vec![vec![0; c]; k],
            vec![vec![Backoff::Global; c]; k],
            0,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("tensor serializes");
        fs::write(path, text).map_err(|e| CaneError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CaneError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CaneError::format("tc.json", e.line(), e.to_string()))
    }
}

/// Averages `T[k]` over clusters into a single class-conditional matrix.
pub fn collapse_to_global(t: &TransitionTensor) -> TransitionTensor {
    let mut support = vec![0usize; t.c];
    for row in &t.support {
        for (i, &s) in row.iter().enumerate() {
            support[i] += s;
        }
    }
    TransitionTensor {
        k: 1,
        c: t.c,
        min_support: t.min_support,
        tensor: vec![t.class_average()],
        support: vec![support],
        backoff: vec![vec![Backoff::Global; t.c]],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRecord {
    pub node: usize,
    pub neighbors: Vec<usize>,
    pub agreement: f64,
}

fn sq_dist(emb: ArrayView2<f64>, a: usize, b: usize) -> f64 {
    emb.row(a)
        .iter()
        .zip(emb.row(b).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Annotated graph neighbors of `v` together with its `k_feat` nearest
/// annotated nodes in embedding space. Sorted by node id.
pub fn neighbor_set(v: usize, ann: &AnnotationSet, g: &Graph, emb: ArrayView2<f64>, k_feat: usize) -> Vec<usize> {
    let mut out: Vec<usize> = g.neighbors(v).iter().copied().filter(|&u| ann.contains(u)).collect();
    if k_feat > 0 {
        let mut cand: Vec<(f64, usize)> = ann
            .nodes()
            .filter(|&u| u != v)
            .map(|u| (sq_dist(emb, v, u), u))
            .collect();
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1)));
        out.extend(cand.into_iter().take(k_feat).map(|(_, u)| u));
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Fraction of `nbrs` sharing `v`'s annotated label.
pub fn agreement(v: usize, nbrs: &[usize], ann: &AnnotationSet) -> Result<f64> {
    if nbrs.is_empty() {
        return Err(CaneError::NoNeighborEvidence(v));
    }
    let own = ann
        .label(v)
        .ok_or_else(|| CaneError::arg(format!("node {v} is not annotated")))?;
    let mut same = 0usize;
    for &u in nbrs {
        let l = ann
            .label(u)
            .ok_or_else(|| CaneError::arg(format!("neighbor {u} is not annotated")))?;
        if l == own {
            same += 1;
        }
    }
    Ok(same as f64 / nbrs.len() as f64)
}

/// Agreement for every annotated node with at least one neighbor.
pub fn agreement_records(ann: &AnnotationSet, g: &Graph, emb: ArrayView2<f64>, k_feat: usize) -> Vec<AgreementRecord> {
    ann.nodes()
        .filter_map(|v| {
            let nbrs = neighbor_set(v, ann, g, emb, k_feat);
            let a = agreement(v, &nbrs, ann).ok()?;
            Some(AgreementRecord {
                node: v,
                neighbors: nbrs,
                agreement: a,
            })
        })
        .collect()
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Back-off aggregation shared by the agreement estimator and the
/// ground-truth oracle: `cells[k][c]` holds per-node scores.
pub fn tensor_from_cells(cells: &[Vec<Vec<f64>>], min_support: usize) -> TransitionTensor {
    let k = cells.len();
    let c = cells.first().map_or(0, Vec::len);
    let all: Vec<f64> = cells.iter().flatten().flatten().copied().collect();
    let global = mean(&all).unwrap_or(1.0 / c as f64);
    let mut diags = vec![vec![0.0; c]; k];
    let mut support = vec![vec![0usize; c]; k];
    let mut backoff = vec![vec![Backoff::Global; c]; k];
    for kk in 0..k {
        let cluster_scores: Vec<f64> = cells[kk].iter().flatten().copied().collect();
        let cluster_mean = mean(&cluster_scores);
        for cc in 0..c {
            let cell = &cells[kk][cc];
            support[kk][cc] = cell.len();
            let (d, tag) = if cell.len() >= min_support.max(1) {
                (mean(cell).expect("nonempty"), Backoff::Cell)
            } else if let Some(m) = cluster_mean {
                (m, Backoff::Cluster)
            } else {
                (global, Backoff::Global)
            };
            diags[kk][cc] = d;
            backoff[kk][cc] = tag;
        }
    }
    TransitionTensor::from_diagonals(&diags, support, backoff, min_support)
}

/// Estimates `T_c` from the probe annotations only. Cells are keyed by
/// cluster and *annotated* label.
pub fn estimate_tc(
    probe: &AnnotationSet,
    cm: &ClusterModel,
    g: &Graph,
    emb: ArrayView2<f64>,
    cfg: &EstimatorConfig,
) -> Result<TransitionTensor> {
    if probe.is_empty() {
        return Err(CaneError::arg("probe set is empty"));
    }
    let (k, c) = (cm.num_clusters(), g.num_classes());
    let mut cells = vec![vec![Vec::new(); c]; k];
    for rec in agreement_records(probe, g, emb, cfg.k_feat) {
        let label = probe.label(rec.node).expect("record from probe");
        cells[cm.cluster_of(rec.node)][label].push(rec.agreement);
    }
    Ok(tensor_from_cells(&cells, cfg.min_support))
}

/// `T_c` measured against ground truth: per (cluster, true class), the
/// fraction of annotated nodes whose label is correct.
pub fn oracle_tc(ann: &AnnotationSet, truth: &Truth, cm: &ClusterModel, min_support: usize) -> TransitionTensor {
    let (k, c) = (cm.num_clusters(), truth.num_classes());
    let mut cells = vec![vec![Vec::new(); c]; k];
    for (v, a) in ann.iter() {
        if let Some(y) = truth.get(v) {
            cells[cm.cluster_of(v)][y].push(if a.label == y { 1.0 } else { 0.0 });
        }
    }
    tensor_from_cells(&cells, min_support)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementBias {
    pub n_correct: usize,
    pub n_wrong: usize,
    pub mean_correct: Option<f64>,
    pub mean_wrong: Option<f64>,
    pub gap: Option<f64>,
}

/// Mean agreement over correctly vs incorrectly annotated probe nodes.
pub fn agreement_bias_report(
    probe: &AnnotationSet,
    truth: &Truth,
    g: &Graph,
    emb: ArrayView2<f64>,
    k_feat: usize,
) -> AgreementBias {
    let (mut right, mut wrong) = (Vec::new(), Vec::new());
    for rec in agreement_records(probe, g, emb, k_feat) {
        let Some(y) = truth.get(rec.node) else {
            continue;
        };
        if probe.label(rec.node) == Some(y) {
            right.push(rec.agreement);
        } else {
            wrong.push(rec.agreement);
        }
    }
    let (mc, mw) = (mean(&right), mean(&wrong));
    AgreementBias {
        n_correct: right.len(),
        n_wrong: wrong.len(),
        mean_correct: mc,
        mean_wrong: mw,
        gap: mc.zip(mw).map(|(a, b)| a - b),
    }
}
