//! Cluster-conditional noise diagnostic: per-(cluster, class) annotation
//! accuracy, within-class gap, per-class one-way ANOVA and Fisher's method.

use serde::{Deserialize, Serialize};

use crate::annotate::{AnnotationSet, Annotator, PlantedNoiseModel, SimulatedAnnotator};
use crate::cluster::ClusterModel;
use crate::error::{CaneError, Result};
use crate::graph::Truth;
use crate::stats::{chi2_sf, f_sf};

pub const DEFAULT_MIN_CELL: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAccuracy {
    pub cluster: usize,
    pub class: usize,
    pub support: usize,
    pub accuracy: f64,
}

/// Correctness indicators of annotated class-`i` nodes, grouped by cluster.
fn indicator_cells(ann: &AnnotationSet, truth: &Truth, cm: &ClusterModel) -> Vec<Vec<Vec<f64>>> {
    let mut cells = vec![vec![Vec::new(); cm.num_clusters()]; truth.num_classes()];
    for (v, a) in ann.iter() {
        if let Some(y) = truth.get(v) {
            cells[y][cm.cluster_of(v)].push(if a.label == y { 1.0 } else { 0.0 });
        }
    }
    cells
}

/// Accuracy of every (cluster, class) cell with at least `min_cell`
/// ground-truth-labeled annotated nodes, ordered by (class, cluster).
pub fn per_cluster_accuracy(
    ann: &AnnotationSet,
    truth: &Truth,
    cm: &ClusterModel,
    min_cell: usize,
) -> Vec<CellAccuracy> {
    let cells = indicator_cells(ann, truth, cm);
    let mut out = Vec::new();
    for (class, by_cluster) in cells.iter().enumerate() {
        for (cluster, xs) in by_cluster.iter().enumerate() {
            if xs.len() >= min_cell.max(1) {
                out.push(CellAccuracy {
                    cluster,
                    class,
                    support: xs.len(),
                    accuracy: xs.iter().sum::<f64>() / xs.len() as f64,
                });
            }
        }
    }
    out
}

/// One-way ANOVA `(F, p)` with `df = (g − 1, N − g)`. All-identical input
/// yields `(0, 1)`; zero within-group variance with distinct group means
/// yields `(f64::MAX, f64::MIN_POSITIVE)`.
pub fn anova_f(groups: &[Vec<f64>]) -> Result<(f64, f64)> {
    if groups.len() < 2 || groups.iter().any(|g| g.len() < 2) {
        return Err(CaneError::arg(
            "ANOVA needs at least two groups of at least two samples",
        ));
    }
    let g = groups.len() as f64;
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for grp in groups {
        let m = grp.iter().sum::<f64>() / grp.len() as f64;
        ssb += grp.len() as f64 * (m - grand) * (m - grand);
        ssw += grp.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    }
    let (df1, df2) = (g - 1.0, n as f64 - g);
    let scale = 1e-12 * (1.0 + grand * grand) * n as f64;
    if ssb <= scale && ssw <= scale {
        return Ok((0.0, 1.0));
    }
    if ssw <= scale {
        return Ok((f64::MAX, f64::MIN_POSITIVE));
    }
    let f = (ssb / df1) / (ssw / df2);
    Ok((f, f_sf(f, df1, df2).max(f64::MIN_POSITIVE)))
}

/// Fisher's method: `χ² = −2 Σ ln pᵢ` on `2m` degrees of freedom.
pub fn fisher_combine(ps: &[f64]) -> Result<f64> {
    if ps.is_empty() {
        return Err(CaneError::arg("no p-values to combine"));
    }
    if let Some(p) = ps.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(CaneError::arg(format!("p-value {p} outside (0, 1]")));
    }
    let stat = -2.0 * ps.iter().map(|p| p.ln()).sum::<f64>();
    Ok(chi2_sf(stat, 2.0 * ps.len() as f64).clamp(f64::MIN_POSITIVE, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTest {
    pub class: usize,
    pub groups: usize,
    pub f: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub cluster: usize,
    pub class: usize,
    /// Cell accuracy minus the class-level accuracy.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub min_cell: usize,
    pub cells: Vec<CellAccuracy>,
    /// Overall annotation accuracy per true class.
    pub class_accuracy: Vec<Option<f64>>,
    /// Macro mean of `class_accuracy`.
    pub t_ii: f64,
    /// Mean max−min cell accuracy over classes with ≥ 2 supported cells.
    pub delta_bar: f64,
    pub delta_classes: usize,
    pub f_bar: f64,
    pub fisher_p: f64,
    pub class_tests: Vec<ClassTest>,
    pub deviations: Vec<Deviation>,
}

pub fn diagnose(ann: &AnnotationSet, truth: &Truth, cm: &ClusterModel, min_cell: usize) -> DiagnosticReport {
    let cells = indicator_cells(ann, truth, cm);
    let table = per_cluster_accuracy(ann, truth, cm, min_cell);

    let class_accuracy: Vec<Option<f64>> = cells
        .iter()
        .map(|by_cluster| {
            let xs: Vec<f64> = by_cluster.iter().flatten().copied().collect();
            (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
        })
        .collect();
    let known: Vec<f64> = class_accuracy.iter().flatten().copied().collect();
    let t_ii = if known.is_empty() {
        0.0
    } else {
        known.iter().sum::<f64>() / known.len() as f64
    };

    let mut gaps = Vec::new();
    let mut class_tests = Vec::new();
    for (class, by_cluster) in cells.iter().enumerate() {
        let groups: Vec<Vec<f64>> = by_cluster
            .iter()
            .filter(|xs| xs.len() >= min_cell.max(2))
            .cloned()
            .collect();
        if groups.len() < 2 {
            continue;
        }
        let accs: Vec<f64> = groups.iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
        let hi = accs.iter().cloned().fold(f64::MIN, f64::max);
        let lo = accs.iter().cloned().fold(f64::MAX, f64::min);
        gaps.push(hi - lo);
        let (f, p) = anova_f(&groups).expect("groups checked");
        class_tests.push(ClassTest {
            class,
            groups: groups.len(),
            f,
            p,
        });
    }
    let delta_bar = if gaps.is_empty() {
        0.0
    } else {
        gaps.iter().sum::<f64>() / gaps.len() as f64
    };
    let f_bar = if class_tests.is_empty() {
        0.0
    } else {
        class_tests.iter().map(|t| t.f.min(1e300)).sum::<f64>() / class_tests.len() as f64
    };
    let ps: Vec<f64> = class_tests.iter().map(|t| t.p).collect();
    let fisher_p = fisher_combine(&ps).unwrap_or(1.0);

    let deviations = table
        .iter()
        .filter_map(|cell| {
            class_accuracy[cell.class].map(|t| Deviation {
                cluster: cell.cluster,
                class: cell.class,
                deviation: cell.accuracy - t,
            })
        })
        .collect();

    DiagnosticReport {
        min_cell,
        cells: table,
        class_accuracy,
        t_ii,
        delta_bar,
        delta_classes: gaps.len(),
        f_bar,
        fisher_p,
        class_tests,
        deviations,
    }
}

/// Diagnostic under a class-conditional annotator applied to every node:
/// diagonal `diag`, off-diagonal mass uniform.
pub fn null_control(
    truth: &Truth,
    cm: &ClusterModel,
    diag: f64,
    seed: u64,
    min_cell: usize,
) -> Result<DiagnosticReport> {
    let c = truth.num_classes();
    if !(diag > 1.0 / c as f64 && diag <= 1.0) {
        return Err(CaneError::arg(format!("null-control diagonal {diag} outside (1/C, 1]")));
    }
    let model = PlantedNoiseModel::class_conditional(c, diag, seed);
    let nodes: Vec<usize> = (0..truth.len()).filter(|&v| truth.get(v).is_some()).collect();
    let ann = SimulatedAnnotator::new(truth.clone(), cm.assignment.clone(), model)?
        .annotate(&nodes, false)?
        .annotations;
    Ok(diagnose(&ann, truth, cm, min_cell))
}
