//! k-means partitioning of the node embedding and partition-quality scores.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotate::AnnotationSet;
use crate::error::{CaneError, Result};
use crate::graph::{Graph, NormalizedAdjacency, Truth};
use crate::rng::{derive_indexed, stage_rng};

pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ClusterFile", try_from = "ClusterFile")]
pub struct ClusterModel {
    pub assignment: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn num_clusters(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn cluster_of(&self, v: usize) -> usize {
        self.assignment[v]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters()];
        for &k in &self.assignment {
            sizes[k] += 1;
        }
        sizes
    }

    /// Member lists, each sorted by node id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters()];
        for (v, &k) in self.assignment.iter().enumerate() {
            out[k].push(v);
        }
        out
    }

    /// A partition given directly (e.g. a planted one). Centroids are the
    /// member means of `points`; pass a 1-column zero matrix if none exist.
    pub fn from_assignment(assignment: Vec<usize>, k: usize, points: ArrayView2<f64>) -> Result<Self> {
        if assignment.iter().any(|&c| c >= k) {
            return Err(CaneError::arg("cluster id out of range"));
        }
        if points.nrows() != assignment.len() {
            return Err(CaneError::arg("points and assignment disagree on node count"));
        }
        let centroids = member_means(points, &assignment, k);
        let inertia = inertia_of(points, &assignment, &centroids);
        Ok(Self {
            assignment,
            centroids,
            inertia,
            inertia_trace: vec![inertia],
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ClusterFile {
    #[serde(rename = "K")]
    k: usize,
    assignment: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    inertia: f64,
    #[serde(default)]
    inertia_trace: Vec<f64>,
}

impl From<ClusterModel> for ClusterFile {
    fn from(m: ClusterModel) -> Self {
        ClusterFile {
            k: m.num_clusters(),
            centroids: m.centroids.rows().into_iter().map(|r| r.to_vec()).collect(),
            assignment: m.assignment,
            inertia: m.inertia,
            inertia_trace: m.inertia_trace,
        }
    }
}

impl TryFrom<ClusterFile> for ClusterModel {
    type Error = String;

    fn try_from(f: ClusterFile) -> std::result::Result<Self, String> {
        let d = f.centroids.first().map_or(0, Vec::len);
        if f.centroids.len() != f.k || f.centroids.iter().any(|r| r.len() != d) {
            return Err("centroid matrix is ragged or does not have K rows".into());
        }
        if f.assignment.iter().any(|&c| c >= f.k) {
            return Err("cluster id out of range".into());
        }
        let flat: Vec<f64> = f.centroids.into_iter().flatten().collect();
        Ok(ClusterModel {
            assignment: f.assignment,
            centroids: Array2::from_shape_vec((f.k, d), flat).map_err(|e| e.to_string())?,
            inertia: f.inertia,
            inertia_trace: f.inertia_trace,
        })
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn member_means(points: ArrayView2<f64>, assignment: &[usize], k: usize) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros((k, points.ncols()));
    let mut counts = vec![0usize; k];
    for (v, &c) in assignment.iter().enumerate() {
        sums.row_mut(c).scaled_add(1.0, &points.row(v));
        counts[c] += 1;
    }
    for (c, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            sums.row_mut(c).mapv_inplace(|x| x / cnt as f64);
        }
    }
    sums
}

fn inertia_of(points: ArrayView2<f64>, assignment: &[usize], centroids: &Array2<f64>) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(v, &c)| sq_dist(points.row(v), centroids.row(c)))
        .sum()
}

/// Nearest centroid, ties to the lowest id.
fn nearest(point: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: ArrayView2<f64>, k: usize, seed: u64) -> Array2<f64> {
    let n = points.nrows();
    let mut rng = stage_rng(seed);
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n).map(|v| sq_dist(points.row(v), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (v, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(v);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // every point coincides with a chosen center
            (0..n).find(|v| !chosen.contains(v)).expect("n >= k")
        };
        chosen.push(next);
        for (v, w) in d2.iter_mut().enumerate() {
            *w = w.min(sq_dist(points.row(v), points.row(next)));
        }
    }
    let mut centroids = Array2::zeros((k, points.ncols()));
    for (c, &v) in chosen.iter().enumerate() {
        centroids.row_mut(c).assign(&points.row(v));
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding. Stops when no assignment
/// changes or after [`MAX_ITERATIONS`]. An empty cluster is re-seeded at the
/// point farthest from its current centroid.
pub fn kmeans(points: ArrayView2<f64>, k: usize, seed: u64) -> Result<ClusterModel> {
    let n = points.nrows();
    if k == 0 {
        return Err(CaneError::arg("k must be >= 1"));
    }
    if n < k {
        return Err(CaneError::arg(format!("cannot form {k} clusters from {n} points")));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(CaneError::arg("non-finite point coordinate"));
    }
    let mut centroids = plus_plus_init(points, k, seed);
    let mut assignment = vec![0usize; n];
    let mut dists = vec![0.0; n];
    for v in 0..n {
        let (c, d) = nearest(points.row(v), &centroids);
        assignment[v] = c;
        dists[v] = d;
    }
    let mut trace = vec![dists.iter().sum::<f64>()];

    for _ in 0..MAX_ITERATIONS {
        centroids = member_means(points, &assignment, k);
        let mut counts = vec![0usize; k];
        for &c in &assignment {
            counts[c] += 1;
        }
        let mut taken = Vec::new();
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let far = (0..n)
                .filter(|v| !taken.contains(v))
                .map(|v| (v, sq_dist(points.row(v), centroids.row(assignment[v]))))
                .fold(
                    (usize::MAX, -1.0),
                    |best, (v, d)| if d > best.1 { (v, d) } else { best },
                );
            taken.push(far.0);
            centroids.row_mut(c).assign(&points.row(far.0));
        }

        let mut changed = false;
        for v in 0..n {
            let (c, d) = nearest(points.row(v), &centroids);
            if c != assignment[v] {
                changed = true;
                assignment[v] = c;
            }
            dists[v] = d;
        }
        trace.push(dists.iter().sum());
        if !changed {
            break;
        }
    }
    let inertia = inertia_of(points, &assignment, &centroids);
    Ok(ClusterModel {
        assignment,
        centroids,
        inertia,
        inertia_trace: trace,
    })
}

/// Best of `restarts` independent [`kmeans`] runs by final inertia; ties go
/// to the earliest run.
pub fn kmeans_restarts(points: ArrayView2<f64>, k: usize, seed: u64, restarts: usize) -> Result<ClusterModel> {
    let mut best: Option<ClusterModel> = None;
    for r in 0..restarts.max(1) {
        let run_seed = if r == 0 {
            seed
        } else {
            derive_indexed(seed, "kmeans-restart", r as u64)
        };
        let cm = kmeans(points, k, run_seed)?;
        if best.as_ref().is_none_or(|b| cm.inertia < b.inertia) {
            best = Some(cm);
        }
    }
    Ok(best.expect("at least one run"))
}

/// Embedding used for clustering: external vectors verbatim, otherwise
/// `Â^hops · X` as a training-free stand-in for a learned encoder.
pub fn choose_embedding(g: &Graph, external: Option<&Array2<f64>>, hops: usize) -> Result<Array2<f64>> {
    if let Some(e) = external {
        if e.nrows() != g.num_nodes() {
            return Err(CaneError::arg(format!(
                "embedding has {} rows, graph has {} nodes",
                e.nrows(),
                g.num_nodes()
            )));
        }
        return Ok(e.clone());
    }
    let mut x = g.features_f64();
    if hops > 0 {
        let a = NormalizedAdjacency::from_graph(g);
        for _ in 0..hops {
            x = a.spmm(&x);
        }
    }
    Ok(x)
}

/// Cluster count for a multiple of the class count, rounded up.
pub fn cluster_count(num_classes: usize, k_mult: f64) -> usize {
    ((num_classes as f64 * k_mult) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityReport {
    /// Dominant-true-class fraction per cluster (`None` for clusters
    /// without labeled members).
    pub per_cluster: Vec<Option<f64>>,
    pub weighted_purity: f64,
    /// Fraction of clusters whose dominant class holds a strict majority.
    pub majority_fraction: f64,
    /// Fraction of annotated clusters whose modal LLM label equals the
    /// dominant true class.
    pub mode_true_fraction: Option<f64>,
}

fn argmax_count(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &x) in counts.iter().enumerate() {
        if x > counts[best] {
            best = c;
        }
    }
    best
}

pub fn purity(cm: &ClusterModel, truth: &Truth, annotations: Option<&AnnotationSet>) -> PurityReport {
    let k = cm.num_clusters();
    let c = truth.num_classes();
    let mut counts = vec![vec![0usize; c]; k];
    for (v, &cl) in cm.assignment.iter().enumerate() {
        if let Some(y) = truth.get(v) {
            counts[cl][y] += 1;
        }
    }
    let mut per_cluster = Vec::with_capacity(k);
    let mut dominant = Vec::with_capacity(k);
    let (mut weighted, mut total, mut majority, mut nonempty) = (0.0, 0usize, 0usize, 0usize);
    for row in &counts {
        let size: usize = row.iter().sum();
        let top = argmax_count(row);
        dominant.push(top);
        if size == 0 {
            per_cluster.push(None);
            continue;
        }
        let frac = row[top] as f64 / size as f64;
        per_cluster.push(Some(frac));
        weighted += row[top] as f64;
        total += size;
        nonempty += 1;
        if 2 * row[top] > size {
            majority += 1;
        }
    }
    let mode_true_fraction = annotations.map(|ann| {
        let mut votes = vec![vec![0usize; c]; k];
        for (v, a) in ann.iter() {
            votes[cm.cluster_of(v)][a.label] += 1;
        }
        let (mut hit, mut seen) = (0usize, 0usize);
        for cl in 0..k {
            if votes[cl].iter().sum::<usize>() == 0 || per_cluster[cl].is_none() {
                continue;
            }
            seen += 1;
            if argmax_count(&votes[cl]) == dominant[cl] {
                hit += 1;
            }
        }
        if seen == 0 {
            0.0
        } else {
            hit as f64 / seen as f64
        }
    });
    PurityReport {
        per_cluster,
        weighted_purity: if total == 0 { 0.0 } else { weighted / total as f64 },
        majority_fraction: if nonempty == 0 {
            0.0
        } else {
            majority as f64 / nonempty as f64
        },
        mode_true_fraction,
    }
}
