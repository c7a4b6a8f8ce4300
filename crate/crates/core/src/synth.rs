//! Attributed graphs with planted clusters, labels and annotation noise.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::annotate::{NoiseKind, PlantedNoiseModel};
use crate::cluster::ClusterModel;
use crate::error::{CaneError, Result};
use crate::graph::{save_graph, Dataset, Graph, Truth};
use crate::rng::{derive_seed, stage_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub num_classes: usize,
    /// Planted cluster count.
    pub clusters: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Edge-probability multiplier for endpoints of different classes.
    pub class_affinity: f64,
    pub feature_dim: usize,
    /// Norm of each class mean, in units of the per-coordinate noise sd.
    pub class_sep: f64,
    /// Norm of each cluster offset, in the same units.
    pub cluster_sep: f64,
    /// Mass of the dominant class (`cluster mod C`) when `mixture` is absent.
    pub dominant_mass: f64,
    /// Cluster → class rows; defaults to the dominant-mass construction.
    pub mixture: Option<Vec<Vec<f64>>>,
    /// Defaults to a cluster-conditional grid over `[0.2, 0.95]`.
    pub noise: Option<PlantedNoiseModel>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 2000,
            num_classes: 4,
            clusters: 8,
            p_in: 0.02,
            p_out: 0.002,
            class_affinity: 0.25,
            feature_dim: 16,
            class_sep: 4.0,
            cluster_sep: 6.0,
            dominant_mass: 0.7,
            mixture: None,
            noise: None,
            seed: 0,
        }
    }
}

pub const GRID_LO: f64 = 0.2;
pub const GRID_HI: f64 = 0.95;

/// Rows with `dominant` mass on class `k mod C` and the rest spread evenly.
pub fn dominant_mixture(k: usize, c: usize, dominant: f64) -> Vec<Vec<f64>> {
    let rest = (1.0 - dominant) / (c - 1) as f64;
    (0..k)
        .map(|cl| (0..c).map(|i| if i == cl % c { dominant } else { rest }).collect())
        .collect()
}

impl SynthSpec {
    pub fn with_seed(seed: u64) -> Self {
        SynthSpec {
            seed,
            ..Default::default()
        }
    }

    pub fn mixture(&self) -> Vec<Vec<f64>> {
        self.mixture
            .clone()
            .unwrap_or_else(|| dominant_mixture(self.clusters, self.num_classes, self.dominant_mass))
    }

    pub fn noise(&self) -> PlantedNoiseModel {
        self.noise.clone().unwrap_or_else(|| {
            PlantedNoiseModel::cluster_grid(
                self.clusters,
                self.num_classes,
                GRID_LO,
                GRID_HI,
                derive_seed(self.seed, "planted-noise"),
            )
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k, c) = (self.n, self.clusters, self.num_classes);
        if c < 2 || k < c || n < k {
            return Err(CaneError::arg(format!(
                "need n ≥ K ≥ C ≥ 2, got n = {n}, K = {k}, C = {c}"
            )));
        }
        if !(self.p_out >= 0.0 && self.p_in > self.p_out && self.p_in <= 1.0) {
            return Err(CaneError::arg(format!(
                "need 1 ≥ p_in > p_out ≥ 0, got {} / {}",
                self.p_in, self.p_out
            )));
        }
        if !(self.class_affinity > 0.0 && self.class_affinity <= 1.0) {
            return Err(CaneError::arg("class_affinity must lie in (0, 1]"));
        }
        if self.feature_dim == 0 || !(self.class_sep >= 0.0) || !(self.cluster_sep >= 0.0) {
            return Err(CaneError::arg("feature_dim ≥ 1 and non-negative separations required"));
        }
        if self.mixture.is_none() && !(self.dominant_mass > 0.0 && self.dominant_mass <= 1.0) {
            return Err(CaneError::arg("dominant_mass must lie in (0, 1]"));
        }
        let mix = self.mixture();
        if mix.len() != k {
            return Err(CaneError::arg(format!("mixture has {} rows, expected {k}", mix.len())));
        }
        for (i, row) in mix.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if row.len() != c || row.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(CaneError::arg(format!(
                    "mixture row {i} is not a distribution over {c} classes"
                )));
            }
        }
        let noise = self.noise();
        noise.validate()?;
        if noise.num_classes() != c {
            return Err(CaneError::arg("noise model class count differs from num_classes"));
        }
        if noise.kind == NoiseKind::ClusterConditional && noise.tensor.len() != k {
            return Err(CaneError::arg(
                "cluster-conditional noise needs one matrix per planted cluster",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthInstance {
    pub dataset: Dataset,
    pub planted: ClusterModel,
    pub noise: PlantedNoiseModel,
    pub mixture: Vec<Vec<f64>>,
}

impl SynthInstance {
    pub fn graph(&self) -> &Graph {
        &self.dataset.graph
    }

    pub fn truth(&self) -> &Truth {
        self.dataset.truth.as_ref().expect("synthetic instances carry truth")
    }
}

fn random_direction(d: usize, norm: f64, rng: &mut impl Rng) -> Array1<f64> {
    let v = Array1::from_shape_simple_fn(d, || rng.sample::<f64, _>(StandardNormal));
    let len = v.dot(&v).sqrt().max(f64::MIN_POSITIVE);
    v * (norm / len)
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

pub fn generate(spec: &SynthSpec) -> Result<SynthInstance> {
    spec.validate()?;
    let (n, k, c, d) = (spec.n, spec.clusters, spec.num_classes, spec.feature_dim);
    let mixture = spec.mixture();

    let mut rng = stage_rng(derive_seed(spec.seed, "synth-partition"));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut assignment = vec![0; n];
    for (pos, &v) in order.iter().enumerate() {
        assignment[v] = pos * k / n;
    }
    let labels: Vec<usize> = assignment.iter().map(|&cl| draw(&mixture[cl], rng.random())).collect();

    let mut rng = stage_rng(derive_seed(spec.seed, "synth-edges"));
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let mut p = if assignment[u] == assignment[v] {
                spec.p_in
            } else {
                spec.p_out
            };
            if labels[u] != labels[v] {
                p *= spec.class_affinity;
            }
            if p > 0.0 && rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut rng = stage_rng(derive_seed(spec.seed, "synth-features"));
    let class_means: Vec<Array1<f64>> = (0..c).map(|_| random_direction(d, spec.class_sep, &mut rng)).collect();
    let offsets: Vec<Array1<f64>> = (0..k)
        .map(|_| random_direction(d, spec.cluster_sep, &mut rng))
        .collect();
    let mut feats = Array2::<f32>::zeros((n, d));
    for v in 0..n {
        let centre = &class_means[labels[v]] + &offsets[assignment[v]];
        for j in 0..d {
            feats[[v, j]] = (centre[j] + rng.sample::<f64, _>(StandardNormal)) as f32;
        }
    }

    let graph = Graph::new(n, edges, feats, c)?;
    let planted = ClusterModel::from_assignment(assignment, k, graph.features_f64().view())?;
    let truth = Truth::dense(labels, c)?;
    Ok(SynthInstance {
        dataset: Dataset {
            graph,
            truth: Some(truth),
        },
        planted,
        noise: spec.noise(),
        mixture,
    })
}

/// Fraction of edges whose endpoints share a true class.
pub fn edge_homophily(g: &Graph, truth: &Truth) -> f64 {
    let labeled: Vec<bool> = g
        .edges()
        .iter()
        .filter_map(|&(u, v)| Some(truth.get(u)? == truth.get(v)?))
        .collect();
    if labeled.is_empty() {
        return 0.0;
    }
    labeled.iter().filter(|&&s| s).count() as f64 / labeled.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedFile {
    #[serde(rename = "K")]
    pub k: usize,
    pub assignment: Vec<usize>,
    pub mixture: Vec<Vec<f64>>,
    pub noise: PlantedNoiseModel,
}

/// Writes the graph file set plus `planted.json`.
pub fn save_instance(inst: &SynthInstance, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    save_graph(&inst.dataset, dir)?;
    let planted = PlantedFile {
        k: inst.planted.num_clusters(),
        assignment: inst.planted.assignment.clone(),
        mixture: inst.mixture.clone(),
        noise: inst.noise.clone(),
    };
    let path = dir.join("planted.json");
    let text = serde_json::to_string_pretty(&planted).expect("planted file serializes");
    std::fs::write(&path, text).map_err(|e| CaneError::io(path, e))
}

pub fn load_planted(path: impl AsRef<Path>) -> Result<PlantedFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CaneError::io(path, e))?;
    let file: PlantedFile = serde_json::from_str(&text)
        .map_err(|e| CaneError::format(path.display().to_string(), e.line(), e.to_string()))?;
    file.noise.validate()?;
    if file.assignment.iter().any(|&a| a >= file.k) {
        return Err(CaneError::format(path.display().to_string(), 0, "cluster id ≥ K"));
    }
    Ok(file)
}
