//! Label-blind seed selection: per-cluster quotas, centrality + density
//! ranking, and a round-robin order whose prefix is the probe set.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::error::{CaneError, Result};

pub const SEEDS_PER_CLASS: usize = 50;
pub const DEFAULT_RHO: f64 = 0.4;
pub const DEFAULT_KNN: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPlan {
    /// Seeds in annotation order; the first `probe_size` form the probe.
    pub seeds: Vec<usize>,
    pub probe_size: usize,
    pub budget: usize,
    pub rho: f64,
}

impl SeedPlan {
    pub fn probe(&self) -> &[usize] {
        &self.seeds[..self.probe_size]
    }

    pub fn rest(&self) -> &[usize] {
        &self.seeds[self.probe_size..]
    }
}

pub fn default_budget(num_classes: usize) -> usize {
    SEEDS_PER_CLASS * num_classes
}

pub fn probe_size(budget: usize, rho: f64) -> usize {
    // guard against 0.4 * 200 = 80.00000000000001
    ((rho * budget as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Reduced budgets of the budget-sensitivity sweep: 13, 25, 37 or 50
/// seeds per class.
pub fn budget_schedule(num_classes: usize, fraction: f64) -> Result<usize> {
    let per_class = [(0.25, 13), (0.5, 25), (0.75, 37), (1.0, 50)]
        .iter()
        .find(|(f, _)| (f - fraction).abs() < 1e-12)
        .map(|&(_, b)| b)
        .ok_or_else(|| CaneError::arg(format!("budget fraction {fraction} not in {{0.25, 0.5, 0.75, 1.0}}")))?;
    Ok(per_class * num_classes)
}

/// Largest-remainder quotas proportional to cluster size, at least one per
/// nonempty cluster when the budget allows, never above a cluster's size.
pub fn cluster_quotas(sizes: &[usize], budget: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let total = budget.min(n);
    let mut quota = vec![0usize; sizes.len()];
    if total == 0 {
        return quota;
    }
    let share: Vec<f64> = sizes.iter().map(|&s| total as f64 * s as f64 / n as f64).collect();
    for (q, &s) in quota.iter_mut().zip(&share) {
        *q = s.floor() as usize;
    }
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (share[a] - share[a].floor(), share[b] - share[b].floor());
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    let mut left = total - quota.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if quota[k] < sizes[k] {
            quota[k] += 1;
            left -= 1;
        }
    }

    let nonempty: Vec<usize> = (0..sizes.len()).filter(|&k| sizes[k] > 0).collect();
    if total >= nonempty.len() {
        for &k in &nonempty {
            if quota[k] > 0 {
                continue;
            }
            // take from the cluster most above its proportional share
            let donor = (0..sizes.len())
                .filter(|&j| quota[j] >= 2)
                .max_by(|&a, &b| {
                    (quota[a] as f64 - share[a])
                        .partial_cmp(&(quota[b] as f64 - share[b]))
                        .expect("finite")
                        .then(b.cmp(&a))
                })
                .expect("total >= nonempty clusters implies a donor");
            quota[donor] -= 1;
            quota[k] = 1;
        }
    }
    quota
}

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn zscore(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < 1e-12 * (1.0 + mean.abs()) {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - mean) / sd).collect()
}

/// Members of one cluster ranked by z(−distance to centroid) + z(density),
/// best first, ties to the lowest node id.
pub fn rank_cluster(emb: ArrayView2<f64>, members: &[usize], centroid: ArrayView1<f64>, knn: usize) -> Vec<usize> {
    if members.is_empty() {
        return Vec::new();
    }
    let central: Vec<f64> = members.iter().map(|&v| -dist(emb.row(v), centroid)).collect();
    let k = knn.min(members.len() - 1);
    let density: Vec<f64> = members
        .iter()
        .map(|&v| {
            if k == 0 {
                return 0.0;
            }
            let mut ds: Vec<f64> = members
                .iter()
                .filter(|&&u| u != v)
                .map(|&u| dist(emb.row(v), emb.row(u)))
                .collect();
            ds.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            -ds[..k].iter().sum::<f64>() / k as f64
        })
        .collect();
    let (zc, zd) = (zscore(&central), zscore(&density));
    let mut idx: Vec<usize> = (0..members.len()).collect();
    idx.sort_by(|&a, &b| {
        let (sa, sb) = (zc[a] + zd[a], zc[b] + zd[b]);
        sb.partial_cmp(&sa).expect("finite").then(members[a].cmp(&members[b]))
    });
    idx.into_iter().map(|i| members[i]).collect()
}

/// Chooses the annotation set from the embedding and partition alone.
pub fn select_seeds(emb: ArrayView2<f64>, cm: &ClusterModel, budget: usize, rho: f64, knn: usize) -> Result<SeedPlan> {
    let n = emb.nrows();
    if !(rho > 0.0 && rho < 1.0) {
        return Err(CaneError::arg(format!("rho must lie in (0, 1), got {rho}")));
    }
    if budget > n {
        return Err(CaneError::arg(format!("budget {budget} exceeds node count {n}")));
    }
    if cm.assignment.len() != n {
        return Err(CaneError::arg("cluster assignment does not cover the embedding"));
    }
    let members = cm.members();
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let quotas = cluster_quotas(&sizes, budget);
    let picks: Vec<Vec<usize>> = members
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let mut ranked = rank_cluster(emb, m, cm.centroids.row(k), knn);
            ranked.truncate(quotas[k]);
            ranked
        })
        .collect();

    let mut seeds = Vec::with_capacity(budget);
    let depth = picks.iter().map(Vec::len).max().unwrap_or(0);
    for round in 0..depth {
        for p in &picks {
            if let Some(&v) = p.get(round) {
                seeds.push(v);
            }
        }
    }
    let probe_size = probe_size(seeds.len(), rho).min(seeds.len());
    Ok(SeedPlan {
        seeds,
        probe_size,
        budget,
        rho,
    })
}
