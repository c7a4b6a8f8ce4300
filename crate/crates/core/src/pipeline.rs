//! End-to-end run: cluster, select and annotate seeds, estimate the
//! reliability tensor from the probe, then gated expansion, iterative label
//! correction and a final training pass.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::annotate::{AnnotationSet, Annotator};
use crate::cluster::{choose_embedding, cluster_count, kmeans_restarts, ClusterModel};
use crate::error::{CaneError, Result, StageExt};
use crate::gnn::{predict, train, Prediction, TrainConfig};
use crate::graph::{Graph, NormalizedAdjacency, Truth};
use crate::noise::{collapse_to_global, estimate_tc, oracle_tc, EstimatorConfig, TransitionTensor};
use crate::rng::{derive_indexed, derive_seed};
use crate::seeds::{budget_schedule, default_budget, select_seeds, SeedPlan, DEFAULT_KNN, DEFAULT_RHO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Seed,
    Expanded,
    Corrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub label: usize,
    pub provenance: Provenance,
    /// Expansion round for expanded nodes, correction round for corrected
    /// ones, 0 for seeds.
    pub round: usize,
}

/// Current working label of every labeled node.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelPool {
    entries: BTreeMap<usize, PoolEntry>,
}

impl LabelPool {
    pub fn from_annotations(ann: &AnnotationSet) -> Self {
        let entries = ann
            .iter()
            .map(|(v, a)| {
                (
                    v,
                    PoolEntry {
                        label: a.label,
                        provenance: Provenance::Seed,
                        round: 0,
                    },
                )
            })
            .collect();
        LabelPool { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.entries.contains_key(&v)
    }

    pub fn label(&self, v: usize) -> Option<usize> {
        self.entries.get(&v).map(|e| e.label)
    }

    pub fn get(&self, v: usize) -> Option<&PoolEntry> {
        self.entries.get(&v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &PoolEntry)> {
        self.entries.iter().map(|(&v, e)| (v, e))
    }

    /// `(node, label)` pairs in node order, the training set.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|(&v, e)| (v, e.label)).collect()
    }

    /// Adds an unlabeled node; returns false if `v` already has a label.
    pub fn insert_expanded(&mut self, v: usize, label: usize, round: usize) -> bool {
        if self.entries.contains_key(&v) {
            return false;
        }
        self.entries.insert(
            v,
            PoolEntry {
                label,
                provenance: Provenance::Expanded,
                round,
            },
        );
        true
    }

    /// Overwrites the label of an existing node; returns false if absent.
    pub fn correct(&mut self, v: usize, label: usize, round: usize) -> bool {
        match self.entries.get_mut(&v) {
            Some(e) => {
                *e = PoolEntry {
                    label,
                    provenance: Provenance::Corrected,
                    round,
                };
                true
            }
            None => false,
        }
    }

    fn without(&self, nodes: &BTreeSet<usize>) -> LabelPool {
        LabelPool {
            entries: self
                .entries
                .iter()
                .filter(|(v, _)| !nodes.contains(v))
                .map(|(&v, &e)| (v, e))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub tau_base: f64,
    /// Per-class overrides of `tau_base`.
    pub tau_per_class: Option<Vec<f64>>,
    pub alpha: f64,
    /// When nonempty, `alpha` is chosen from these values on a held-out
    /// slice of the annotations.
    pub alpha_grid: Vec<f64>,
    pub expansion_rounds: usize,
    /// Admissions per round; `None` means the seed count.
    pub max_per_round: Option<usize>,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            tau_base: 0.9,
            tau_per_class: None,
            alpha: 0.2,
            alpha_grid: Vec::new(),
            expansion_rounds: 2,
            max_per_round: None,
        }
    }
}

impl GateConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let in_open_unit = |t: f64| t > 0.0 && t < 1.0;
        if !in_open_unit(self.tau_base) {
            return Err(CaneError::arg(format!(
                "gate.tau_base = {} outside (0, 1)",
                self.tau_base
            )));
        }
        if let Some(ts) = &self.tau_per_class {
            if ts.len() != num_classes || !ts.iter().all(|&t| in_open_unit(t)) {
                return Err(CaneError::arg("gate.tau_per_class needs one value in (0, 1) per class"));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite())
            || self.alpha_grid.iter().any(|a| !(*a >= 0.0 && a.is_finite()))
        {
            return Err(CaneError::arg("gate.alpha must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn tau(&self, class: usize) -> f64 {
        self.tau_per_class.as_ref().map_or(self.tau_base, |t| t[class])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlcConfig {
    pub theta0: f64,
    pub beta: f64,
    pub max_rounds: usize,
}

impl Default for IlcConfig {
    fn default() -> Self {
        IlcConfig {
            theta0: 0.3,
            beta: 0.4,
            max_rounds: 10,
        }
    }
}

impl IlcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.theta0) || !(self.beta >= 0.0) || self.theta0 + self.beta > 1.0 {
            return Err(CaneError::arg(format!(
                "need 0 ≤ theta0 < 1, beta ≥ 0, theta0 + beta ≤ 1; got {} and {}",
                self.theta0, self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    NoTc,
    GlobalTc,
    NoElr,
    OracleTc,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Full, Mode::NoTc, Mode::GlobalTc, Mode::NoElr, Mode::OracleTc];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoTc => "no_tc",
            Mode::GlobalTc => "global_tc",
            Mode::NoElr => "no_elr",
            Mode::OracleTc => "oracle_tc",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = CaneError;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| CaneError::arg(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub k_mult: f64,
    pub kmeans_restarts: usize,
    /// Propagation rounds for the training-free embedding.
    pub hops: usize,
    /// Total seed budget; overrides `budget_frac`.
    pub budget: Option<usize>,
    /// One of 0.25, 0.5, 0.75, 1.0 of the default per-class budget.
    pub budget_frac: Option<f64>,
    pub rho: f64,
    pub knn: usize,
    pub estimator: EstimatorConfig,
    pub gnn: TrainConfig,
    pub gate: GateConfig,
    pub ilc: IlcConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::Full,
            k_mult: 2.0,
            kmeans_restarts: 10,
            hops: 2,
            budget: None,
            budget_frac: None,
            rho: DEFAULT_RHO,
            knn: DEFAULT_KNN,
            estimator: EstimatorConfig::default(),
            gnn: TrainConfig::default(),
            gate: GateConfig::default(),
            ilc: IlcConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(self.k_mult > 0.0 && self.k_mult.is_finite()) {
            return Err(CaneError::arg(format!("k_mult = {} must be positive", self.k_mult)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(CaneError::arg(format!("rho = {} outside (0, 1)", self.rho)));
        }
        if self.budget == Some(0) {
            return Err(CaneError::arg("budget must be positive"));
        }
        self.budget(num_classes)?;
        self.gnn.validate()?;
        self.gate.validate(num_classes)?;
        self.ilc.validate()
    }

    pub fn budget(&self, num_classes: usize) -> Result<usize> {
        match (self.budget, self.budget_frac) {
            (Some(b), _) => Ok(b),
            (None, Some(f)) => budget_schedule(num_classes, f),
            (None, None) => Ok(default_budget(num_classes)),
        }
    }
}

/// `min(1, τ_g + α(1 − T[k, g, g]))`; a threshold of 1 admits nothing.
pub fn expansion_threshold(k: usize, g: usize, tc: &TransitionTensor, gate: &GateConfig, alpha: f64) -> f64 {
    (gate.tau(g) + alpha * (1.0 - tc.diag(k, g))).min(1.0)
}

/// One gated expansion round. Admits unlabeled nodes whose top probability
/// strictly exceeds their region's threshold, most confident first, up to
/// `cap`. Returns the number admitted.
pub fn expand_round(
    pool: &mut LabelPool,
    pred: &Prediction,
    cm: &ClusterModel,
    tc: &TransitionTensor,
    gate: &GateConfig,
    alpha: f64,
    cap: usize,
    round: usize,
) -> usize {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (v, &g) in pred.labels.iter().enumerate() {
        if pool.contains(v) {
            continue;
        }
        let conf = pred.probs[[v, g]];
        if conf > expansion_threshold(cm.cluster_of(v), g, tc, gate, alpha) {
            candidates.push((conf, v, g));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    candidates.truncate(cap);
    for &(_, v, g) in &candidates {
        pool.insert_expanded(v, g, round);
    }
    candidates.len()
}

/// Correction threshold `θ₀ + β·T[k, ȳ, ȳ]`.
pub fn correction_threshold(k: usize, label: usize, tc: &TransitionTensor, ilc: &IlcConfig) -> f64 {
    ilc.theta0 + ilc.beta * tc.diag(k, label)
}

/// One synchronous correction round: every decision reads the pool as it
/// was at the start of the round. Returns the number of labels changed.
pub fn correct_round(
    pool: &mut LabelPool,
    pred: &[usize],
    g: &Graph,
    cm: &ClusterModel,
    tc: &TransitionTensor,
    ilc: &IlcConfig,
    round: usize,
) -> usize {
    let mut changes = Vec::new();
    for (v, entry) in pool.iter() {
        let gv = pred[v];
        if gv == entry.label {
            continue;
        }
        let (mut labeled, mut agree) = (0usize, 0usize);
        for &u in g.neighbors(v) {
            if let Some(lu) = pool.label(u) {
                labeled += 1;
                agree += usize::from(lu == gv);
            }
        }
        if labeled == 0 {
            continue;
        }
        let s = agree as f64 / labeled as f64;
        if s > correction_threshold(cm.cluster_of(v), entry.label, tc, ilc) {
            changes.push((v, gv));
        }
    }
    for &(v, gv) in &changes {
        pool.correct(v, gv, round);
    }
    changes.len()
}

/// Accuracy of `pred` over every node not in `exclude`.
pub fn evaluate(pred: &[usize], truth: &Truth, exclude: &BTreeSet<usize>) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(CaneError::arg("prediction and truth lengths differ"));
    }
    let (mut seen, mut right) = (0usize, 0usize);
    for (v, &p) in pred.iter().enumerate() {
        if exclude.contains(&v) {
            continue;
        }
        let y = truth
            .get(v)
            .ok_or_else(|| CaneError::arg(format!("no true label for evaluation node {v}")))?;
        seen += 1;
        right += usize::from(p == y);
    }
    if seen == 0 {
        return Err(CaneError::arg("no nodes left to evaluate"));
    }
    Ok(right as f64 / seen as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub mode: Mode,
    /// Accuracy over all non-seed nodes; absent without ground truth.
    pub accuracy: Option<f64>,
    pub evaluated_nodes: usize,
    pub num_clusters: usize,
    pub budget: usize,
    pub probe_size: usize,
    pub annotated: usize,
    pub failed_annotations: Vec<usize>,
    pub alpha: f64,
    pub expansion_admitted: Vec<usize>,
    pub correction_counts: Vec<usize>,
    pub rounds: usize,
    pub converged: bool,
    pub labels_corrected: usize,
    /// Share of all label changes made in the first correction round, in %.
    pub pct_round1: Option<f64>,
    pub final_pool_size: usize,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub clusters: ClusterModel,
    pub plan: SeedPlan,
    pub annotations: AnnotationSet,
    pub tc: TransitionTensor,
    pub pool: LabelPool,
    pub prediction: Prediction,
}

struct Ctx<'a> {
    g: &'a Graph,
    adj: NormalizedAdjacency,
    x: Array2<f64>,
    cm: &'a ClusterModel,
    tc: &'a TransitionTensor,
    cfg: &'a PipelineConfig,
    gnn: TrainConfig,
    seed: u64,
}

impl Ctx<'_> {
    fn fit(&self, pool: &LabelPool, stage: &str, index: u64) -> Result<Prediction> {
        let out = train(
            self.g,
            &self.adj,
            &pool.pairs(),
            &self.gnn,
            derive_indexed(self.seed, stage, index),
        )?;
        predict(&out.model, &self.adj, &self.x)
    }

    fn expand(&self, pool: &mut LabelPool, alpha: f64, cap: usize, stage: &str) -> Result<Vec<usize>> {
        let mut admitted = Vec::new();
        for round in 1..=self.cfg.gate.expansion_rounds {
            let pred = self.fit(pool, stage, round as u64)?;
            admitted.push(expand_round(
                pool,
                &pred,
                self.cm,
                self.tc,
                &self.cfg.gate,
                alpha,
                cap,
                round,
            ));
        }
        Ok(admitted)
    }

    /// Picks α by agreement with a held-out fifth of the non-probe
    /// annotations; ties go to the smaller value.
    fn select_alpha(&self, pool: &LabelPool, plan: &SeedPlan, ann: &AnnotationSet, cap: usize) -> Result<f64> {
        let held: BTreeSet<usize> = plan
            .rest()
            .iter()
            .copied()
            .filter(|&v| ann.contains(v))
            .step_by(5)
            .collect();
        if held.is_empty() {
            return Ok(self.cfg.gate.alpha);
        }
        let base = pool.without(&held);
        let mut grid = self.cfg.gate.alpha_grid.clone();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let mut best = (f64::NEG_INFINITY, self.cfg.gate.alpha);
        for (i, &alpha) in grid.iter().enumerate() {
            let mut trial = base.clone();
            self.expand(&mut trial, alpha, cap, &format!("alpha-{i}"))?;
            let pred = self.fit(&trial, "alpha-final", i as u64)?;
            let hits = held.iter().filter(|&&v| ann.label(v) == Some(pred.labels[v])).count();
            let score = hits as f64 / held.len() as f64;
            if score > best.0 {
                best = (score, alpha);
            }
        }
        Ok(best.1)
    }
}

/// Everything that precedes the first annotation request.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub embedding: Array2<f64>,
    pub clusters: ClusterModel,
    pub plan: SeedPlan,
}

/// Embeds, clusters and selects the seed plan. `run_cane` starts with this
/// call, so a plan prepared separately matches the one a full run uses.
pub fn prepare(g: &Graph, external_emb: Option<&Array2<f64>>, cfg: &PipelineConfig, seed: u64) -> Result<Prepared> {
    let c = g.num_classes();
    cfg.validate(c).stage("config")?;
    let embedding = choose_embedding(g, external_emb, cfg.hops).stage("embed")?;
    let k = cluster_count(c, cfg.k_mult).min(g.num_nodes());
    let clusters =
        kmeans_restarts(embedding.view(), k, derive_seed(seed, "kmeans"), cfg.kmeans_restarts).stage("cluster")?;
    let budget = cfg.budget(c).stage("config")?;
    let plan = select_seeds(embedding.view(), &clusters, budget, cfg.rho, cfg.knn).stage("select")?;
    Ok(Prepared {
        embedding,
        clusters,
        plan,
    })
}

/// Runs every stage. Ground truth, when given, is touched only by the
/// oracle-tensor mode and the final accuracy.
pub fn run_cane(
    g: &Graph,
    external_emb: Option<&Array2<f64>>,
    cfg: &PipelineConfig,
    annotator: &dyn Annotator,
    eval: Option<&Truth>,
    seed: u64,
) -> Result<RunOutcome> {
    let c = g.num_classes();
    cfg.validate(c).stage("config")?;
    if cfg.mode == Mode::OracleTc && eval.is_none() {
        return Err(CaneError::arg("oracle_tc mode needs ground-truth labels")).stage("config");
    }

    let Prepared {
        embedding: emb,
        clusters: cm,
        plan,
    } = prepare(g, external_emb, cfg, seed)?;
    let budget = plan.budget;

    let probe = annotator.annotate(plan.probe(), true).stage("annotate-probe")?;
    let estimated = estimate_tc(&probe.annotations, &cm, g, emb.view(), &cfg.estimator).stage("estimate")?;
    let rest = annotator.annotate(plan.rest(), false).stage("annotate-rest")?;
    let mut annotations = probe.annotations;
    annotations.merge(rest.annotations);
    let mut failed = probe.failed;
    failed.extend(rest.failed);
    if annotations.is_empty() {
        return Err(CaneError::Annotation("no seed received a usable label".into())).stage("annotate-rest");
    }

    let tc = match cfg.mode {
        Mode::Full | Mode::NoElr | Mode::NoTc => estimated,
        Mode::GlobalTc => collapse_to_global(&estimated),
        Mode::OracleTc => oracle_tc(
            &annotations,
            eval.expect("checked above"),
            &cm,
            cfg.estimator.min_support,
        ),
    };
    let mut gnn = cfg.gnn.clone();
    if cfg.mode == Mode::NoElr {
        gnn.elr_lambda = 0.0;
    }
    let mut ilc = cfg.ilc.clone();
    if cfg.mode == Mode::NoTc {
        ilc.beta = 0.0;
    }

    let ctx = Ctx {
        g,
        adj: NormalizedAdjacency::from_graph(g),
        x: g.features_f64(),
        cm: &cm,
        tc: &tc,
        cfg,
        gnn,
        seed,
    };
    let mut pool = LabelPool::from_annotations(&annotations);
    let cap = cfg.gate.max_per_round.unwrap_or(plan.seeds.len());
    let alpha = if cfg.mode == Mode::NoTc {
        0.0
    } else if cfg.gate.alpha_grid.is_empty() {
        cfg.gate.alpha
    } else {
        ctx.select_alpha(&pool, &plan, &annotations, cap)
            .stage("select-alpha")?
    };
    let expansion_admitted = ctx.expand(&mut pool, alpha, cap, "expand").stage("expand")?;

    let mut correction_counts = Vec::new();
    let mut converged = false;
    for round in 1..=ilc.max_rounds {
        let pred = ctx.fit(&pool, "correct", round as u64).stage("correct")?;
        let changed = correct_round(&mut pool, &pred.labels, g, &cm, &tc, &ilc, round);
        correction_counts.push(changed);
        if changed == 0 {
            converged = true;
            break;
        }
    }

    let prediction = ctx.fit(&pool, "final", 0).stage("final")?;
    let exclude: BTreeSet<usize> = plan.seeds.iter().copied().collect();
    let accuracy = eval
        .map(|t| evaluate(&prediction.labels, t, &exclude))
        .transpose()
        .stage("evaluate")?;
    let labels_corrected: usize = correction_counts.iter().sum();

    let report = RunReport {
        seed,
        mode: cfg.mode,
        accuracy,
        evaluated_nodes: g.num_nodes() - exclude.len(),
        num_clusters: cm.num_clusters(),
        budget,
        probe_size: plan.probe_size,
        annotated: annotations.len(),
        failed_annotations: failed,
        alpha,
        expansion_admitted,
        rounds: correction_counts.len(),
        converged,
        labels_corrected,
        pct_round1: (labels_corrected > 0).then(|| 100.0 * correction_counts[0] as f64 / labels_corrected as f64),
        correction_counts,
        final_pool_size: pool.len(),
        config: cfg.clone(),
    };
    Ok(RunOutcome {
        report,
        clusters: cm,
        plan,
        annotations,
        tc,
        pool,
        prediction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{PlantedNoiseModel, SimulatedAnnotator, Source, Vote};
    use crate::noise::Backoff;
    use crate::synth::{generate, SynthSpec};

    fn tensor(diags: Vec<Vec<f64>>) -> TransitionTensor {
        let (k, c) = (diags.len(), diags[0].len());
        TransitionTensor::from_diagonals(&diags, vec![vec![3; c]; k], vec![vec![Backoff::Cell; c]; k], 3)
    }

    #[test]
    fn threshold_arithmetic() {
        let gate = GateConfig::default();
        let reliable = TransitionTensor::identity(1, 4);
        assert!((expansion_threshold(0, 1, &reliable, &gate, 0.0) - 0.9).abs() < 1e-15);
        assert!(
            (expansion_threshold(0, 1, &tensor(vec![vec![1.0; 4]]), &gate, 0.2) - (0.9 + 0.2 * 0.001)).abs() < 1e-12
        );
        let t = tensor(vec![vec![0.31, 0.9, 0.5, 0.5]]);
        assert_eq!(expansion_threshold(0, 0, &t, &gate, 0.2), 1.0);
        assert!((expansion_threshold(0, 1, &t, &gate, 0.2) - 0.92).abs() < 1e-12);

        let ilc = IlcConfig::default();
        assert!((correction_threshold(0, 0, &reliable, &ilc) - 0.6996).abs() < 1e-12);
        assert!(IlcConfig {
            theta0: 0.7,
            beta: 0.4,
            max_rounds: 3
        }
        .validate()
        .is_err());
        assert!(IlcConfig {
            theta0: 0.6,
            beta: 0.4,
            max_rounds: 3
        }
        .validate()
        .is_ok());
    }

    fn prediction(probs: Vec<Vec<f64>>) -> Prediction {
        let labels = probs.iter().map(|r| crate::gnn::argmax(r.iter().copied())).collect();
        let n = probs.len();
        let c = probs[0].len();
        Prediction {
            probs: Array2::from_shape_vec((n, c), probs.concat()).unwrap(),
            labels,
        }
    }

    fn single_cluster(n: usize) -> ClusterModel {
        ClusterModel::from_assignment(vec![0; n], 1, Array2::zeros((n, 1)).view()).unwrap()
    }

    #[test]
    fn expansion_gate() {
        let cm = single_cluster(4);
        let t = TransitionTensor::identity(1, 2);
        let gate = GateConfig::default();
        let mut pool = LabelPool::default();
        pool.entries.insert(
            0,
            PoolEntry {
                label: 0,
                provenance: Provenance::Seed,
                round: 0,
            },
        );
        let pred = prediction(vec![
            vec![0.01, 0.99],
            vec![0.05, 0.95],
            vec![0.85, 0.15],
            vec![0.04, 0.96],
        ]);
        let added = expand_round(&mut pool, &pred, &cm, &t, &gate, 0.0, 1, 1);
        assert_eq!(added, 1);
        // the seed keeps its label; the cap takes the most confident
        assert_eq!(pool.label(0), Some(0));
        assert_eq!(pool.get(3).unwrap().provenance, Provenance::Expanded);
        assert!(!pool.contains(1));
        expand_round(&mut pool, &pred, &cm, &t, &gate, 0.0, 10, 2);
        assert_eq!(pool.label(1), Some(1));
        assert!(!pool.contains(2));

        let closed = tensor(vec![vec![0.25, 0.25]]);
        let mut fresh = LabelPool::default();
        assert_eq!(expand_round(&mut fresh, &pred, &cm, &closed, &gate, 0.5, 10, 1), 0);
    }

    #[test]
    fn correction_rule() {
        // star: centre 0 labeled 1, leaves 1..=4 labeled 0; node 5 isolated
        let g = Graph::new(6, vec![(0, 1), (0, 2), (0, 3), (0, 4)], Array2::zeros((6, 1)), 2).unwrap();
        let cm = single_cluster(6);
        let mut pool = LabelPool::default();
        for (v, y) in [(0, 1), (1, 0), (2, 0), (3, 0), (4, 1), (5, 1)] {
            pool.entries.insert(
                v,
                PoolEntry {
                    label: y,
                    provenance: Provenance::Seed,
                    round: 0,
                },
            );
        }
        let pred = vec![0, 0, 0, 0, 0, 0];
        let reliable = TransitionTensor::identity(1, 2);
        let ilc = IlcConfig::default();
        let changed = correct_round(&mut pool, &pred, &g, &cm, &reliable, &ilc, 1);
        // centre: 3/4 neighbors say 0 > 0.6996; leaf 4: its one neighbor says 1; node 5 has none
        assert_eq!(changed, 1);
        assert_eq!(pool.get(0).unwrap().provenance, Provenance::Corrected);
        assert_eq!(pool.label(4), Some(1));
        assert_eq!(pool.label(5), Some(1));
        assert_eq!(
            correct_round(&mut pool, &[0, 0, 0, 0, 1, 1], &g, &cm, &reliable, &ilc, 2),
            0
        );
    }

    #[test]
    fn evaluation() {
        let truth = Truth::dense(vec![0, 1, 2, 3, 0, 1, 2, 3], 4).unwrap();
        let exclude = BTreeSet::from([0, 1]);
        assert_eq!(evaluate(&[0, 1, 2, 3, 0, 1, 2, 3], &truth, &exclude).unwrap(), 1.0);
        assert_eq!(evaluate(&[0; 8], &truth, &BTreeSet::new()).unwrap(), 0.25);
        let partial = Truth::new(vec![Some(0), None], 2).unwrap();
        assert!(evaluate(&[0, 0], &partial, &BTreeSet::new()).is_err());
        assert!(evaluate(&[0, 0], &partial, &BTreeSet::from([1])).is_ok());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("fast".parse::<Mode>().is_err());
    }

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            budget: Some(40),
            gnn: TrainConfig {
                epochs: 60,
                ..TrainConfig::default()
            },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn noiseless_pure_clusters_end_to_end() {
        let spec = SynthSpec {
            n: 300,
            num_classes: 3,
            clusters: 3,
            p_in: 0.06,
            p_out: 0.003,
            mixture: Some(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]),
            noise: Some(PlantedNoiseModel::identity(3)),
            seed: 2,
            ..SynthSpec::default()
        };
        let inst = generate(&spec).unwrap();
        let sim = SimulatedAnnotator::new(
            inst.truth().clone(),
            inst.planted.assignment.clone(),
            inst.noise.clone(),
        )
        .unwrap();
        let cfg = PipelineConfig {
            k_mult: 1.0,
            ..small_config()
        };
        let a = run_cane(inst.graph(), None, &cfg, &sim, Some(inst.truth()), 3).unwrap();
        assert!(a.report.accuracy.unwrap() >= 0.9, "{:?}", a.report);
        assert_eq!(a.report.labels_corrected, 0);
        for &s in &a.plan.seeds {
            assert!(a.pool.contains(s));
        }
        let b = run_cane(inst.graph(), None, &cfg, &sim, Some(inst.truth()), 3).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
        assert!(run_cane(
            inst.graph(),
            None,
            &PipelineConfig {
                mode: Mode::OracleTc,
                ..cfg
            },
            &sim,
            None,
            3
        )
        .is_err());
    }

    struct Silent;

    impl Annotator for Silent {
        fn annotate(&self, nodes: &[usize], _probe: bool) -> Result<crate::annotate::AnnotationBatch> {
            let mut batch = crate::annotate::AnnotationBatch::default();
            batch.failed.extend_from_slice(nodes);
            if nodes.len() > 1000 {
                batch.annotations.insert_votes(
                    0,
                    vec![Vote {
                        label: 0,
                        confidence: 1.0,
                    }],
                    true,
                    Source::Llm,
                )?;
            }
            Ok(batch)
        }
    }

    #[test]
    fn stage_failures_are_named() {
        let inst = generate(&SynthSpec {
            n: 100,
            ..SynthSpec::with_seed(1)
        })
        .unwrap();
        let err = run_cane(inst.graph(), None, &small_config(), &Silent, None, 0).unwrap_err();
        assert!(matches!(err, CaneError::Stage { stage: "estimate", .. }), "{err}");
        let bad = PipelineConfig {
            rho: 1.5,
            ..small_config()
        };
        let err = run_cane(inst.graph(), None, &bad, &Silent, None, 0).unwrap_err();
        assert!(matches!(err, CaneError::Stage { stage: "config", .. }));
    }
}
