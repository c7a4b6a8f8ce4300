//! Two-layer GCN with cross-entropy plus early-learning regularization,
//! hand-derived gradients and an AdamW loop. Everything runs in f64.

use std::path::Path;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CaneError, Result};
use crate::graph::{Graph, NormalizedAdjacency};
use crate::rng::{derive_seed, stage_rng};

/// Inner products `⟨p, t⟩` are clamped here before `log(1 − ·)`.
pub const ELR_CLAMP: f64 = 1.0 - 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub hidden: usize,
    pub elr_lambda: f64,
    pub elr_beta: f64,
    pub edge_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            lr: 3e-3,
            weight_decay: 5e-4,
            dropout: 0.7,
            hidden: 64,
            elr_lambda: 3.0,
            elr_beta: 0.9,
            edge_dropout: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if (0.0..1.0).contains(&x) {
                Ok(())
            } else {
                Err(CaneError::arg(format!("{name} = {x} outside [0, 1)")))
            }
        };
        if self.epochs == 0 || self.hidden == 0 {
            return Err(CaneError::arg("epochs and hidden must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(CaneError::arg("lr and weight_decay must be finite and non-negative"));
        }
        if !(self.elr_lambda >= 0.0 && self.elr_lambda.is_finite()) {
            return Err(CaneError::arg(format!(
                "elr_lambda = {} must be finite and non-negative",
                self.elr_lambda
            )));
        }
        unit("dropout", self.dropout)?;
        unit("edge_dropout", self.edge_dropout)?;
        unit("elr_beta", self.elr_beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct GcnModel {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    d: usize,
    h: usize,
    c: usize,
    seed: u64,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl From<GcnModel> for ModelFile {
    fn from(m: GcnModel) -> Self {
        let (d, h, c) = m.dims();
        ModelFile {
            d,
            h,
            c,
            seed: m.seed,
            w1: m.w1.iter().copied().collect(),
            b1: m.b1.to_vec(),
            w2: m.w2.iter().copied().collect(),
            b2: m.b2.to_vec(),
        }
    }
}

impl TryFrom<ModelFile> for GcnModel {
    type Error = String;

    fn try_from(f: ModelFile) -> std::result::Result<Self, String> {
        let w1 = Array2::from_shape_vec((f.d, f.h), f.w1).map_err(|e| format!("w1: {e}"))?;
        let w2 = Array2::from_shape_vec((f.h, f.c), f.w2).map_err(|e| format!("w2: {e}"))?;
        if f.b1.len() != f.h || f.b2.len() != f.c {
            return Err("bias length does not match the declared shape".into());
        }
        let m = GcnModel {
            w1,
            b1: Array1::from(f.b1),
            w2,
            b2: Array1::from(f.b2),
            seed: f.seed,
        };
        if !m.is_finite() {
            return Err("non-finite parameter".into());
        }
        Ok(m)
    }
}

impl GcnModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new(d: usize, h: usize, c: usize, seed: u64) -> Self {
        let mut rng = stage_rng(derive_seed(seed, "gcn-init"));
        let mut glorot = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..a))
        };
        let w1 = glorot(d, h);
        let w2 = glorot(h, c);
        GcnModel {
            w1,
            b1: Array1::zeros(h),
            w2,
            b2: Array1::zeros(c),
            seed,
        }
    }

    pub fn zeros(d: usize, h: usize, c: usize) -> Self {
        GcnModel {
            w1: Array2::zeros((d, h)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((h, c)),
            b2: Array1::zeros(c),
            seed: 0,
        }
    }

    /// `(d, h, C)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w1.nrows(), self.w1.ncols(), self.w2.ncols())
    }

    pub fn is_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .all(|x| x.is_finite())
    }

    fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        std::fs::write(path, text).map_err(|e| CaneError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CaneError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CaneError::format(path.display().to_string(), e.line(), e.to_string()))
    }
}

/// Inverted-dropout scale factors (0 or `1/(1−p)`) for both layer inputs.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub input: Array2<f64>,
    pub hidden: Array2<f64>,
}

impl DropoutMasks {
    pub fn sample(n: usize, d: usize, h: usize, p: f64, rng: &mut impl Rng) -> Self {
        let keep = 1.0 / (1.0 - p);
        let mut draw = |rows, cols| {
            Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < p { 0.0 } else { keep })
        };
        let input = draw(n, d);
        let hidden = draw(n, h);
        DropoutMasks { input, hidden }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub x_in: Array2<f64>,
    pub z1: Array2<f64>,
    pub h_in: Array2<f64>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|z| (z - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

pub fn forward(
    m: &GcnModel,
    adj: &NormalizedAdjacency,
    x: &Array2<f64>,
    masks: Option<&DropoutMasks>,
) -> Result<ForwardCache> {
    let (d, h, _) = m.dims();
    let n = adj.dim();
    if x.dim() != (n, d) || m.b1.len() != h || m.w2.nrows() != h || m.b2.len() != m.w2.ncols() {
        return Err(CaneError::arg(format!(
            "shape mismatch: adjacency {n}, features {:?}, model {:?}",
            x.dim(),
            m.dims()
        )));
    }
    if let Some(mk) = masks {
        if mk.input.dim() != (n, d) || mk.hidden.dim() != (n, h) {
            return Err(CaneError::arg("dropout mask shape mismatch"));
        }
    }
    let x_in = match masks {
        Some(mk) => x * &mk.input,
        None => x.clone(),
    };
    let z1 = adj.spmm(&x_in.dot(&m.w1)) + &m.b1;
    let relu = z1.mapv(|z| z.max(0.0));
    let h_in = match masks {
        Some(mk) => relu * &mk.hidden,
        None => relu,
    };
    let logits = adj.spmm(&h_in.dot(&m.w2)) + &m.b2;
    let probs = softmax_rows(&logits);
    Ok(ForwardCache {
        x_in,
        z1,
        h_in,
        logits,
        probs,
    })
}

/// EMA targets for the early-learning term, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ElrState {
    pub targets: Array2<f64>,
}

impl ElrState {
    pub fn uniform(n: usize, c: usize) -> Self {
        ElrState {
            targets: Array2::from_elem((n, c), 1.0 / c as f64),
        }
    }

    /// `t ← β·t + (1−β)·p̂` on the labeled rows.
    pub fn update(&mut self, probs: &Array2<f64>, labels: &[(usize, usize)], beta: f64) {
        for &(v, _) in labels {
            let mut t = self.targets.row_mut(v);
            t *= beta;
            t.scaled_add(1.0 - beta, &probs.row(v));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Gradients {
    fn slices(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }
}

fn check_labels(labels: &[(usize, usize)], n: usize, c: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(CaneError::arg("no labeled nodes"));
    }
    for &(v, y) in labels {
        if v >= n || y >= c {
            return Err(CaneError::arg(format!(
                "label ({v}, {y}) out of range for n = {n}, C = {c}"
            )));
        }
    }
    Ok(())
}

/// Loss on the labeled rows and its gradient with respect to the logits.
fn loss_and_logit_grad(
    probs: &Array2<f64>,
    labels: &[(usize, usize)],
    elr: &ElrState,
    lambda: f64,
) -> (f64, Array2<f64>) {
    let m = labels.len() as f64;
    let mut g = Array2::zeros(probs.dim());
    let mut loss = 0.0;
    for &(v, y) in labels {
        let p = probs.row(v);
        let t = elr.targets.row(v);
        loss -= p[y].max(f64::MIN_POSITIVE).ln() / m;
        let mut gv = g.row_mut(v);
        gv.scaled_add(1.0 / m, &p);
        gv[y] -= 1.0 / m;
        if lambda > 0.0 {
            let raw = p.dot(&t);
            let s = raw.min(ELR_CLAMP);
            loss += lambda * (1.0 - s).ln() / m;
            if raw < ELR_CLAMP {
                let scale = -lambda / (m * (1.0 - s));
                Zip::from(&mut gv)
                    .and(&p)
                    .and(&t)
                    .for_each(|g, &pk, &tk| *g += scale * pk * (tk - s));
            }
        }
    }
    (loss, g)
}

/// Mean cross-entropy plus `λ · mean log(1 − ⟨p̂, t⟩)` over `labels`, and
/// its analytic gradient. Weight decay lives in the optimizer.
pub fn loss_and_grad(
    m: &GcnModel,
    adj: &NormalizedAdjacency,
    x: &Array2<f64>,
    labels: &[(usize, usize)],
    elr: &ElrState,
    lambda: f64,
    masks: Option<&DropoutMasks>,
) -> Result<(f64, Gradients, ForwardCache)> {
    let (_, _, c) = m.dims();
    check_labels(labels, adj.dim(), c)?;
    if elr.targets.dim() != (adj.dim(), c) {
        return Err(CaneError::arg("ELR target shape mismatch"));
    }
    let cache = forward(m, adj, x, masks)?;
    let (loss, g2) = loss_and_logit_grad(&cache.probs, labels, elr, lambda);

    let ag2 = adj.spmm(&g2);
    let w2 = cache.h_in.t().dot(&ag2);
    let b2 = g2.sum_axis(Axis(0));
    let mut dz1 = ag2.dot(&m.w2.t());
    if let Some(mk) = masks {
        dz1 *= &mk.hidden;
    }
    Zip::from(&mut dz1).and(&cache.z1).for_each(|g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
    let ag1 = adj.spmm(&dz1);
    let w1 = cache.x_in.t().dot(&ag1);
    let b1 = dz1.sum_axis(Axis(0));
    Ok((loss, Gradients { w1, b1, w2, b2 }, cache))
}

struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl AdamW {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &mut GcnModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.params_mut().iter().map(|p| vec![0.0; p.len()]).collect();
        AdamW {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn step(&mut self, model: &mut GcnModel, grads: &Gradients, lr: f64, weight_decay: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        for (i, (p, g)) in model.params_mut().into_iter().zip(grads.slices()).enumerate() {
            // biases (slots 1 and 3) are not decayed
            let decay = if i % 2 == 0 { lr * weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = Self::B1 * m[j] + (1.0 - Self::B1) * g[j];
                v[j] = Self::B2 * v[j] + (1.0 - Self::B2) * g[j] * g[j];
                p[j] -= decay * p[j];
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GcnModel,
    pub losses: Vec<f64>,
}

fn drop_edges(g: &Graph, p: f64, rng: &mut impl Rng) -> NormalizedAdjacency {
    let kept: Vec<(usize, usize)> = g.edges().iter().copied().filter(|_| rng.random::<f64>() >= p).collect();
    NormalizedAdjacency::from_edges(g.num_nodes(), kept.iter().copied())
}

/// Full-batch training from a fresh initialization. Returns the final-epoch
/// model together with the per-epoch training loss.
pub fn train(
    g: &Graph,
    adj: &NormalizedAdjacency,
    labels: &[(usize, usize)],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (n, d, c) = (g.num_nodes(), g.feature_dim(), g.num_classes());
    check_labels(labels, n, c)?;
    if adj.dim() != n {
        return Err(CaneError::arg("adjacency does not match the graph"));
    }
    let x = g.features_f64();
    let mut model = GcnModel::new(d, cfg.hidden, c, seed);
    let mut opt = AdamW::new(&mut model);
    let mut elr = ElrState::uniform(n, c);
    let mut rng = stage_rng(derive_seed(seed, "gcn-dropout"));
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let masks = (cfg.dropout > 0.0).then(|| DropoutMasks::sample(n, d, cfg.hidden, cfg.dropout, &mut rng));
        let dropped = (cfg.edge_dropout > 0.0).then(|| drop_edges(g, cfg.edge_dropout, &mut rng));
        let a = dropped.as_ref().unwrap_or(adj);
        let (loss, grads, cache) = loss_and_grad(&model, a, &x, labels, &elr, cfg.elr_lambda, masks.as_ref())?;
        if !loss.is_finite() {
            return Err(CaneError::TrainingDiverged { epoch, loss });
        }
        opt.step(&mut model, &grads, cfg.lr, cfg.weight_decay);
        if !model.is_finite() {
            return Err(CaneError::TrainingDiverged { epoch, loss });
        }
        elr.update(&cache.probs, labels, cfg.elr_beta);
        losses.push(loss);
    }
    Ok(TrainOutcome { model, losses })
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub probs: Array2<f64>,
    pub labels: Vec<usize>,
}

/// Index of the row maximum; ties go to the lowest index.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in row.into_iter().enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

pub fn predict(m: &GcnModel, adj: &NormalizedAdjacency, x: &Array2<f64>) -> Result<Prediction> {
    let cache = forward(m, adj, x, None)?;
    let labels = cache
        .probs
        .rows()
        .into_iter()
        .map(|r| argmax(r.iter().copied()))
        .collect();
    Ok(Prediction {
        probs: cache.probs,
        labels,
    })
}
