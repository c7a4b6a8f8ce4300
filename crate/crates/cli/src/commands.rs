//! Bodies of the subcommands. Each one reads its inputs, calls into
//! `cane_core` and writes JSON artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cane_core::annotate::llm::{HttpTransport, LlmAnnotator};
use cane_core::cluster::choose_embedding;
use cane_core::diagnose::{diagnose, null_control};
use cane_core::gnn::{predict, train};
use cane_core::graph::{load_embeddings, load_graph, load_labels};
use cane_core::noise::estimate_tc;
use cane_core::synth::{edge_homophily, generate, load_planted, save_instance};
use cane_core::{
    prepare, run_cane, AnnotationSet, Annotator, ClusterModel, Dataset, DiagnosticReport, NormalizedAdjacency,
    RecordedAnnotator, RunOutcome, RunReport, SimulatedAnnotator, SynthSpec, TrainConfig, TransitionTensor,
};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{apply_override, AnnotatorKind, RunConfig};
use crate::{CliError, CliResult};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

/// Fails with a config error when a named input does not exist.
pub fn require(path: Option<&Path>, what: &str) -> CliResult<PathBuf> {
    let path = path.ok_or_else(|| CliError::Config(format!("no {what} path given")))?;
    if !path.exists() {
        return Err(CliError::Config(format!(
            "{what} path {} does not exist",
            path.display()
        )));
    }
    Ok(path.to_path_buf())
}

fn check_optional(path: Option<&Path>, what: &str) -> CliResult<()> {
    path.map_or(Ok(()), |p| require(Some(p), what).map(drop))
}

/// The graph, its optional labels, and the external embedding if one is
/// configured.
pub struct Inputs {
    pub dataset: Dataset,
    pub embedding: Option<Array2<f64>>,
}

pub fn load_inputs(cfg: &RunConfig) -> CliResult<Inputs> {
    let dir = require(cfg.paths.graph.as_deref(), "graph")?;
    check_optional(cfg.paths.embeddings.as_deref(), "embeddings")?;
    let dataset = load_graph(&dir)?;
    let embedding = match &cfg.paths.embeddings {
        Some(p) => Some(load_embeddings(p, dataset.graph.num_nodes())?),
        None => None,
    };
    Ok(Inputs { dataset, embedding })
}

fn read_texts(path: &Path) -> CliResult<BTreeMap<usize, String>> {
    let mut texts = BTreeMap::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (node, text) = line
            .split_once('\t')
            .ok_or_else(|| CliError::Data(format!("{}:{}: expected node<TAB>text", path.display(), i + 1)))?;
        let node = node
            .trim()
            .parse()
            .map_err(|_| CliError::Data(format!("{}:{}: bad node id `{node}`", path.display(), i + 1)))?;
        texts.insert(node, text.to_string());
    }
    Ok(texts)
}

pub fn build_annotator(cfg: &RunConfig, inputs: &Inputs) -> CliResult<Box<dyn Annotator + Sync>> {
    let g = &inputs.dataset.graph;
    match cfg.annotator {
        AnnotatorKind::Simulated => {
            let planted = match &cfg.paths.planted {
                Some(p) => require(Some(p), "planted")?,
                None => require(
                    cfg.paths.graph.as_ref().map(|d| d.join("planted.json")).as_deref(),
                    "planted",
                )?,
            };
            let truth = inputs.dataset.truth.clone().ok_or_else(|| {
                CliError::Data("the simulated annotator needs labels.tsv in the graph directory".into())
            })?;
            let planted = load_planted(planted)?;
            if planted.assignment.len() != g.num_nodes() {
                return Err(CliError::Data("planted.json does not match the graph size".into()));
            }
            Ok(Box::new(SimulatedAnnotator::new(
                truth,
                planted.assignment,
                planted.noise,
            )?))
        }
        AnnotatorKind::File => {
            let path = require(cfg.paths.annotations.as_deref(), "annotations")?;
            Ok(Box::new(RecordedAnnotator::new(AnnotationSet::load(
                path,
                g.num_classes(),
            )?)))
        }
        AnnotatorKind::Llm => {
            let texts = read_texts(&require(cfg.paths.texts.as_deref(), "texts")?)?;
            let classes: Vec<String> = read_text(&require(cfg.paths.classes.as_deref(), "classes")?)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            if classes.len() != g.num_classes() {
                return Err(CliError::Data(format!(
                    "{} class names for a graph with {} classes",
                    classes.len(),
                    g.num_classes()
                )));
            }
            let transport = HttpTransport::new(&cfg.annotate);
            Ok(Box::new(LlmAnnotator::new(
                cfg.annotate.clone(),
                transport,
                texts,
                classes,
            )))
        }
    }
}

pub fn run_once(cfg: &RunConfig, inputs: &Inputs, annotator: &dyn Annotator, seed: u64) -> CliResult<RunOutcome> {
    Ok(run_cane(
        &inputs.dataset.graph,
        inputs.embedding.as_ref(),
        &cfg.pipeline(),
        annotator,
        inputs.dataset.truth.as_ref(),
        seed,
    )?)
}

fn predictions_tsv(labels: &[usize]) -> String {
    labels.iter().enumerate().map(|(v, l)| format!("{v}\t{l}\n")).collect()
}

/// `report.json` plus the intermediate artifacts of one run.
pub fn write_run(dir: &Path, out: &RunOutcome) -> CliResult<()> {
    write_json(&dir.join("report.json"), &out.report)?;
    write_json(&dir.join("clusters.json"), &out.clusters)?;
    write_json(&dir.join("seeds.json"), &out.plan)?;
    write_json(&dir.join("tc.json"), &out.tc)?;
    write_json(&dir.join("pool.json"), &out.pool)?;
    write_text(&dir.join("annotations.jsonl"), &out.annotations.to_jsonl())?;
    write_text(&dir.join("predictions.tsv"), &predictions_tsv(&out.prediction.labels))
}

/// Runs `seeds` one after another. A single seed writes straight into
/// `out`; several write `out/seed-<s>/` and a `runs.json` summary.
pub fn run(cfg: &RunConfig, seeds: &[u64], out: &Path) -> CliResult<Vec<RunReport>> {
    let inputs = load_inputs(cfg)?;
    let annotator = build_annotator(cfg, &inputs)?;
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let outcome = run_once(cfg, &inputs, annotator.as_ref(), seed)?;
        let dir = if seeds.len() == 1 {
            out.to_path_buf()
        } else {
            out.join(format!("seed-{seed}"))
        };
        write_run(&dir, &outcome)?;
        reports.push(outcome.report);
    }
    if seeds.len() > 1 {
        write_json(&out.join("runs.json"), &reports)?;
    }
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    Ok(reports)
}

/// Synthetic spec from an optional TOML file plus `key=value` overrides.
pub fn load_spec(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> CliResult<SynthSpec> {
    let text = match path {
        Some(p) => read_text(&require(Some(p), "spec")?)?,
        None => String::new(),
    };
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Config(format!("invalid spec: {e}")))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut spec: SynthSpec = toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::Config(format!("invalid spec: {e}")))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(spec)
}

pub struct GenSummary {
    pub nodes: usize,
    pub edges: usize,
    pub homophily: f64,
}

pub fn gen(spec: &SynthSpec, out: &Path) -> CliResult<GenSummary> {
    let inst = generate(spec)?;
    save_instance(&inst, out)?;
    write_text(&out.join("spec.toml"), &toml::to_string(spec).expect("spec serializes"))?;
    Ok(GenSummary {
        nodes: inst.graph().num_nodes(),
        edges: inst.graph().edges().len(),
        homophily: edge_homophily(inst.graph(), inst.truth()),
    })
}

/// Embeds, clusters, selects seeds and annotates them; writes
/// `clusters.json`, `seeds.json` and `annotations.jsonl`.
pub fn annotate(cfg: &RunConfig, out: &Path) -> CliResult<(usize, Vec<usize>)> {
    let inputs = load_inputs(cfg)?;
    let annotator = build_annotator(cfg, &inputs)?;
    let prep = prepare(
        &inputs.dataset.graph,
        inputs.embedding.as_ref(),
        &cfg.pipeline(),
        cfg.seed,
    )?;
    let probe = annotator.annotate(prep.plan.probe(), true)?;
    let rest = annotator.annotate(prep.plan.rest(), false)?;
    let mut ann = probe.annotations;
    ann.merge(rest.annotations);
    let mut failed = probe.failed;
    failed.extend(rest.failed);
    write_json(&out.join("clusters.json"), &prep.clusters)?;
    write_json(&out.join("seeds.json"), &prep.plan)?;
    write_text(&out.join("annotations.jsonl"), &ann.to_jsonl())?;
    Ok((ann.len(), failed))
}

/// Estimates the transition tensor from the probe-flagged annotations.
pub fn estimate(cfg: &RunConfig, annotations: &Path, clusters: &Path) -> CliResult<TransitionTensor> {
    let inputs = load_inputs(cfg)?;
    let g = &inputs.dataset.graph;
    let ann = AnnotationSet::load(require(Some(annotations), "annotations")?, g.num_classes())?;
    let cm: ClusterModel = read_json(&require(Some(clusters), "clusters")?)?;
    if cm.assignment.len() != g.num_nodes() {
        return Err(CliError::Data(
            "cluster assignment does not match the graph size".into(),
        ));
    }
    let probe = ann.restrict(
        ann.iter()
            .filter(|(_, a)| a.is_probe)
            .map(|(v, _)| v)
            .collect::<Vec<_>>(),
    );
    let emb = choose_embedding(g, inputs.embedding.as_ref(), cfg.hops)?;
    Ok(estimate_tc(&probe, &cm, g, emb.view(), &cfg.estimator)?)
}

pub struct TrainSummary {
    pub labeled: usize,
    pub final_loss: f64,
    /// Accuracy on unlabeled nodes when the graph has labels.
    pub accuracy: Option<f64>,
}

/// Trains on every annotation and writes `model.json` and
/// `predictions.tsv`.
pub fn train_cmd(cfg: &RunConfig, gnn: &TrainConfig, annotations: &Path, out: &Path) -> CliResult<TrainSummary> {
    gnn.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let inputs = load_inputs(cfg)?;
    let g = &inputs.dataset.graph;
    let ann = AnnotationSet::load(require(Some(annotations), "annotations")?, g.num_classes())?;
    let labels: Vec<(usize, usize)> = ann.iter().map(|(v, a)| (v, a.label)).collect();
    let adj = NormalizedAdjacency::from_graph(g);
    let trained = train(g, &adj, &labels, gnn, cfg.seed)?;
    let pred = predict(&trained.model, &adj, &g.features_f64())?;
    write_text(&out.join("predictions.tsv"), &predictions_tsv(&pred.labels))?;
    trained.model.save(out.join("model.json"))?;
    let accuracy = inputs.dataset.truth.as_ref().map(|t| {
        let eval: Vec<usize> = (0..g.num_nodes())
            .filter(|&v| !ann.contains(v) && t.get(v).is_some())
            .collect();
        let hits = eval.iter().filter(|&&v| t.get(v) == Some(pred.labels[v])).count();
        hits as f64 / eval.len().max(1) as f64
    });
    Ok(TrainSummary {
        labeled: labels.len(),
        final_loss: *trained.losses.last().expect("at least one epoch"),
        accuracy,
    })
}

/// Largest class id in a `node<TAB>class` file, plus one.
fn infer_num_classes(path: &Path) -> CliResult<usize> {
    let mut max = None;
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let class: usize = line
            .split('\t')
            .nth(1)
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| CliError::Data(format!("{}:{}: expected node<TAB>class", path.display(), i + 1)))?;
        max = max.max(Some(class));
    }
    max.map(|m| m + 1)
        .ok_or_else(|| CliError::Data(format!("{} holds no labels", path.display())))
}

pub struct DiagnoseArgs<'a> {
    pub annotations: Option<&'a Path>,
    pub labels: &'a Path,
    pub clusters: &'a Path,
    pub num_classes: Option<usize>,
    pub min_cell: usize,
    /// Diagonal of a class-conditional annotator that replaces the
    /// annotations file.
    pub null_control: Option<f64>,
    pub seed: u64,
}

pub fn diagnose_cmd(a: &DiagnoseArgs) -> CliResult<DiagnosticReport> {
    let labels = require(Some(a.labels), "labels")?;
    let cm: ClusterModel = read_json(&require(Some(a.clusters), "clusters")?)?;
    let c = match a.num_classes {
        Some(c) => c,
        None => infer_num_classes(&labels)?,
    };
    let truth = load_labels(&labels, cm.assignment.len(), c)?;
    if let Some(diag) = a.null_control {
        return Ok(null_control(&truth, &cm, diag, a.seed, a.min_cell)?);
    }
    let path = require(a.annotations, "annotations")?;
    let ann = AnnotationSet::load(path, c)?;
    Ok(diagnose(&ann, &truth, &cm, a.min_cell))
}
