//! Run configuration: a TOML document with one section per component
//! (`[gnn]`, `[gate]`, `[ilc]`, `[estimator]`, `[annotate]`, `[paths]`) and
//! pipeline knobs at the top level. `--set section.key=value` overrides any
//! entry before the document is validated.

use std::path::{Path, PathBuf};

use cane_core::annotate::llm::LlmConfig;
use cane_core::{EstimatorConfig, GateConfig, IlcConfig, Mode, PipelineConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotatorKind {
    /// Planted noise model applied to ground truth (`planted.json`).
    Simulated,
    /// Chat-completions endpoint.
    Llm,
    /// Replay of an existing annotations file.
    File,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub graph: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    /// Defaults to `<graph>/planted.json`.
    pub planted: Option<PathBuf>,
    /// `node<TAB>text` lines for the LLM annotator.
    pub texts: Option<PathBuf>,
    /// One class name per line, in class-id order.
    pub classes: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    pub annotator: AnnotatorKind,
    pub k_mult: f64,
    pub kmeans_restarts: usize,
    pub hops: usize,
    pub budget: Option<usize>,
    pub budget_frac: Option<f64>,
    pub rho: f64,
    pub knn: usize,
    pub paths: PathsConfig,
    pub estimator: EstimatorConfig,
    pub gnn: TrainConfig,
    pub gate: GateConfig,
    pub ilc: IlcConfig,
    pub annotate: LlmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        RunConfig {
            seed: 0,
            mode: p.mode,
            annotator: AnnotatorKind::Simulated,
            k_mult: p.k_mult,
            kmeans_restarts: p.kmeans_restarts,
            hops: p.hops,
            budget: p.budget,
            budget_frac: p.budget_frac,
            rho: p.rho,
            knn: p.knn,
            paths: PathsConfig::default(),
            estimator: p.estimator,
            gnn: p.gnn,
            gate: p.gate,
            ilc: p.ilc,
            annotate: LlmConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            mode: self.mode,
            k_mult: self.k_mult,
            kmeans_restarts: self.kmeans_restarts,
            hops: self.hops,
            budget: self.budget,
            budget_frac: self.budget_frac,
            rho: self.rho,
            knn: self.knn,
            estimator: self.estimator,
            gnn: self.gnn.clone(),
            gate: self.gate.clone(),
            ilc: self.ilc.clone(),
        }
    }

    /// Parses `text`, applies `overrides` and deserializes.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(format!("invalid config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("invalid config: {e}")))?;
        cfg.ilc.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Loads `path` if given, otherwise starts from defaults. Relative paths
    /// inside the file resolve against the file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Self::from_toml("", overrides);
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        if let Some(base) = path.parent() {
            cfg.paths.resolve_against(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

impl PathsConfig {
    fn resolve_against(&mut self, base: &Path) {
        for p in [
            &mut self.graph,
            &mut self.embeddings,
            &mut self.annotations,
            &mut self.planted,
            &mut self.texts,
            &mut self.classes,
            &mut self.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// `a.b.c=value`; the value is read as a TOML literal and falls back to a
/// bare string.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("nonempty");
    let mut node = table;
    for p in parents {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
