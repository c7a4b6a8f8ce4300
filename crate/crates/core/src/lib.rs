//! Cluster-conditional annotation-noise estimation and label refinement for
//! node classification with noisy LLM-provided labels.
//!
//! The pipeline clusters nodes in feature space, spends a small probe of the
//! annotation budget to estimate how reliable the annotator is in each
//! (cluster, class) region, and uses that estimate to gate pseudo-label
//! expansion and to set per-node thresholds for iterative label correction.

// `!(x >= 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod annotate;
pub mod cluster;
pub mod diagnose;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod noise;
pub mod pipeline;
pub mod rng;
pub mod seeds;
pub mod stats;
pub mod synth;

pub use annotate::{
    AnnotationBatch, AnnotationSet, Annotator, NoiseKind, PlantedNoiseModel, RecordedAnnotator, SimulatedAnnotator,
};
pub use cluster::{ClusterModel, PurityReport};
pub use diagnose::DiagnosticReport;
pub use error::{CaneError, Result};
pub use gnn::{GcnModel, TrainConfig};
pub use graph::{Dataset, Graph, NormalizedAdjacency, Truth};
pub use noise::{EstimatorConfig, TransitionTensor};
pub use pipeline::{
    prepare, run_cane, GateConfig, IlcConfig, LabelPool, Mode, PipelineConfig, Prepared, RunOutcome, RunReport,
};
pub use seeds::SeedPlan;
pub use synth::{SynthInstance, SynthSpec};
