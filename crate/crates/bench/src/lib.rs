//! Shared fixtures for the benchmarks.

use cane_core::cluster::{choose_embedding, cluster_count, kmeans};
use cane_core::seeds::select_seeds;
use cane_core::synth::generate;
use cane_core::{AnnotationSet, Annotator, ClusterModel, SimulatedAnnotator, SynthInstance, SynthSpec};
use ndarray::Array2;

pub struct Fixture {
    pub inst: SynthInstance,
    pub embedding: Array2<f64>,
    pub clusters: ClusterModel,
    /// Probe annotations of the default seed plan.
    pub probe: AnnotationSet,
    /// Every seed with its annotated label, as training pairs.
    pub labels: Vec<(usize, usize)>,
}

/// Default planted instance with `n` nodes, clustered and annotated the way
/// the pipeline does it.
pub fn fixture(n: usize) -> Fixture {
    let inst = generate(&SynthSpec {
        n,
        ..SynthSpec::with_seed(1)
    })
    .expect("valid spec");
    let g = inst.graph();
    let embedding = choose_embedding(g, None, 2).expect("embedding");
    let clusters = kmeans(embedding.view(), cluster_count(g.num_classes(), 2.0), 1).expect("kmeans");
    let plan = select_seeds(embedding.view(), &clusters, 50 * g.num_classes(), 0.4, 10).expect("seeds");
    let sim = SimulatedAnnotator::new(
        inst.truth().clone(),
        inst.planted.assignment.clone(),
        inst.noise.clone(),
    )
    .expect("annotator");
    let probe = sim.annotate(plan.probe(), true).expect("simulated").annotations;
    let mut all = probe.clone();
    all.merge(sim.annotate(plan.rest(), false).expect("simulated").annotations);
    let labels = all.iter().map(|(v, a)| (v, a.label)).collect();
    Fixture {
        inst,
        embedding,
        clusters,
        probe,
        labels,
    }
}
