//! Inputs shared by the benchmarks.

use strucmp_core::dissim::{euclidean_dissimilarity, DissimilarityMatrix, FeatureTable};
use strucmp_core::simulation::{simulate, SimulationConfig};

/// Reference and Scenario B tables of a simulation with `n` subjects.
pub fn tables(n: usize, l: usize, seed: u64) -> (FeatureTable, FeatureTable) {
    let sim = simulate(&SimulationConfig { n, l, seed, ..SimulationConfig::default() }).expect("simulate");
    (sim.reference, sim.scenario_b)
}

/// Euclidean dissimilarities of [`tables`].
pub fn matrices(n: usize, l: usize, seed: u64) -> (DissimilarityMatrix, DissimilarityMatrix) {
    let (a, b) = tables(n, l, seed);
    (euclidean_dissimilarity(&a).expect("y1"), euclidean_dissimilarity(&b).expect("y2"))
}
