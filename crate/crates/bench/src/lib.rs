//! Fixtures shared by the criterion benches.

use enhope::embedding::{init_high_order, Embedding, HighOrderDims};
use enhope::exemplars::{build_exemplars, ExemplarConfig, ExemplarMode, ExemplarSet};
use enhope::synthetic::{blobs, BlobSpec};
use enhope::Dataset;

/// MNIST-shaped synthetic data: 10 classes in 784 dimensions.
pub fn digits_like(points: usize, seed: u64) -> Dataset {
    blobs(&BlobSpec {
        points,
        classes: 10,
        dim: 784,
        informative: 20,
        separation: 6.0,
        noise: 1.0,
        seed,
    })
    .expect("valid blob spec")
}

pub fn high_order(input: usize, factors: usize, hidden: usize) -> Embedding {
    init_high_order(
        HighOrderDims {
            input,
            output: 2,
            factors,
            hidden,
        },
        2,
        0,
    )
    .expect("positive dimensions")
}

pub fn kmeans_exemplars(ds: &Dataset, z: usize) -> ExemplarSet {
    build_exemplars(ds, &ExemplarConfig::new(z, ExemplarMode::KMeans, 0)).expect("enough points per class")
}
