//! Seeded synthetic datasets: Gaussian class blobs, optionally embedded in
//! a higher-dimensional space padded with noise.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub points: usize,
    pub classes: usize,
    pub dim: usize,
    /// Leading dimensions that carry the class centers; must be at least
    /// `classes`.
    pub informative: usize,
    /// Distance between any two class centers, in units of the
    /// within-class standard deviation (1).
    pub separation: f64,
    /// Standard deviation of the non-informative dimensions.
    pub noise: f64,
    pub seed: u64,
}

impl BlobSpec {
    /// Unit-variance blobs with no padding dimensions.
    pub fn simple(points: usize, classes: usize, dim: usize, separation: f64, seed: u64) -> Self {
        Self {
            points,
            classes,
            dim,
            informative: dim,
            separation,
            noise: 0.0,
            seed,
        }
    }
}

/// Class `c` is centered at `separation / √2 · e_c`, so all centers are
/// pairwise `separation` apart. Labels cycle `0, 1, …, classes-1`.
pub fn blobs(spec: &BlobSpec) -> Result<Dataset> {
    if spec.classes < 2 || spec.informative < spec.classes || spec.informative > spec.dim || spec.points < spec.classes {
        return Err(Error::InvalidArgument(format!("inconsistent blob spec: {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let offset = spec.separation / std::f64::consts::SQRT_2;
    let labels: Vec<usize> = (0..spec.points).map(|i| i % spec.classes).collect();
    let mut x = Array2::zeros((spec.points, spec.dim));
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v = if j < spec.informative { g } else { spec.noise * g };
        }
        row[labels[i]] += offset;
    }
    Dataset::new(x, labels, spec.classes)
}

/// Unit-variance isotropic blobs whose centers point in random directions,
/// `separation / √2` from the origin. In high dimensions the directions are
/// nearly orthogonal, so centers are about `separation` apart and the class
/// signal is spread over every feature.
pub fn random_center_blobs(points: usize, classes: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || dim == 0 || points < classes {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, 1 dimension and one point per class (got {classes}, {dim}, {points})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = separation / std::f64::consts::SQRT_2;
    let mut centers = Array2::<f64>::zeros((classes, dim));
    for mut c in centers.rows_mut() {
        c.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
        let norm = c.dot(&c).sqrt();
        c.mapv_inplace(|v| v * radius / norm);
    }
    let labels: Vec<usize> = (0..points).map(|i| i % classes).collect();
    let mut x = Array2::zeros((points, dim));
    for (mut row, &l) in x.rows_mut().into_iter().zip(&labels) {
        for (v, &c) in row.iter_mut().zip(centers.row(l)) {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v = c + g;
        }
    }
    Dataset::new(x, labels, classes)
}
