//! Exact brute-force kNN classification and the exemplar-vs-full speedup
//! benchmark.
//!
//! Neighbors are ordered by squared Euclidean distance, ties broken by the
//! lower reference index. The vote is a plain majority; tied classes are
//! resolved in favor of the one owning the nearest neighbor.

use std::time::Instant;

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::exemplars::ExemplarSet;

/// Squared Euclidean distance with four independent accumulators, so the
/// inner loop vectorizes.
#[inline]
pub fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            let d = a[4 * c + l] - b[4 * c + l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        let d = a[i] - b[i];
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn row_slice<'a>(row: &'a ArrayView1<'_, f64>, buf: &'a mut Vec<f64>) -> &'a [f64] {
    match row.as_slice() {
        Some(s) => s,
        None => {
            buf.clear();
            buf.extend(row.iter());
            buf
        }
    }
}

/// The `k` nearest references of `query` as `(distance, index)`, nearest
/// first.
pub fn nearest(references: ArrayView2<'_, f64>, query: ArrayView1<'_, f64>, k: usize) -> Vec<(f64, usize)> {
    let mut qbuf = Vec::new();
    let q = row_slice(&query, &mut qbuf);
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    let mut rbuf = Vec::new();
    for (i, r) in references.rows().into_iter().enumerate() {
        let d = sq_euclidean(row_slice(&r, &mut rbuf), q);
        // strict comparison keeps the earlier index on equal distance
        if best.len() < k || d < best[best.len() - 1].0 {
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, i));
            best.truncate(k);
        }
    }
    best
}

fn vote(neighbors: &[(f64, usize)], ref_labels: &[usize]) -> usize {
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &(_, i) in neighbors {
        let l = ref_labels[i];
        match counts.iter_mut().find(|(c, _)| *c == l) {
            Some((_, n)) => *n += 1,
            None => counts.push((l, 1)),
        }
    }
    let top = counts.iter().map(|&(_, n)| n).max().unwrap_or(0);
    // `counts` is in order of first (nearest) appearance
    counts.iter().find(|&&(_, n)| n == top).map_or(0, |&(c, _)| c)
}

fn check_knn(references: ArrayView2<'_, f64>, ref_labels: &[usize], queries: ArrayView2<'_, f64>, k: usize) -> Result<()> {
    if k == 0 || k > references.nrows() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={} (number of references)",
            references.nrows()
        )));
    }
    if ref_labels.len() != references.nrows() {
        return Err(Error::Dimension("reference labels do not match references".into()));
    }
    if queries.ncols() != references.ncols() {
        return Err(Error::Dimension(format!(
            "queries have {} dimensions, references {}",
            queries.ncols(),
            references.ncols()
        )));
    }
    Ok(())
}

/// Predicts a label for every query row.
pub fn knn_classify(
    references: ArrayView2<'_, f64>,
    ref_labels: &[usize],
    queries: ArrayView2<'_, f64>,
    k: usize,
) -> Result<Vec<usize>> {
    check_knn(references, ref_labels, queries, k)?;
    Ok(queries
        .rows()
        .into_iter()
        .map(|q| vote(&nearest(references, q, k), ref_labels))
        .collect())
}

/// [`knn_classify`] with queries spread over the rayon pool.
pub fn knn_classify_parallel(
    references: ArrayView2<'_, f64>,
    ref_labels: &[usize],
    queries: ArrayView2<'_, f64>,
    k: usize,
) -> Result<Vec<usize>> {
    check_knn(references, ref_labels, queries, k)?;
    Ok((0..queries.nrows())
        .into_par_iter()
        .map(|i| vote(&nearest(references, queries.row(i), k), ref_labels))
        .collect())
}

/// Fraction of mismatched predictions.
pub fn error_rate(predicted: &[usize], truth: &[usize]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let wrong = predicted.iter().zip(truth).filter(|(p, t)| p != t).count();
    wrong as f64 / predicted.len() as f64
}

/// Neighbor count used when none is given: 1 for up to ten exemplars,
/// otherwise 5.
pub fn default_k(z: usize) -> usize {
    if (1..=10).contains(&z) {
        1
    } else {
        5
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub predictions: Vec<usize>,
    pub error: f64,
}

/// Embeds raw `test` features and classifies them against the embedded
/// exemplars.
pub fn classify_with_model(model: &EmbeddingModel, exemplars: &ExemplarSet, test: &Dataset, k: usize) -> Result<Classification> {
    if test.feature_dim() != model.embedding.input_dim() {
        return Err(Error::Dimension(format!(
            "model expects {} features, test data has {}",
            model.embedding.input_dim(),
            test.feature_dim()
        )));
    }
    let y = model.embed_raw(test.features())?;
    let ye = model.embed(exemplars.vectors.view())?;
    let predictions = knn_classify(ye.view(), &exemplars.labels, y.view(), k)?;
    let error = error_rate(&predictions, test.labels());
    Ok(Classification { predictions, error })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub exemplar_error: f64,
    /// Median seconds, including embedding the test set.
    pub exemplar_seconds: f64,
    pub full_error: f64,
    pub full_seconds: f64,
    pub speedup: f64,
    pub n_test: usize,
    pub n_train: usize,
    pub z: usize,
    pub input_dim: usize,
    pub embed_dim: usize,
    pub k_exemplar: usize,
    pub k_full: usize,
    pub repeats: usize,
}

impl BenchmarkReport {
    /// Flat `key=value` lines.
    pub fn to_key_value(&self) -> String {
        format!(
            "exemplar_error={}\nexemplar_seconds={}\nfull_error={}\nfull_seconds={}\nspeedup={}\n\
             n_test={}\nn_train={}\nz={}\ninput_dim={}\nembed_dim={}\nk_exemplar={}\nk_full={}\nrepeats={}\n",
            self.exemplar_error,
            self.exemplar_seconds,
            self.full_error,
            self.full_seconds,
            self.speedup,
            self.n_test,
            self.n_train,
            self.z,
            self.input_dim,
            self.embed_dim,
            self.k_exemplar,
            self.k_full,
            self.repeats
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchmarkConfig {
    pub k_full: usize,
    pub k_exemplar: usize,
    pub repeats: usize,
    pub parallel: bool,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times exemplar kNN in the embedding space (test embedding included)
/// against brute-force kNN over all raw training points. Each arm runs one
/// untimed warm-up pass, then `repeats` timed passes; the median is reported.
pub fn benchmark(
    model: &EmbeddingModel,
    exemplars: &ExemplarSet,
    train: &Dataset,
    test: &Dataset,
    cfg: BenchmarkConfig,
) -> Result<BenchmarkReport> {
    if cfg.repeats < 3 {
        return Err(Error::InvalidArgument("benchmark needs at least 3 repeats".into()));
    }
    if train.feature_dim() != test.feature_dim() {
        return Err(Error::Dimension("train and test feature dimensions differ".into()));
    }
    let classify = if cfg.parallel { knn_classify_parallel } else { knn_classify };

    let exemplar_arm = || -> Result<Vec<usize>> {
        let y = model.embed_raw(test.features())?;
        let ye = model.embed(exemplars.vectors.view())?;
        classify(ye.view(), &exemplars.labels, y.view(), cfg.k_exemplar)
    };
    let full_arm = || classify(train.features(), train.labels(), test.features(), cfg.k_full);

    let time = |f: &dyn Fn() -> Result<Vec<usize>>| -> Result<(Vec<usize>, f64)> {
        let predictions = f()?;
        let mut secs = Vec::with_capacity(cfg.repeats);
        for _ in 0..cfg.repeats {
            let start = Instant::now();
            let p = f()?;
            secs.push(start.elapsed().as_secs_f64());
            debug_assert_eq!(p, predictions);
        }
        Ok((predictions, median(secs)))
    };
    let (ex_pred, ex_secs) = time(&exemplar_arm)?;
    let (full_pred, full_secs) = time(&full_arm)?;
    Ok(BenchmarkReport {
        exemplar_error: error_rate(&ex_pred, test.labels()),
        exemplar_seconds: ex_secs,
        full_error: error_rate(&full_pred, test.labels()),
        full_seconds: full_secs,
        speedup: full_secs / ex_secs.max(f64::MIN_POSITIVE),
        n_test: test.len(),
        n_train: train.len(),
        z: exemplars.len(),
        input_dim: train.feature_dim(),
        embed_dim: model.embedding.output_dim(),
        k_exemplar: cfg.k_exemplar,
        k_full: cfg.k_full,
        repeats: cfg.repeats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn exact_match_wins_with_k1() {
        let refs = array![[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]];
        let p = knn_classify(refs.view(), &[0, 1, 2], array![[1.0, 1.0]].view(), 1).unwrap();
        assert_eq!(p, vec![1]);
    }

    #[test]
    fn majority_vote() {
        let refs = array![[0.0], [1.0], [2.0], [10.0]];
        let p = knn_classify(refs.view(), &[7, 7, 3, 3], array![[0.4]].view(), 3).unwrap();
        assert_eq!(p, vec![7]);
    }

    #[test]
    fn vote_tie_goes_to_nearest() {
        let refs = array![[0.0], [1.0], [-1.5], [3.0]];
        let p = knn_classify(refs.view(), &[0, 1, 1, 0], array![[0.9]].view(), 4).unwrap();
        assert_eq!(p, vec![1]);
    }

    #[test]
    fn distance_tie_goes_to_lower_index() {
        let refs = array![[1.0], [-1.0]];
        assert_eq!(knn_classify(refs.view(), &[4, 2], array![[0.0]].view(), 1).unwrap(), vec![4]);
        let refs = array![[-1.0], [1.0]];
        assert_eq!(knn_classify(refs.view(), &[4, 2], array![[0.0]].view(), 1).unwrap(), vec![4]);
    }

    #[test]
    fn k_larger_than_references() {
        assert!(knn_classify(array![[0.0]].view(), &[0], array![[0.0]].view(), 2).is_err());
        assert!(knn_classify(array![[0.0]].view(), &[0], array![[0.0]].view(), 0).is_err());
    }

    #[test]
    fn auto_k_rule() {
        assert_eq!(default_k(10), 1);
        assert_eq!(default_k(20), 5);
        assert_eq!(default_k(0), 5);
    }

    #[test]
    fn distance_kernel_matches_naive() {
        let a: Vec<f64> = (0..13).map(|i| i as f64 * 0.3).collect();
        let b: Vec<f64> = (0..13).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
        assert!((sq_euclidean(&a, &b) - naive).abs() < 1e-12);
    }
}
