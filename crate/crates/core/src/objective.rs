//! Collapsing-classes objectives.
//!
//! Both objectives minimize `-Σ [L_i = L_j] log q_ij` (the constant part of
//! the KL divergence to the label-induced target distribution is dropped).
//!
//! * Pairwise: `q` compares every pair of training points, either with a
//!   row-normalized Gaussian (`q_{j|i} ∝ exp(-d_ij)`) or with a heavy-tailed
//!   kernel `(1 + d_ij)^-1` normalized over all ordered pairs `k ≠ l`.
//! * Exemplar-centered: `q` compares training points only with `z`
//!   exemplars, `q_{j|i} = (1 + d_ij)^-1 / Σ_{i,k} (1 + d_ik)^-1`, which costs
//!   `n·z` distance evaluations instead of `n²`.
//!
//! Gradients are the exact derivatives of the losses as computed here. For
//! the heavy-tailed kernels, `∂loss/∂d_ij = w_ij (I_ij - N q_ij)` where
//! `w = (1 + d)^-1`, `I` is the same-class indicator and `N` is the number of
//! same-class pairs in the normalization pool.

use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::exemplars::ExemplarSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Gaussian,
    StudentT,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairwiseLossConfig {
    pub kernel: Kernel,
}

/// Normalization pool of the exemplar-centered `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Over all `n·z` point/exemplar pairs.
    #[default]
    Global,
    /// Over the `z` exemplars of each point separately.
    PerRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarLossState {
    pub exemplars: ExemplarSet,
    pub trainable: bool,
    pub normalization: Normalization,
}

impl ExemplarLossState {
    pub fn fixed(exemplars: ExemplarSet) -> Self {
        Self {
            exemplars,
            trainable: false,
            normalization: Normalization::Global,
        }
    }

    pub fn learned(exemplars: ExemplarSet) -> Self {
        Self {
            exemplars,
            trainable: true,
            normalization: Normalization::Global,
        }
    }
}

/// Loss and gradients w.r.t. the embedding parameters and the exemplars.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub loss: f64,
    pub grad_params: Vec<f64>,
    /// `z × H`; all zeros unless the exemplars are trainable.
    pub grad_exemplars: Array2<f64>,
    /// Number of squared embedding distances evaluated.
    pub distance_evals: u64,
}

/// Loss and gradients w.r.t. embedded coordinates.
#[derive(Debug, Clone)]
pub struct EmbeddedLoss {
    pub loss: f64,
    pub grad_points: Array2<f64>,
    /// Present for exemplar-centered losses.
    pub grad_exemplars: Option<Array2<f64>>,
    pub distance_evals: u64,
}

/// Label-induced target distribution: row `i` is uniform over the columns
/// sharing its class.
pub fn target_probs(rows: &[usize], cols: &[usize], exclude_diagonal: bool) -> Result<Array2<f64>> {
    let mut p = Array2::zeros((rows.len(), cols.len()));
    for (i, &li) in rows.iter().enumerate() {
        let matches = |j: usize| cols[j] == li && !(exclude_diagonal && i == j);
        let count = (0..cols.len()).filter(|&j| matches(j)).count();
        if count == 0 {
            return Err(Error::IsolatedInstance { row: i, class: li });
        }
        let share = 1.0 / count as f64;
        for j in (0..cols.len()).filter(|&j| matches(j)) {
            p[[i, j]] = share;
        }
    }
    Ok(p)
}

fn sq_distances(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut d = Array2::zeros((a.nrows(), b.nrows()));
    for (i, ai) in a.rows().into_iter().enumerate() {
        for (j, bj) in b.rows().into_iter().enumerate() {
            d[[i, j]] = ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    }
    d
}

fn check_distances(d: &Array2<f64>) -> Result<()> {
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("embedding distances overflowed".into()));
    }
    Ok(())
}

/// Neighbor probabilities `q` over pairs of embedded points (zero diagonal).
/// Gaussian rows sum to one; heavy-tailed entries sum to one overall.
pub fn pairwise_probs(y: ArrayView2<'_, f64>, kernel: Kernel) -> Result<Array2<f64>> {
    let n = y.nrows();
    let d = sq_distances(y, y);
    check_distances(&d)?;
    let mut q = Array2::zeros((n, n));
    match kernel {
        Kernel::Gaussian => {
            for i in 0..n {
                let dmin = (0..n).filter(|&k| k != i).map(|k| d[[i, k]]).fold(f64::INFINITY, f64::min);
                let mut s = 0.0;
                for k in (0..n).filter(|&k| k != i) {
                    q[[i, k]] = (dmin - d[[i, k]]).exp();
                    s += q[[i, k]];
                }
                q.row_mut(i).mapv_inplace(|v| v / s);
            }
        }
        Kernel::StudentT => {
            for ((i, k), v) in q.indexed_iter_mut() {
                if i != k {
                    *v = 1.0 / (1.0 + d[[i, k]]);
                }
            }
            let s = q.sum();
            if !(s > 0.0) {
                return Err(Error::Numerical("all pairwise similarities underflowed".into()));
            }
            q.mapv_inplace(|v| v / s);
        }
    }
    Ok(q)
}

/// Pairwise collapsing loss on embedded points.
pub fn pairwise_loss_embedded(y: ArrayView2<'_, f64>, labels: &[usize], kernel: Kernel) -> Result<EmbeddedLoss> {
    let n = y.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument("pairwise loss needs at least 2 points".into()));
    }
    if labels.len() != n {
        return Err(Error::Dimension(format!("{n} points but {} labels", labels.len())));
    }
    let p = target_probs(labels, labels, true)?;
    let d = sq_distances(y, y);
    check_distances(&d)?;
    let same = |i: usize, j: usize| i != j && labels[i] == labels[j];
    let peers: Vec<f64> = (0..n).map(|i| (0..n).filter(|&j| same(i, j)).count() as f64).collect();

    // dloss/dd_ij
    let mut g = Array2::zeros((n, n));
    let mut loss = 0.0;
    match kernel {
        Kernel::Gaussian => {
            for i in 0..n {
                let dmin = (0..n).filter(|&k| k != i).map(|k| d[[i, k]]).fold(f64::INFINITY, f64::min);
                let s: f64 = (0..n).filter(|&k| k != i).map(|k| (dmin - d[[i, k]]).exp()).sum();
                let lse = s.ln() - dmin;
                for j in (0..n).filter(|&j| j != i) {
                    let q = (dmin - d[[i, j]]).exp() / s;
                    let ind = if same(i, j) { 1.0 } else { 0.0 };
                    loss += ind * (d[[i, j]] + lse);
                    // I_ij - N_i q_ij == N_i (p_ij - q_ij)
                    g[[i, j]] = peers[i] * (p[[i, j]] - q);
                }
            }
        }
        Kernel::StudentT => {
            let mut s = 0.0;
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    s += 1.0 / (1.0 + d[[i, j]]);
                }
            }
            if !(s > 0.0) {
                return Err(Error::Numerical("all pairwise similarities underflowed".into()));
            }
            let total: f64 = peers.iter().sum();
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    let w = 1.0 / (1.0 + d[[i, j]]);
                    let ind = if same(i, j) { 1.0 } else { 0.0 };
                    loss += ind * d[[i, j]].ln_1p();
                    g[[i, j]] = w * (ind - total * w / s);
                }
            }
            loss += total * s.ln();
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("pairwise loss is {loss}")));
    }

    let mut grad = Array2::zeros(y.raw_dim());
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let c = 2.0 * (g[[i, j]] + g[[j, i]]);
            Zip::from(grad.row_mut(i))
                .and(y.row(i))
                .and(y.row(j))
                .for_each(|gr, &a, &b| *gr += c * (a - b));
        }
    }
    Ok(EmbeddedLoss {
        loss,
        grad_points: grad,
        grad_exemplars: None,
        distance_evals: (n * n) as u64,
    })
}

fn check_coverage(labels: &[usize], exemplar_labels: &[usize]) -> Result<()> {
    for &l in labels {
        if !exemplar_labels.contains(&l) {
            return Err(Error::MissingExemplarClass { class: l });
        }
    }
    Ok(())
}

/// Point-to-exemplar probabilities `q`, `n × z`.
pub fn exemplar_probs(y: ArrayView2<'_, f64>, ye: ArrayView2<'_, f64>, normalization: Normalization) -> Result<Array2<f64>> {
    let d = sq_distances(y, ye);
    check_distances(&d)?;
    let mut q = d.mapv(|v| 1.0 / (1.0 + v));
    match normalization {
        Normalization::Global => {
            let s = q.sum();
            if !(s > 0.0) {
                return Err(Error::Numerical("all exemplar similarities underflowed".into()));
            }
            q.mapv_inplace(|v| v / s);
        }
        Normalization::PerRow => {
            for mut row in q.rows_mut() {
                let s = row.sum();
                if !(s > 0.0) {
                    return Err(Error::Numerical("all exemplar similarities of a point underflowed".into()));
                }
                row.mapv_inplace(|v| v / s);
            }
        }
    }
    Ok(q)
}

/// Exemplar-centered collapsing loss on embedded points `y` and embedded
/// exemplars `ye`.
pub fn exemplar_loss_embedded(
    y: ArrayView2<'_, f64>,
    labels: &[usize],
    ye: ArrayView2<'_, f64>,
    exemplar_labels: &[usize],
    normalization: Normalization,
) -> Result<EmbeddedLoss> {
    let (n, z) = (y.nrows(), ye.nrows());
    if n == 0 {
        return Err(Error::InvalidArgument("exemplar loss needs at least one point".into()));
    }
    if labels.len() != n || exemplar_labels.len() != z || y.ncols() != ye.ncols() {
        return Err(Error::Dimension("points, exemplars and labels disagree".into()));
    }
    check_coverage(labels, exemplar_labels)?;
    let d = sq_distances(y, ye);
    check_distances(&d)?;
    let w = d.mapv(|v| 1.0 / (1.0 + v));
    let ind = Array2::from_shape_fn((n, z), |(i, j)| if labels[i] == exemplar_labels[j] { 1.0 } else { 0.0 });

    let mut loss: f64 = Zip::from(&ind).and(&d).fold(0.0, |acc, &c, &dv| acc + c * dv.ln_1p());
    let g = match normalization {
        Normalization::Global => {
            let s = w.sum();
            if !(s > 0.0) {
                return Err(Error::Numerical("all exemplar similarities underflowed".into()));
            }
            let total = ind.sum();
            loss += total * s.ln();
            Zip::from(&w).and(&ind).map_collect(|&wv, &c| wv * (c - total * wv / s))
        }
        Normalization::PerRow => {
            let mut g = Array2::zeros((n, z));
            for i in 0..n {
                let s = w.row(i).sum();
                if !(s > 0.0) {
                    return Err(Error::Numerical(format!("all exemplar similarities of point {i} underflowed")));
                }
                let peers = ind.row(i).sum();
                loss += peers * s.ln();
                for j in 0..z {
                    g[[i, j]] = w[[i, j]] * (ind[[i, j]] - peers * w[[i, j]] / s);
                }
            }
            g
        }
    };
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("exemplar loss is {loss}")));
    }

    // d_ij = |y_i - ye_j|², so dd/dy_i = 2(y_i - ye_j) = -dd/dye_j
    let g2 = g.mapv(|v| 2.0 * v);
    let row_sums = g2.sum_axis(Axis(1)).insert_axis(Axis(1));
    let col_sums = g2.sum_axis(Axis(0)).insert_axis(Axis(1));
    let grad_points = &y * &row_sums - g2.dot(&ye);
    let grad_exemplars = &ye * &col_sums - g2.t().dot(&y);
    Ok(EmbeddedLoss {
        loss,
        grad_points,
        grad_exemplars: Some(grad_exemplars),
        distance_evals: (n * z) as u64,
    })
}

fn check_points(model: &Embedding, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
    if x.ncols() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "model expects {} features, got {}",
            model.input_dim(),
            x.ncols()
        )));
    }
    if x.nrows() != labels.len() {
        return Err(Error::Dimension(format!("{} points but {} labels", x.nrows(), labels.len())));
    }
    Ok(())
}

/// Pairwise loss and its gradient over the model parameters.
pub fn pairwise_loss(model: &Embedding, x: ArrayView2<'_, f64>, labels: &[usize], cfg: PairwiseLossConfig) -> Result<LossValue> {
    check_points(model, x, labels)?;
    let cache = model.forward_cached(x)?;
    let el = pairwise_loss_embedded(cache.output(), labels, cfg.kernel)?;
    let back = model.backward(&cache, el.grad_points.view(), false)?;
    Ok(LossValue {
        loss: el.loss,
        grad_params: back.params,
        grad_exemplars: Array2::zeros((0, model.input_dim())),
        distance_evals: el.distance_evals,
    })
}

/// Pairwise loss without gradients.
pub fn pairwise_loss_value(model: &Embedding, x: ArrayView2<'_, f64>, labels: &[usize], cfg: PairwiseLossConfig) -> Result<f64> {
    check_points(model, x, labels)?;
    let y = model.forward(x)?;
    Ok(pairwise_loss_embedded(y.view(), labels, cfg.kernel)?.loss)
}

fn check_exemplars(model: &Embedding, state: &ExemplarLossState) -> Result<()> {
    if state.exemplars.dim() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "exemplars have {} features, model expects {}",
            state.exemplars.dim(),
            model.input_dim()
        )));
    }
    Ok(())
}

/// Exemplar-centered loss with gradients w.r.t. the parameters and, when the
/// exemplars are trainable, w.r.t. the exemplar vectors.
pub fn exemplar_loss(model: &Embedding, x: ArrayView2<'_, f64>, labels: &[usize], state: &ExemplarLossState) -> Result<LossValue> {
    check_points(model, x, labels)?;
    check_exemplars(model, state)?;
    let ex = &state.exemplars;
    let cache_x = model.forward_cached(x)?;
    let cache_e = model.forward_cached(ex.vectors.view())?;
    let el = exemplar_loss_embedded(cache_x.output(), labels, cache_e.output(), &ex.labels, state.normalization)?;
    let grad_ye = el.grad_exemplars.expect("exemplar loss fills exemplar gradient");
    let from_points = model.backward(&cache_x, el.grad_points.view(), false)?;
    let from_exemplars = model.backward(&cache_e, grad_ye.view(), state.trainable)?;
    let grad_params = from_points
        .params
        .iter()
        .zip(&from_exemplars.params)
        .map(|(a, b)| a + b)
        .collect();
    let grad_exemplars = from_exemplars
        .inputs
        .unwrap_or_else(|| Array2::zeros(ex.vectors.raw_dim()));
    Ok(LossValue {
        loss: el.loss,
        grad_params,
        grad_exemplars,
        distance_evals: el.distance_evals,
    })
}

/// Exemplar-centered loss without gradients.
pub fn exemplar_loss_value(model: &Embedding, x: ArrayView2<'_, f64>, labels: &[usize], state: &ExemplarLossState) -> Result<f64> {
    check_points(model, x, labels)?;
    check_exemplars(model, state)?;
    let y = model.forward(x)?;
    let ye = model.forward(state.exemplars.vectors.view())?;
    Ok(exemplar_loss_embedded(y.view(), labels, ye.view(), &state.exemplars.labels, state.normalization)?.loss)
}

/// [`exemplar_loss`] on the rows `batch` of `x` alone; the normalization
/// pool is `|batch| × z`.
pub fn minibatch_loss(
    model: &Embedding,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    state: &ExemplarLossState,
    batch: &[usize],
) -> Result<LossValue> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    if let Some(&i) = batch.iter().find(|&&i| i >= x.nrows()) {
        return Err(Error::InvalidArgument(format!("batch index {i} out of range")));
    }
    let xb = x.select(Axis(0), batch);
    let lb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
    exemplar_loss(model, xb.view(), &lb, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn target_probs_examples() {
        let p = target_probs(&[0, 0, 1, 1], &[0, 0, 1, 1], true).unwrap();
        assert_eq!(p.row(0).to_vec(), vec![0.0, 1.0, 0.0, 0.0]);
        let p = target_probs(&[0], &[0, 0], false).unwrap();
        assert_eq!(p.row(0).to_vec(), vec![0.5, 0.5]);
        assert!(matches!(
            target_probs(&[0, 0, 1], &[0, 0, 1], true),
            Err(Error::IsolatedInstance { row: 2, class: 1 })
        ));
    }

    #[test]
    fn two_points_student_t() {
        for gap in [0.0, 1.0, 1e3] {
            let q = pairwise_probs(array![[0.0, 0.0], [gap, 0.0]].view(), Kernel::StudentT).unwrap();
            assert_eq!(q[[0, 1]], 0.5);
            assert_eq!(q[[1, 0]], 0.5);
        }
    }

    #[test]
    fn collapsed_triple_gaussian() {
        let y = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        let q = pairwise_probs(y.view(), Kernel::Gaussian).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(q[[i, j]], if i == j { 0.0 } else { 0.5 });
            }
        }
        let l = pairwise_loss_embedded(y.view(), &[0, 0, 0], Kernel::Gaussian).unwrap();
        assert!((l.loss - 6.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn equidistant_exemplars() {
        let q = exemplar_probs(array![[0.0]].view(), array![[-1.0], [1.0]].view(), Normalization::Global).unwrap();
        assert_eq!(q.row(0).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn singleton_batch_by_hand() {
        // d = 1 and 4 → w = 1/2, 1/5; loss = -log(w1/S) - log(w2/S)
        let model = Embedding::linear(array![[1.0]]).unwrap();
        let x = array![[0.0], [9.0]];
        let state = ExemplarLossState::fixed(ExemplarSet::new(array![[1.0], [-2.0]], vec![0, 0]).unwrap());
        let l = minibatch_loss(&model, x.view(), &[0, 1], &state, &[0]).unwrap();
        let s: f64 = 0.5 + 0.2;
        let expect = -(0.5 / s).ln() - (0.2 / s).ln();
        assert!((l.loss - expect).abs() < 1e-12);
        assert_eq!(l.distance_evals, 2);
    }

    #[test]
    fn frozen_exemplars_have_zero_gradient() {
        let model = Embedding::linear(array![[1.0, -1.0]]).unwrap();
        let x = array![[0.0, 1.0], [2.0, 0.5], [1.0, 1.0]];
        let ex = ExemplarSet::new(array![[0.0, 0.0], [1.0, 2.0]], vec![0, 1]).unwrap();
        let l = exemplar_loss(&model, x.view(), &[0, 1, 0], &ExemplarLossState::fixed(ex.clone())).unwrap();
        assert!(l.grad_exemplars.iter().all(|&v| v == 0.0));
        assert_eq!(l.grad_exemplars.dim(), (2, 2));
        let l = exemplar_loss(&model, x.view(), &[0, 1, 0], &ExemplarLossState::learned(ex)).unwrap();
        assert!(l.grad_exemplars.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn missing_exemplar_class() {
        let model = Embedding::linear(array![[1.0]]).unwrap();
        let state = ExemplarLossState::fixed(ExemplarSet::new(array![[0.0]], vec![0]).unwrap());
        assert!(matches!(
            exemplar_loss(&model, array![[1.0], [2.0]].view(), &[0, 1], &state),
            Err(Error::MissingExemplarClass { class: 1 })
        ));
    }

    #[test]
    fn overflow_is_reported() {
        let y = array![[0.0], [f64::MAX]];
        assert!(matches!(
            pairwise_loss_embedded(y.view(), &[0, 0], Kernel::StudentT),
            Err(Error::Numerical(_))
        ));
    }
}
