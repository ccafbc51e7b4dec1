//! Nonlinear conjugate gradient training.
//!
//! Search directions follow Polak–Ribière+ (`β = max(0, gᵀ(g - g_prev) /
//! |g_prev|²)`), with a reset to steepest descent whenever `β ≤ 0`, the
//! direction is not a descent direction, or the restart interval elapses.
//! Step lengths come from a backtracking line search that enforces the
//! Armijo condition `f(x + αd) ≤ f(x) + c₁ α gᵀd`. The first trial step is
//! refined once by quadratic interpolation, which makes the search exact on
//! quadratics.

use std::fmt;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Split};
use crate::embedding::{Embedding, EmbeddingModel};
use crate::error::{Error, Result};
use crate::exemplars::ExemplarSet;
use crate::knn::{default_k, error_rate, knn_classify};
use crate::objective::{
    exemplar_loss, exemplar_loss_value, pairwise_loss, pairwise_loss_value, ExemplarLossState, PairwiseLossConfig,
};

/// A differentiable scalar function of a flat parameter vector.
pub trait Objective {
    fn value(&mut self, x: &[f64]) -> Result<f64>;
    fn value_and_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    /// Armijo constant `c₁`, in (0, 1).
    pub armijo: f64,
    /// Backtracking factor `β`, in (0, 1).
    pub shrink: f64,
    pub max_shrinks: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            armijo: 1e-4,
            shrink: 0.5,
            max_shrinks: 40,
        }
    }
}

impl LineSearchConfig {
    fn validate(&self) -> Result<()> {
        if !(self.armijo > 0.0 && self.armijo < 1.0) || !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "line search needs 0 < c1 < 1 and 0 < beta < 1, got c1 = {}, beta = {}",
                self.armijo, self.shrink
            )));
        }
        Ok(())
    }
}

/// One accepted conjugate gradient step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub alpha: f64,
    pub f_before: f64,
    pub f_after: f64,
    /// Directional derivative `gᵀd` at the start of the step.
    pub slope: f64,
    pub grad_norm: f64,
    /// The direction was reset to steepest descent.
    pub restarted: bool,
    /// The line search failed and a tiny fixed step was taken instead.
    pub fallback: bool,
}

impl StepRecord {
    pub fn satisfies_armijo(&self, c1: f64) -> bool {
        self.f_after <= self.f_before + c1 * self.alpha * self.slope
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Polak–Ribière+ state carried between steps.
#[derive(Debug, Clone)]
pub struct ConjugateGradient {
    line_search: LineSearchConfig,
    restart_interval: usize,
    direction: Vec<f64>,
    prev_grad: Option<Vec<f64>>,
    since_restart: usize,
    last_alpha: Option<f64>,
    last_slope: Option<f64>,
    current: Option<(f64, Vec<f64>)>,
}

impl ConjugateGradient {
    pub fn new(line_search: LineSearchConfig, restart_interval: usize) -> Result<Self> {
        line_search.validate()?;
        if restart_interval == 0 {
            return Err(Error::InvalidArgument("restart interval must be at least 1".into()));
        }
        Ok(Self {
            line_search,
            restart_interval,
            direction: Vec::new(),
            prev_grad: None,
            since_restart: 0,
            last_alpha: None,
            last_slope: None,
            current: None,
        })
    }

    /// Forgets the search direction and any cached evaluation. Needed when
    /// the objective changes (a new minibatch).
    pub fn reset(&mut self) {
        self.direction.clear();
        self.prev_grad = None;
        self.since_restart = 0;
        self.last_alpha = None;
        self.last_slope = None;
        self.current = None;
    }

    /// Value and gradient norm at `x`, cached for the next step.
    pub fn evaluate(&mut self, x: &[f64], obj: &mut dyn Objective) -> Result<(f64, f64)> {
        if self.current.is_none() {
            self.current = Some(obj.value_and_grad(x)?);
        }
        let (f, g) = self.current.as_ref().expect("just filled");
        Ok((*f, norm(g)))
    }

    /// Takes one step from `x` (updated in place).
    pub fn step(&mut self, x: &mut [f64], obj: &mut dyn Objective) -> Result<StepRecord> {
        self.evaluate(x, obj)?;
        let (f0, g) = self.current.take().expect("evaluated above");
        let grad_norm = norm(&g);

        let mut restarted = true;
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        if let Some(gp) = &self.prev_grad {
            if self.since_restart < self.restart_interval && self.direction.len() == g.len() {
                let denom = dot(gp, gp);
                let beta = if denom > 0.0 {
                    g.iter().zip(gp).map(|(a, b)| a * (a - b)).sum::<f64>() / denom
                } else {
                    0.0
                };
                if beta > 0.0 {
                    for (di, &pi) in d.iter_mut().zip(&self.direction) {
                        *di += beta * pi;
                    }
                    restarted = false;
                }
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) && !restarted {
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            restarted = true;
        }
        if restarted {
            self.since_restart = 0;
        }
        self.since_restart += 1;

        if !(slope < 0.0) {
            // zero gradient: nothing to do
            self.current = Some((f0, g));
            return Ok(StepRecord {
                alpha: 0.0,
                f_before: f0,
                f_after: f0,
                slope,
                grad_norm,
                restarted,
                fallback: false,
            });
        }

        let dnorm = norm(&d);
        let alpha0 = match (self.last_alpha, self.last_slope) {
            (Some(a), Some(s)) if (a * s / slope).is_finite() && a * s / slope > 0.0 => a * s / slope,
            _ => 1.0 / dnorm.max(1.0),
        };

        let (alpha, f1, fallback) = self.line_search(x, &d, f0, slope, alpha0, obj)?;
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += alpha * di;
        }
        self.last_alpha = Some(alpha);
        self.last_slope = Some(slope);
        self.direction = d;
        self.prev_grad = Some(g);
        if fallback {
            self.since_restart = self.restart_interval;
        }
        Ok(StepRecord {
            alpha,
            f_before: f0,
            f_after: f1,
            slope,
            grad_norm,
            restarted,
            fallback,
        })
    }

    fn line_search(
        &self,
        x: &[f64],
        d: &[f64],
        f0: f64,
        slope: f64,
        alpha0: f64,
        obj: &mut dyn Objective,
    ) -> Result<(f64, f64, bool)> {
        let c1 = self.line_search.armijo;
        let mut trial = vec![0.0; x.len()];
        let mut phi = |alpha: f64| -> Result<f64> {
            for ((t, xi), di) in trial.iter_mut().zip(x).zip(d) {
                *t = xi + alpha * di;
            }
            match obj.value(&trial) {
                Ok(f) if f.is_finite() => Ok(f),
                // overshooting into overflow is a step-length problem
                Ok(_) | Err(Error::Numerical(_)) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        };
        let armijo = |alpha: f64, f: f64| f <= f0 + c1 * alpha * slope;

        let f_init = phi(alpha0)?;
        let mut best: Option<(f64, f64)> = armijo(alpha0, f_init).then_some((alpha0, f_init));
        let mut alpha = alpha0;
        let curvature = 2.0 * (f_init - f0 - slope * alpha0);
        if f_init.is_finite() && curvature > 0.0 {
            let aq = (-slope * alpha0 * alpha0 / curvature).clamp(1e-8 * alpha0, 100.0 * alpha0);
            if aq != alpha0 {
                let fq = phi(aq)?;
                if armijo(aq, fq) && best.is_none_or(|(_, fb)| fq < fb) {
                    best = Some((aq, fq));
                }
                alpha = alpha.min(aq);
            }
        }
        if let Some((a, f)) = best {
            return Ok((a, f, false));
        }
        for _ in 0..self.line_search.max_shrinks {
            alpha *= self.line_search.shrink;
            let f = phi(alpha)?;
            if armijo(alpha, f) {
                return Ok((alpha, f, false));
            }
        }
        let tiny = 1e-12 * (1.0 + norm(x)) / norm(d);
        log::warn!("line search failed after {} shrinks; taking a fixed step of {tiny:e}", self.line_search.max_shrinks);
        let f = phi(tiny)?;
        Ok((tiny, f, true))
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeReport {
    pub iterations: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub steps: Vec<StepRecord>,
}

/// Runs conjugate gradient until the gradient norm drops to `grad_tol` or
/// `max_iters` steps were taken.
pub fn minimize(
    obj: &mut dyn Objective,
    x: &mut [f64],
    line_search: LineSearchConfig,
    restart_interval: usize,
    max_iters: usize,
    grad_tol: f64,
) -> Result<MinimizeReport> {
    let mut cg = ConjugateGradient::new(line_search, restart_interval)?;
    let mut steps = Vec::new();
    loop {
        let (value, grad_norm) = cg.evaluate(x, obj)?;
        if grad_norm <= grad_tol || steps.len() >= max_iters {
            return Ok(MinimizeReport {
                iterations: steps.len(),
                value,
                grad_norm,
                steps,
            });
        }
        let rec = cg.step(x, obj)?;
        if rec.alpha == 0.0 {
            return Ok(MinimizeReport {
                iterations: steps.len(),
                value,
                grad_norm,
                steps,
            });
        }
        steps.push(rec);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossMode {
    Pairwise(PairwiseLossConfig),
    Exemplar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgConfig {
    pub max_epochs: usize,
    /// `None` picks 5000 (exemplar) or 1000 (pairwise). Training is
    /// full-batch when the training set fits in one batch.
    pub batch_size: Option<usize>,
    pub cg_steps_per_batch: usize,
    pub line_search: LineSearchConfig,
    pub restart_interval: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Neighbors for validation kNN; `None` uses [`default_k`].
    pub k: Option<usize>,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            max_epochs: 50,
            batch_size: None,
            cg_steps_per_batch: 3,
            line_search: LineSearchConfig::default(),
            restart_interval: 20,
            seed: 0,
            patience: 10,
            k: None,
        }
    }
}

impl CgConfig {
    fn validate(&self) -> Result<()> {
        self.line_search.validate()?;
        if self.max_epochs == 0 || self.cg_steps_per_batch == 0 || self.restart_interval == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument("epoch, step, restart and patience counts must be >= 1".into()));
        }
        if self.batch_size.is_some_and(|b| b < 2) {
            return Err(Error::InvalidArgument("batch size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Per-epoch progress. Displays as
/// `epoch=<e> loss=<float> val_err=<float> secs=<float>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_err: f64,
    pub secs: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={} val_err={} secs={:.3}",
            self.epoch, self.loss, self.val_err, self.secs
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (lowest validation error,
    /// earliest on ties).
    pub selected_epoch: usize,
    pub full_batch: bool,
    pub steps: Vec<StepRecord>,
    pub objective_evals: u64,
    pub distance_evals: u64,
}

impl TrainReport {
    pub fn selected(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.selected_epoch)
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: EmbeddingModel,
    pub exemplars: Option<ExemplarSet>,
    pub report: TrainReport,
}

/// kNN error of `val_x` against `references` after embedding both. The
/// references are exemplars (exemplar mode) or training points (pairwise).
pub fn evaluate_validation(
    embedding: &Embedding,
    references: ArrayView2<'_, f64>,
    ref_labels: &[usize],
    val_x: ArrayView2<'_, f64>,
    val_labels: &[usize],
    k: usize,
) -> Result<f64> {
    if val_labels.is_empty() {
        return Ok(f64::NAN);
    }
    let refs = embedding.forward(references)?;
    let queries = embedding.forward(val_x)?;
    let predicted = knn_classify(refs.view(), ref_labels, queries.view(), k)?;
    Ok(error_rate(&predicted, val_labels))
}

struct TrainObjective<'a> {
    template: &'a Embedding,
    state: Option<&'a ExemplarLossState>,
    mode: LossMode,
    x: Array2<f64>,
    labels: Vec<usize>,
    evals: u64,
    distance_evals: u64,
}

impl TrainObjective<'_> {
    fn unpack(&self, theta: &[f64]) -> Result<(Embedding, Option<ExemplarLossState>)> {
        let mut emb = self.template.clone();
        let np = emb.param_count();
        emb.set_params_flat(&theta[..np])?;
        let state = self.state.map(|s| {
            let mut s = s.clone();
            if s.trainable {
                let tail = &theta[np..];
                s.exemplars.vectors.iter_mut().zip(tail).for_each(|(e, &t)| *e = t);
            }
            s
        });
        Ok((emb, state))
    }

    fn count(&mut self) {
        self.evals += 1;
        self.distance_evals += match self.mode {
            LossMode::Exemplar => (self.x.nrows() * self.state.map_or(0, |s| s.exemplars.len())) as u64,
            LossMode::Pairwise(_) => (self.x.nrows() * self.x.nrows()) as u64,
        };
    }
}

impl Objective for TrainObjective<'_> {
    fn value(&mut self, theta: &[f64]) -> Result<f64> {
        self.count();
        let (emb, state) = self.unpack(theta)?;
        match (self.mode, &state) {
            (LossMode::Pairwise(cfg), _) => pairwise_loss_value(&emb, self.x.view(), &self.labels, cfg),
            (LossMode::Exemplar, Some(s)) => exemplar_loss_value(&emb, self.x.view(), &self.labels, s),
            (LossMode::Exemplar, None) => unreachable!("checked in train"),
        }
    }

    fn value_and_grad(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.count();
        let (emb, state) = self.unpack(theta)?;
        let lv = match (self.mode, &state) {
            (LossMode::Pairwise(cfg), _) => pairwise_loss(&emb, self.x.view(), &self.labels, cfg)?,
            (LossMode::Exemplar, Some(s)) => exemplar_loss(&emb, self.x.view(), &self.labels, s)?,
            (LossMode::Exemplar, None) => unreachable!("checked in train"),
        };
        let mut grad = lv.grad_params;
        if state.as_ref().is_some_and(|s| s.trainable) {
            grad.extend(lv.grad_exemplars.iter());
        }
        Ok((lv.loss, grad))
    }
}

fn even_batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let n = order.len();
    let count = n.div_ceil(batch_size);
    let base = n / count;
    let extra = n % count;
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    for b in 0..count {
        let len = base + usize::from(b < extra);
        out.push(&order[start..start + len]);
        start += len;
    }
    out
}

/// Trains `model` on the training part of `ds` (features already
/// normalized) and returns the snapshot with the lowest validation error.
///
/// In exemplar mode `exemplars` must be given; trainable exemplars are
/// optimized jointly with the embedding parameters as one vector.
pub fn train(
    model: EmbeddingModel,
    ds: &Dataset,
    split: &Split,
    exemplars: Option<ExemplarLossState>,
    mode: LossMode,
    cfg: &CgConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<Trained> {
    cfg.validate()?;
    if model.embedding.input_dim() != ds.feature_dim() {
        return Err(Error::Dimension(format!(
            "model expects {} features, dataset has {}",
            model.embedding.input_dim(),
            ds.feature_dim()
        )));
    }
    if split.train.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let state = match (mode, exemplars) {
        (LossMode::Exemplar, Some(s)) => {
            if s.exemplars.dim() != ds.feature_dim() {
                return Err(Error::Dimension("exemplars and data have different dimensions".into()));
            }
            Some(s)
        }
        (LossMode::Exemplar, None) => {
            return Err(Error::InvalidArgument("exemplar mode needs an exemplar set".into()))
        }
        (LossMode::Pairwise(_), _) => None,
    };

    let x = ds.features();
    let labels = ds.labels();
    let train_x = x.select(Axis(0), &split.train);
    let train_labels: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    let val_x = x.select(Axis(0), &split.validation);
    let val_labels: Vec<usize> = split.validation.iter().map(|&i| labels[i]).collect();

    let z = state.as_ref().map_or(0, |s| s.exemplars.len());
    let k = cfg.k.unwrap_or_else(|| default_k(z));
    let batch_size = cfg.batch_size.unwrap_or(match mode {
        LossMode::Exemplar => 5000,
        LossMode::Pairwise(_) => 1000,
    });
    let n = train_x.nrows();
    let full_batch = n <= batch_size;

    let n_params = model.embedding.param_count();
    let mut theta = model.embedding.params_flat();
    if let Some(s) = state.as_ref().filter(|s| s.trainable) {
        theta.extend(s.exemplars.vectors.iter());
    }

    let mut cg = ConjugateGradient::new(cfg.line_search, cfg.restart_interval)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport {
        epochs: Vec::new(),
        selected_epoch: 0,
        full_batch,
        steps: Vec::new(),
        objective_evals: 0,
        distance_evals: 0,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stale = 0;

    let mut full_obj = full_batch.then(|| TrainObjective {
        template: &model.embedding,
        state: state.as_ref(),
        mode,
        x: train_x.clone(),
        labels: train_labels.clone(),
        evals: 0,
        distance_evals: 0,
    });

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let epoch_loss = if let Some(obj) = full_obj.as_mut() {
            let mut last = f64::NAN;
            for _ in 0..cfg.cg_steps_per_batch {
                let rec = cg
                    .step(&mut theta, obj)
                    .map_err(|e| annotate(e, epoch, None))?;
                last = rec.f_after;
                report.steps.push(rec);
            }
            last
        } else {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let batches = even_batches(&order, batch_size);
            let nb = batches.len();
            for (b, batch) in batches.into_iter().enumerate() {
                let mut obj = TrainObjective {
                    template: &model.embedding,
                    state: state.as_ref(),
                    mode,
                    x: train_x.select(Axis(0), batch),
                    labels: batch.iter().map(|&i| train_labels[i]).collect(),
                    evals: 0,
                    distance_evals: 0,
                };
                cg.reset();
                let mut last = f64::NAN;
                for _ in 0..cfg.cg_steps_per_batch {
                    let rec = cg
                        .step(&mut theta, &mut obj)
                        .map_err(|e| annotate(e, epoch, Some(b)))?;
                    last = rec.f_after;
                    report.steps.push(rec);
                }
                report.objective_evals += obj.evals;
                report.distance_evals += obj.distance_evals;
                total += last;
            }
            total / nb as f64
        };

        let probe = TrainObjective {
            template: &model.embedding,
            state: state.as_ref(),
            mode,
            x: Array2::zeros((0, 0)),
            labels: Vec::new(),
            evals: 0,
            distance_evals: 0,
        };
        let (emb, st) = probe.unpack(&theta)?;
        let val_err = match &st {
            Some(s) => evaluate_validation(&emb, s.exemplars.vectors.view(), &s.exemplars.labels, val_x.view(), &val_labels, k)?,
            None => evaluate_validation(&emb, train_x.view(), &train_labels, val_x.view(), &val_labels, k)?,
        };
        let record = EpochRecord {
            epoch,
            loss: epoch_loss,
            val_err,
            secs: start.elapsed().as_secs_f64(),
        };
        progress(&record);
        report.epochs.push(record);

        let improved = val_labels.is_empty() || best.as_ref().is_none_or(|(b, _)| val_err < *b);
        if improved {
            best = Some((val_err, theta.clone()));
            report.selected_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if let Some(obj) = &full_obj {
        report.objective_evals += obj.evals;
        report.distance_evals += obj.distance_evals;
    }

    let (_, theta) = best.expect("at least one epoch ran");
    let mut embedding = model.embedding.clone();
    embedding.set_params_flat(&theta[..n_params])?;
    let exemplars = state.map(|s| {
        let mut ex = s.exemplars;
        if s.trainable {
            ex.vectors.iter_mut().zip(&theta[n_params..]).for_each(|(e, &t)| *e = t);
        }
        ex
    });
    Ok(Trained {
        model: EmbeddingModel::new(embedding, model.norm)?,
        exemplars,
        report,
    })
}

fn annotate(e: Error, epoch: usize, batch: Option<usize>) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(match batch {
            Some(b) => format!("epoch {epoch}, batch {b}: {msg}"),
            None => format!("epoch {epoch} (full batch): {msg}"),
        }),
        other => other,
    }
}
