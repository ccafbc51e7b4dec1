//! Class-labeled exemplar sets: proportional allocation of the exemplar
//! budget, supervised (per-class) k-means and per-class random sampling.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// `z` exemplar vectors (rows, in normalized input space) and their classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarSet {
    pub vectors: Array2<f64>,
    pub labels: Vec<usize>,
}

impl ExemplarSet {
    pub fn new(vectors: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if vectors.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} exemplar vectors but {} labels",
                vectors.nrows(),
                labels.len()
            )));
        }
        Ok(Self { vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExemplarMode {
    KMeans,
    Random,
    LearnedFromKMeans,
    LearnedFromRandom,
}

impl ExemplarMode {
    pub fn is_learned(self) -> bool {
        matches!(self, ExemplarMode::LearnedFromKMeans | ExemplarMode::LearnedFromRandom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarConfig {
    pub z: usize,
    pub mode: ExemplarMode,
    pub seed: u64,
    pub max_iters: usize,
    /// Relative inertia change below which Lloyd iterations stop.
    pub tolerance: f64,
}

impl ExemplarConfig {
    pub fn new(z: usize, mode: ExemplarMode, seed: u64) -> Self {
        Self {
            z,
            mode,
            seed,
            max_iters: 50,
            tolerance: 1e-6,
        }
    }
}

/// Splits `z` across classes in proportion to their frequency (largest
/// remainder), giving every present class at least one exemplar.
pub fn allocate_per_class(labels: &[usize], class_count: usize, z: usize) -> Result<Vec<usize>> {
    let mut sizes = vec![0usize; class_count];
    for &l in labels {
        if l >= class_count {
            return Err(Error::InvalidArgument(format!("label {l} >= class count {class_count}")));
        }
        sizes[l] += 1;
    }
    let present = sizes.iter().filter(|&&s| s > 0).count();
    if z < present {
        return Err(Error::InvalidArgument(format!(
            "{z} exemplars cannot cover {present} classes"
        )));
    }
    let n = labels.len() as f64;
    let quotas: Vec<f64> = sizes.iter().map(|&s| z as f64 * s as f64 / n).collect();
    let mut counts: Vec<usize> = quotas
        .iter()
        .zip(&sizes)
        .map(|(&q, &s)| if s > 0 { (q.floor() as usize).max(1) } else { 0 })
        .collect();
    let mut order: Vec<usize> = (0..class_count).filter(|&c| sizes[c] > 0).collect();
    // larger remainder first; ties go to the lower class id
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = counts.iter().sum();
    let mut i = 0;
    while assigned < z {
        counts[order[i % order.len()]] += 1;
        assigned += 1;
        i += 1;
    }
    // bumping small classes to 1 can overshoot; take back from the classes
    // with the smallest remainders
    let mut j = order.len();
    while assigned > z {
        j = if j == 0 { order.len() - 1 } else { j - 1 };
        let c = order[j];
        if counts[c] > 1 {
            counts[c] -= 1;
            assigned -= 1;
        }
    }
    Ok(counts)
}

fn class_members(ds: &Dataset) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); ds.class_count()];
    for (i, &l) in ds.labels().iter().enumerate() {
        members[l].push(i);
    }
    members
}

fn check_counts(ds: &Dataset, counts: &[usize], members: &[Vec<usize>]) -> Result<()> {
    if counts.len() != ds.class_count() {
        return Err(Error::InvalidArgument(format!(
            "{} per-class counts for {} classes",
            counts.len(),
            ds.class_count()
        )));
    }
    for (class, (&want, have)) in counts.iter().zip(members).enumerate() {
        if want > have.len() {
            return Err(Error::ClassTooSmall {
                class,
                available: have.len(),
                requested: want,
            });
        }
    }
    Ok(())
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Result of one k-means run.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centers: Array2<f64>,
    pub assignment: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded at
/// the point farthest from its current center.
pub fn kmeans(points: ArrayView2<'_, f64>, k: usize, rng: &mut impl Rng, max_iters: usize, tol: f64) -> Result<KMeansFit> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cannot fit {k} clusters to {n} points")));
    }
    if max_iters == 0 || tol <= 0.0 {
        return Err(Error::InvalidArgument("k-means needs max_iters >= 1 and tolerance > 0".into()));
    }
    let dim = points.ncols();

    let mut centers = Array2::zeros((k, dim));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&points.row(first));
    let mut nearest: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, centers.row(0))).collect();
    for c in 1..k {
        let next = match WeightedIndex::new(&nearest) {
            Ok(w) => w.sample(rng),
            // all remaining mass is zero: duplicates only, take any point
            Err(_) => rng.random_range(0..n),
        };
        centers.row_mut(c).assign(&points.row(next));
        for (i, p) in points.rows().into_iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(p, centers.row(c)));
        }
    }

    let mut assignment = vec![0usize; n];
    let mut dists = vec![0.0; n];
    let mut history = Vec::new();
    for _ in 0..max_iters {
        for (i, p) in points.rows().into_iter().enumerate() {
            let (best, d) = centers
                .rows()
                .into_iter()
                .map(|c| sq_dist(p, c))
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (j, d)| if d < acc.1 { (j, d) } else { acc });
            assignment[i] = best;
            dists[i] = d;
        }
        let inertia: f64 = dists.iter().sum();
        let converged = history
            .last()
            .is_some_and(|&prev: &f64| prev - inertia <= tol * prev.max(f64::MIN_POSITIVE));
        history.push(inertia);
        if converged {
            break;
        }

        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut sizes = vec![0usize; k];
        for (i, p) in points.rows().into_iter().enumerate() {
            sums.row_mut(assignment[i]).scaled_add(1.0, &p);
            sizes[assignment[i]] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                centers.row_mut(c).assign(&(&sums.row(c) / sizes[c] as f64));
            }
        }
        for c in 0..k {
            if sizes[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("n >= 1");
                centers.row_mut(c).assign(&points.row(far));
                dists[far] = 0.0;
            }
        }
    }
    Ok(KMeansFit {
        centers,
        assignment,
        inertia_history: history,
    })
}

/// Runs k-means separately inside each class; class `c` uses the seed
/// `seed + c`.
pub fn kmeans_per_class(ds: &Dataset, counts: &[usize], seed: u64, max_iters: usize, tol: f64) -> Result<ExemplarSet> {
    let members = class_members(ds);
    check_counts(ds, counts, &members)?;
    let z: usize = counts.iter().sum();
    let mut vectors = Array2::zeros((z, ds.feature_dim()));
    let mut labels = Vec::with_capacity(z);
    let mut row = 0;
    for (class, (&k, idx)) in counts.iter().zip(&members).enumerate() {
        if k == 0 {
            continue;
        }
        let points = ds.features().select(Axis(0), idx);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(class as u64));
        let fit = kmeans(points.view(), k, &mut rng, max_iters, tol)?;
        for center in fit.centers.rows() {
            vectors.row_mut(row).assign(&center);
            labels.push(class);
            row += 1;
        }
    }
    ExemplarSet::new(vectors, labels)
}

/// Draws `counts[c]` distinct points of each class `c`, kept in dataset order.
pub fn sample_random(ds: &Dataset, counts: &[usize], seed: u64) -> Result<ExemplarSet> {
    let members = class_members(ds);
    check_counts(ds, counts, &members)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    let mut labels = Vec::new();
    for (class, (&k, idx)) in counts.iter().zip(&members).enumerate() {
        let mut picks: Vec<usize> = rand::seq::index::sample(&mut rng, idx.len(), k)
            .into_iter()
            .map(|i| idx[i])
            .collect();
        picks.sort_unstable();
        labels.extend(std::iter::repeat_n(class, picks.len()));
        chosen.extend(picks);
    }
    ExemplarSet::new(ds.features().select(Axis(0), &chosen), labels)
}

/// Builds the initial exemplar set for `cfg` from (normalized) training data.
pub fn build_exemplars(ds: &Dataset, cfg: &ExemplarConfig) -> Result<ExemplarSet> {
    let counts = allocate_per_class(ds.labels(), ds.class_count(), cfg.z)?;
    match cfg.mode {
        ExemplarMode::KMeans | ExemplarMode::LearnedFromKMeans => {
            kmeans_per_class(ds, &counts, cfg.seed, cfg.max_iters, cfg.tolerance)
        }
        ExemplarMode::Random | ExemplarMode::LearnedFromRandom => sample_random(ds, &counts, cfg.seed),
    }
}
