//! Property tests over the data, exemplar and objective invariants.

use enhope::data::{load_csv, normalize, stratified_split, write_csv, Dataset, LabelColumn, NormMode};
use enhope::embedding::Embedding;
use enhope::exemplars::{kmeans, kmeans_per_class, ExemplarSet};
use enhope::objective::{exemplar_loss_embedded, minibatch_loss, ExemplarLossState, Normalization};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Features in a few magnitudes, and labels covering every class at least
/// twice.
fn dataset(max_n: usize, max_dim: usize) -> impl Strategy<Value = Dataset> {
    (2usize..=3, 1usize..=max_dim, 0usize..=max_n).prop_flat_map(|(classes, dim, extra)| {
        let n = 2 * classes + extra;
        (
            prop::collection::vec(-1e3f64..1e3, n * dim),
            prop::collection::vec(0..classes, extra),
            Just((classes, dim, n)),
        )
            .prop_map(|(vals, extra_labels, (classes, dim, n))| {
                let labels: Vec<usize> = (0..2 * classes).map(|i| i % classes).chain(extra_labels).collect();
                Dataset::new(Array2::from_shape_vec((n, dim), vals).unwrap(), labels, classes).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(ds in dataset(20, 5)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&ds, &path).unwrap();
        let back = load_csv(&path, &LabelColumn::Last, true).unwrap();
        prop_assert_eq!(back.features(), ds.features());
        for (a, b) in ds.labels().iter().zip(back.labels()) {
            prop_assert_eq!(&ds.class_names()[*a], &back.class_names()[*b]);
        }
    }

    #[test]
    fn normalization_inverts(ds in dataset(20, 5), zscore in any::<bool>()) {
        let mode = if zscore { NormMode::ZScore } else { NormMode::MinMax01 };
        let (norm, stats) = normalize(&ds, mode);
        let back = stats.invert(norm.features()).unwrap();
        for (a, b) in back.iter().zip(ds.features()) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        if mode == NormMode::MinMax01 {
            prop_assert!(norm.features().iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
        }
    }

    #[test]
    fn split_is_stratified_partition(ds in dataset(40, 2), frac in 0.05f64..0.95, seed in any::<u64>()) {
        let split = stratified_split(&ds, frac, seed).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.validation).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        for (class, &size) in ds.class_sizes().iter().enumerate() {
            let held = split.validation.iter().filter(|&&i| ds.labels()[i] == class).count();
            let expected = ((frac * size as f64).round() as usize).clamp(1, size - 1);
            prop_assert_eq!(held, expected);
        }
    }

    #[test]
    fn kmeans_inertia_never_increases(ds in dataset(40, 3), k in 1usize..5, seed in any::<u64>()) {
        let k = k.min(ds.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fit = kmeans(ds.features(), k, &mut rng, 50, 1e-12).unwrap();
        for w in fit.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-9, "{:?}", fit.inertia_history);
        }
    }

    #[test]
    fn kmeans_exemplars_stay_in_class_box(ds in dataset(30, 3), seed in any::<u64>()) {
        let counts: Vec<usize> = ds.class_sizes().iter().map(|&s| s.min(2)).collect();
        let ex = kmeans_per_class(&ds, &counts, seed, 50, 1e-6).unwrap();
        for (row, &l) in ex.vectors.rows().into_iter().zip(&ex.labels) {
            for (j, &v) in row.iter().enumerate() {
                let col: Vec<f64> = ds.labels().iter().zip(ds.features().column(j))
                    .filter(|(c, _)| **c == l).map(|(_, &x)| x).collect();
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn loss_is_translation_invariant(
        y in prop::collection::vec(-3.0f64..3.0, 12),
        ye in prop::collection::vec(-3.0f64..3.0, 4),
        shift in prop::collection::vec(-50.0f64..50.0, 2),
        per_row in any::<bool>(),
    ) {
        let norm = if per_row { Normalization::PerRow } else { Normalization::Global };
        let y = Array2::from_shape_vec((6, 2), y).unwrap();
        let ye = Array2::from_shape_vec((2, 2), ye).unwrap();
        let labels = [0, 1, 0, 1, 1, 0];
        let base = exemplar_loss_embedded(y.view(), &labels, ye.view(), &[0, 1], norm).unwrap().loss;
        let s = ndarray::arr1(&shift);
        let moved = exemplar_loss_embedded((&y + &s).view(), &labels, (&ye + &s).view(), &[0, 1], norm).unwrap().loss;
        prop_assert!((base - moved).abs() <= 1e-9 * base.abs().max(1.0));
    }

    #[test]
    fn minibatch_loss_ignores_batch_order(
        vals in prop::collection::vec(-1.0f64..1.0, 24),
        a in prop::collection::vec(-1.0f64..1.0, 6),
        perm_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let x = Array2::from_shape_vec((8, 3), vals).unwrap();
        let labels = [0, 1, 0, 1, 0, 1, 1, 0];
        let model = Embedding::linear(Array2::from_shape_vec((2, 3), a).unwrap()).unwrap();
        let ex = ExemplarSet::new(x.select(ndarray::Axis(0), &[0, 1]), vec![0, 1]).unwrap();
        let state = ExemplarLossState::learned(ex);
        let batch = vec![1, 2, 4, 5, 7];
        let mut shuffled = batch.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let l1 = minibatch_loss(&model, x.view(), &labels, &state, &batch).unwrap();
        let l2 = minibatch_loss(&model, x.view(), &labels, &state, &shuffled).unwrap();
        prop_assert!((l1.loss - l2.loss).abs() <= 1e-12 * l1.loss.abs().max(1.0));
        for (g1, g2) in l1.grad_params.iter().zip(&l2.grad_params) {
            prop_assert!((g1 - g2).abs() <= 1e-10 * g1.abs().max(1.0));
        }
    }
}

#[test]
fn linear_count_probe() {
    use enhope::objective::exemplar_loss;
    let model = Embedding::linear(Array2::from_elem((2, 3), 0.1)).unwrap();
    let ex = ExemplarSet::new(Array2::eye(3), vec![0, 1, 2]).unwrap();
    let state = ExemplarLossState::fixed(ex);
    let count = |n: usize| {
        let x = Array2::from_shape_fn((n, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        exemplar_loss(&model, x.view(), &labels, &state).unwrap().distance_evals
    };
    assert_eq!(count(2000), 2000 * 3);
    assert_eq!(count(4000), 2 * count(2000));
}
