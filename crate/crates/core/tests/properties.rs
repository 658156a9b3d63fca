//! Property tests for invariants that span the public API.

use std::collections::BTreeSet;

use iloco::learners::{error, fit};
use iloco::occlusion::EstimatorTag;
use iloco::tabular::{read_csv, split};
use iloco::{
    ci_normal, fit_split, iloco_samples, Dataset, FeatureSet, InteractionScoreSamples, LearnerSpec,
    OcclusionPredictor, Result, RngStream, Task,
};
use proptest::prelude::*;
use rand::Rng;

fn gaussian_data(n: usize, m: usize, seed: u64, task: Task) -> Dataset {
    let mut rng = RngStream::new(seed).rng();
    let x: Vec<f64> = (0..n * m).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let s = x[i * m] + x[i * m + 1] * x[i * m + 2 % m] + rng.random_range(-0.5..0.5);
            match task {
                Task::Regression => s,
                Task::Classification => f64::from(s > 0.0),
            }
        })
        .collect();
    Dataset::from_rows(x, m, y, task).unwrap()
}

fn arb_task() -> impl Strategy<Value = Task> {
    prop_oneof![Just(Task::Regression), Just(Task::Classification)]
}

/// Predictions are fixed tables: full predictions per row and one
/// reduced prediction per (row, excluded-set mask).
#[derive(Debug)]
struct Table {
    y: Vec<f64>,
    full: Vec<f64>,
    reduced: Vec<Vec<f64>>,
    task: Task,
}

impl OcclusionPredictor for Table {
    fn eval_count(&self) -> usize {
        self.y.len()
    }
    fn label(&self, i: usize) -> f64 {
        self.y[i]
    }
    fn task(&self) -> Task {
        self.task
    }
    fn max_order(&self) -> usize {
        3
    }
    fn estimator_tag(&self) -> EstimatorTag {
        EstimatorTag::Split
    }
    fn predict_full(&self, i: usize) -> Result<f64> {
        Ok(self.full[i])
    }
    fn predict_excluding(&self, i: usize, t: &FeatureSet) -> Result<f64> {
        let mask: usize = t.indices().iter().map(|&j| 1 << j).sum();
        Ok(self.reduced[i][mask])
    }
}

fn arb_table() -> impl Strategy<Value = Table> {
    (1usize..20, arb_task()).prop_flat_map(|(n, task)| {
        (
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, 64), n),
        )
            .prop_map(move |(y, full, reduced)| Table {
                y: y.into_iter()
                    .map(|v| {
                        if task == Task::Classification {
                            v.round()
                        } else {
                            v
                        }
                    })
                    .collect(),
                full,
                reduced,
                task,
            })
    })
}

/// Every non-empty subset of every target, plus the empty set, by bitmask.
fn subset_closure(targets: &[FeatureSet]) -> BTreeSet<Vec<usize>> {
    let mut out = BTreeSet::new();
    out.insert(Vec::new());
    for t in targets {
        let idx = t.indices();
        for mask in 1u32..(1 << idx.len()) {
            let sub: Vec<usize> = (0..idx.len())
                .filter(|b| mask >> b & 1 == 1)
                .map(|b| idx[b])
                .collect();
            out.insert(sub);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_round_trip_is_bit_identical(
        rows in 2usize..12,
        cols in 2usize..5,
        task in arb_task(),
        seed in any::<u64>(),
    ) {
        let mut rng = RngStream::new(seed).rng();
        let x: Vec<f64> = (0..rows * cols)
            .map(|_| f64::from_bits(rng.random::<u64>() >> 2) * if rng.random() { -1.0 } else { 1.0 })
            .map(|v| if v.is_finite() { v } else { 0.0 })
            .collect();
        let y: Vec<f64> = (0..rows)
            .map(|i| match task {
                Task::Regression => rng.random_range(-1e6..1e6),
                Task::Classification => (i % 2) as f64,
            })
            .collect();
        let data = Dataset::from_rows(x, cols, y, task).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), data.target_name(), task, false).unwrap();
        prop_assert_eq!(back.x().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        data.x().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back.y(), data.y());
        prop_assert_eq!(back.feature_names(), data.feature_names());
    }

    #[test]
    fn one_hot_blocks_sum_to_one(levels in prop::collection::vec(0usize..4, 2..30)) {
        let mut text = String::from("a,colour,y\n");
        for (i, l) in levels.iter().enumerate() {
            text.push_str(&format!("{}.5,{},{}\n", i, ["red", "green", "blue", "teal"][*l], i % 3));
        }
        let data = read_csv(text.as_bytes(), "y", Task::Regression, true).unwrap();
        let names = data.feature_names();
        let block: Vec<usize> = (0..names.len()).filter(|&j| names[j] != "a").collect();
        let distinct: BTreeSet<usize> = levels.iter().copied().collect();
        prop_assert_eq!(block.len(), distinct.len());
        for i in 0..data.n_rows() {
            let s: f64 = block.iter().map(|&j| data.get(i, j)).sum();
            prop_assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn split_is_a_function_of_seed(n in 4usize..60, frac in 0.1f64..0.6, seed in any::<u64>()) {
        let data = gaussian_data(n, 3, 1, Task::Regression);
        let a = split(&data, frac, RngStream::new(seed));
        let b = split(&data, frac, RngStream::new(seed));
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(&a.train_rows, &b.train_rows);
                prop_assert_eq!(&a.test_rows, &b.test_rows);
                prop_assert_eq!(a.train.x(), b.train.x());
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "split outcome depends on more than the seed"),
        }
    }

    #[test]
    fn classification_error_is_one_lipschitz(y in 0u8..2, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let y = f64::from(y);
        let d = (error(Task::Classification, y, a) - error(Task::Classification, y, b)).abs();
        prop_assert!(d <= (a - b).abs() + 1e-15);
    }

    #[test]
    fn fitting_is_deterministic(seed in any::<u64>(), task in arb_task(), which in 0usize..4) {
        let data = gaussian_data(40, 4, seed, task);
        let spec = [LearnerSpec::cart(), LearnerSpec::ridge(), LearnerSpec::kernel_ridge(), LearnerSpec::knn()][which];
        let rows: Vec<usize> = (0..30).collect();
        let cols = [0, 2, 3];
        let m1 = fit(&spec, &data, &rows, &cols).unwrap();
        let m2 = fit(&spec, &data, &rows, &cols).unwrap();
        for i in 0..data.n_rows() {
            prop_assert_eq!(m1.predict(data.row(i)).to_bits(), m2.predict(data.row(i)).to_bits());
        }
    }

    #[test]
    fn tree_training_error_does_not_grow_with_depth(seed in any::<u64>(), task in arb_task(), min_leaf in 1usize..6) {
        let data = gaussian_data(60, 3, seed, task);
        let rows: Vec<usize> = (0..data.n_rows()).collect();
        let cols = [0, 1, 2];
        let mut last = f64::INFINITY;
        for depth in 0..8 {
            let spec = LearnerSpec::CartTree { max_depth: depth, min_leaf };
            let model = fit(&spec, &data, &rows, &cols).unwrap();
            let sse: f64 = rows.iter().map(|&i| (data.y()[i] - model.predict(data.row(i))).powi(2)).sum();
            prop_assert!(sse <= last + 1e-9, "depth {depth}: {sse} > {last}");
            last = sse;
        }
    }

    #[test]
    fn pair_scores_are_symmetric(table in arb_table(), j in 0usize..6, k in 0usize..6) {
        prop_assume!(j != k);
        let a = iloco_samples(&table, &FeatureSet::new([j, k])).unwrap();
        let b = iloco_samples(&table, &FeatureSet::new([k, j])).unwrap();
        prop_assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn intervals_nest_and_scale(
        scores in prop::collection::vec(-5.0f64..5.0, 2..200),
        alpha in 0.01f64..0.5,
        m1 in 1usize..50,
        extra in 1usize..50,
    ) {
        let s = InteractionScoreSamples {
            feature_set: FeatureSet::pair(0, 1),
            scores,
            estimator: EstimatorTag::Split,
        };
        let narrow = ci_normal(&s, alpha, m1).unwrap();
        let wide = ci_normal(&s, alpha, m1 + extra).unwrap();
        prop_assert!(wide.ci_lo <= narrow.ci_lo && narrow.ci_hi <= wide.ci_hi);
        let z = iloco::inference::critical_value(alpha / m1 as f64);
        let expect = 2.0 * z * narrow.sd / (narrow.n_eval as f64).sqrt();
        prop_assert!((narrow.width() - expect).abs() <= 1e-12 * (1.0 + expect));
    }

    #[test]
    fn split_model_count_law(
        raw in prop::collection::vec(prop::collection::btree_set(0usize..6, 2..4), 1..5),
        seed in any::<u64>(),
    ) {
        let targets: Vec<FeatureSet> = raw.iter().map(|s| FeatureSet::new(s.iter().copied())).collect();
        let data = gaussian_data(30, 6, seed, Task::Regression);
        let fit = fit_split(split(&data, 0.5, RngStream::new(seed)).unwrap(), &LearnerSpec::ridge(), &targets).unwrap();
        prop_assert_eq!(fit.model_count(), subset_closure(&targets).len());
    }

    #[test]
    fn excluded_columns_are_invisible(seed in any::<u64>(), j in 0usize..5, k in 0usize..5, bump in -10.0f64..10.0) {
        prop_assume!(j != k);
        let set = FeatureSet::pair(j, k);
        let data = gaussian_data(40, 5, seed, Task::Regression);
        let fit = fit_split(split(&data, 0.5, RngStream::new(seed)).unwrap(), &LearnerSpec::cart(), std::slice::from_ref(&set)).unwrap();
        for t in [FeatureSet::new([j]), set] {
            let model = fit.model(&t).unwrap();
            for i in 0..data.n_rows() {
                let mut row = data.row(i).to_vec();
                let before = model.predict(&row);
                row[j] += bump;
                prop_assert_eq!(before.to_bits(), model.predict(&row).to_bits());
            }
        }
    }
}
