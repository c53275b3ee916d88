use std::sync::Arc;

use proptest::prelude::*;

use e2lshos::builder::params_for;
use e2lshos::dataset::{load_dataset, write_dataset, Dataset, FileFormat};
use e2lshos::engine::MemoryIndex;
use e2lshos::eval::{brute_force_topk, generate_synthetic, ground_truth, mean_ratio, overall_ratio, SyntheticKind};
use e2lshos::lsh::collision_probability;

fn small_dataset() -> impl Strategy<Value = Dataset> {
    (1usize..40, 1usize..12).prop_flat_map(|(n, d)| {
        prop::collection::vec(-1e3f32..1e3, n * d).prop_map(move |v| {
            Dataset::from_rows(&v.chunks(d).map(<[f32]>::to_vec).collect::<Vec<_>>()).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dataset_files_round_trip(ds in small_dataset(), raw in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let (name, format) = if raw { ("x.f32", FileFormat::F32Raw) } else { ("x.fvecs", FileFormat::Fvecs) };
        let path = dir.path().join(name);
        write_dataset(&path, &ds, format).unwrap();
        let back = load_dataset(&path, format).unwrap();
        prop_assert_eq!(back.as_slice(), ds.as_slice());
        prop_assert_eq!(back.checksum(), ds.checksum());
    }

    #[test]
    fn ratio_never_below_one(seed in 0u64..1000, k in 1usize..20) {
        let (data, queries) = generate_synthetic(SyntheticKind::Uniform, 600, 6, 10, seed);
        let data = Arc::new(data);
        let params = params_for(&data, 2.0, 4.0, 1.0, None, seed).unwrap();
        let ix = MemoryIndex::new(Arc::clone(&data), params);
        let truth = ground_truth(&data, &queries, k);
        for (q, t) in queries.rows().zip(&truth) {
            let r = ix.query(q, k);
            let ratio = overall_ratio(&r.neighbors, t, k, 100.0);
            if ratio.terms > 0 {
                prop_assert!(ratio.value >= 1.0 - 1e-6, "ratio {}", ratio.value);
            }
        }
    }

    #[test]
    fn ground_truth_ignores_row_order(ds in small_dataset(), seed in any::<u64>(), k in 1usize..10) {
        let q = ds.row(0).iter().map(|x| x + 0.5).collect::<Vec<_>>();
        let mut order: Vec<usize> = (0..ds.n()).collect();
        let mut s = seed | 1;
        for i in (1..order.len()).rev() {
            s ^= s << 13; s ^= s >> 7; s ^= s << 17;
            order.swap(i, (s % (i as u64 + 1)) as usize);
        }
        let shuffled = ds.select(&order);
        let a: Vec<f32> = brute_force_topk(&ds, &q, k).iter().map(|n| n.distance).collect();
        let b: Vec<f32> = brute_force_topk(&shuffled, &q, k).iter().map(|n| n.distance).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn collision_probability_decreases_with_distance(w in 0.1f64..20.0, s in 0.01f64..50.0, ds in 0.001f64..10.0) {
        let near = collision_probability(s, w).unwrap();
        let far = collision_probability(s + ds, w).unwrap();
        prop_assert!(far <= near);
        prop_assert!((0.0..=1.0).contains(&far));
    }

    #[test]
    fn collision_probability_increases_with_width(s in 0.01f64..50.0, w in 0.1f64..20.0, dw in 0.001f64..10.0) {
        prop_assert!(collision_probability(s, w + dw).unwrap() >= collision_probability(s, w).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    // Lower gamma with the cap scaled to match buys accuracy with more probes.
    #[test]
    fn lower_gamma_does_not_hurt_accuracy(seed in 0u64..10_000) {
        let (data, queries) = generate_synthetic(SyntheticKind::Uniform, 4000, 12, 60, seed);
        let data = Arc::new(data);
        let truth = ground_truth(&data, &queries, 10);
        let ratio = |gamma: f64| {
            let params = params_for(&data, 2.0, 4.0, gamma, None, seed).unwrap().with_compensated_cap();
            let results: Vec<_> = MemoryIndex::new(Arc::clone(&data), params)
                .query_batch(&queries, 10)
                .into_iter()
                .map(|r| r.neighbors)
                .collect();
            mean_ratio(&results, &truth, 10).0
        };
        let (loose, strict) = (ratio(0.6), ratio(1.0));
        prop_assert!(loose <= strict + 0.005, "gamma 0.6 -> {loose}, gamma 1.0 -> {strict}");
    }
}
