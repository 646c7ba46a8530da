use proptest::prelude::*;
use shapool::attack::{lira_offline, GaussianModel};
use shapool::data::{balanced_halves, build_mapping, gen_blobs, load_dataset_csv, save_dataset_csv};
use shapool::metrics::bhattacharyya;
use shapool::nn::{cosine_lr, Matrix};
use shapool::pool::{PoolArchitecture, ShadowPool};
use shapool::rng::RandomSource;
use shapool::shadow::{augment_model, train_independent, MaskScope, MaskSpec, ModelTrainConfig, RunCost};

fn small_arch(experts: usize, layers: usize) -> PoolArchitecture {
    PoolArchitecture {
        input_dim: 3,
        stem: vec![4],
        expert: vec![4],
        layers,
        experts,
        head: vec![3],
        classes: 2,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mapping_partitions_the_ids(n in 30usize..300, experts in 2usize..4, layers in 1usize..4, seed in any::<u64>()) {
        let k = experts.pow(layers as u32);
        prop_assume!(n >= k);
        let ids: Vec<u64> = (0..n as u64).map(|i| i * 7 + 3).collect();
        let map = build_mapping(&ids, experts, layers, &mut RandomSource::new(seed).stream("m")).unwrap();
        let subsets = map.subsets();
        prop_assert_eq!(subsets.len(), k);
        let sizes: Vec<usize> = subsets.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all = subsets.concat();
        all.sort_unstable();
        prop_assert_eq!(all, ids);
    }

    #[test]
    fn extracted_pathway_matches_pool_forward(seed in any::<u64>(), index in 0usize..27) {
        let pool = ShadowPool::new(small_arch(3, 3), &mut RandomSource::new(seed).stream("init")).unwrap();
        let p = pool.pathway(index).unwrap();
        let x = gen_blobs(seed, 4, 2, 3, 1.0).unwrap().features;
        let via_pool = pool.pathway_forward(&p, &x).unwrap();
        let net = pool.extract(&p).unwrap();
        prop_assert_eq!(net.logits(&x).unwrap(), via_pool.logits);
        prop_assert_eq!(net.predict_proba(&x).unwrap(), via_pool.probs);
    }

    #[test]
    fn same_seed_same_stream(seed in any::<u64>(), label in "[a-z]{1,8}") {
        use rand::Rng as _;
        let a: Vec<u64> = (0..8).map({ let mut r = RandomSource::new(seed).stream(&label); move |_| r.random() }).collect();
        let b: Vec<u64> = (0..8).map({ let mut r = RandomSource::new(seed).stream(&label); move |_| r.random() }).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn balanced_halves_put_each_id_in_half(k in 2usize..10, seed in any::<u64>()) {
        let ids: Vec<u64> = (0..50).collect();
        let subsets = balanced_halves(&ids, k, &mut RandomSource::new(seed).stream("h"));
        for id in ids {
            prop_assert_eq!(subsets.iter().filter(|s| s.contains(&id)).count(), k / 2);
        }
    }

    #[test]
    fn cosine_schedule_never_increases(base in 1e-4f64..1.0, total in 1usize..500) {
        let mut prev = f64::INFINITY;
        for step in 0..=total {
            let lr = cosine_lr(base, step, total).unwrap();
            prop_assert!(lr <= prev + 1e-15);
            prop_assert!(lr >= 0.0);
            prev = lr;
        }
    }

    #[test]
    fn offline_score_increases_with_target(outs in prop::collection::vec(-5.0f64..5.0, 2..20), a in -10.0f64..10.0, gap in 1e-3f64..5.0) {
        let lo = lira_offline(&outs, a).unwrap();
        let hi = lira_offline(&outs, a + gap).unwrap();
        prop_assert!(hi > lo || (hi == 1.0 && lo == 1.0));
    }

    #[test]
    fn overlap_is_symmetric_and_bounded(m1 in -5.0f64..5.0, s1 in 0.01f64..5.0, m2 in -5.0f64..5.0, s2 in 0.01f64..5.0) {
        let g1 = GaussianModel::new(m1, s1).unwrap();
        let g2 = GaussianModel::new(m2, s2).unwrap();
        let ab = bhattacharyya(&g1, &g2);
        prop_assert!((ab - bhattacharyya(&g2, &g1)).abs() < 1e-12);
        prop_assert!(ab > 0.0 && ab <= 1.0 + 1e-12);
    }

    #[test]
    fn csv_round_trip(seed in any::<u64>(), dim in 1usize..5) {
        let data = gen_blobs(seed, 3, 3, dim, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_dataset_csv(&data, &path).unwrap();
        prop_assert_eq!(load_dataset_csv(&path, Some(3)).unwrap(), data);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn masking_leaves_the_base_alone(seed in any::<u64>(), p in 0.0f64..0.9) {
        let data = gen_blobs(1, 10, 2, 3, 0.5).unwrap();
        let cfg = ModelTrainConfig { epochs: 1, ..ModelTrainConfig::default() };
        let base = train_independent(&data, &small_arch(2, 1), &cfg, 1, &mut RunCost::default()).unwrap();
        let snapshot = base.clone();
        let a = augment_model(&base, &MaskSpec { scope: MaskScope::ConvAnalog, p, seed }).unwrap();
        let b = augment_model(&base, &MaskSpec { scope: MaskScope::ConvAnalog, p, seed: seed.wrapping_add(1) }).unwrap();
        prop_assert_eq!(&base, &snapshot);
        prop_assert_eq!(a.arch, base.arch.clone());
        let zero = augment_model(&base, &MaskSpec { scope: MaskScope::Fc, p: 0.0, seed }).unwrap();
        prop_assert_eq!(zero.net, base.net.clone());
        drop(b);
    }
}

#[test]
fn probabilities_are_valid_rows() {
    let pool = ShadowPool::new(small_arch(2, 2), &mut RandomSource::new(0).stream("init")).unwrap();
    let x = Matrix::from_rows(&[vec![1e3, -1e3, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
    let out = pool.pathway_forward(&pool.pathway(1).unwrap(), &x).unwrap();
    for row in out.probs.iter_rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
