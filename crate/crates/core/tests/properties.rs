mod common;

use angleshrink::angle::{angle_between, angle_of_child, AngleOptions};
use angleshrink::evalstats::{kendalls_tau, tau_a};
use angleshrink::graph::{decode_choices, encode_choices, toy_space, OperatorId, SupernetGraph};
use angleshrink::nnet::data::{DataConfig, ToyDataset};
use angleshrink::shrink::{select_removals, OperatorScore};
use angleshrink::supernet::{init_supernet, InitPolicy, WeightSet};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn paths_match_dfs(seed in any::<u64>(), n in 2usize..=8, density in 0.1f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = common::random_dag(&mut rng, n, 4, density);
        if let Some(child) = common::random_child(&mut rng, &space) {
            let got: Vec<(Vec<usize>, Vec<usize>)> = space
                .enumerate_paths(&child)
                .unwrap()
                .into_iter()
                .map(|p| (space.path_nodes(&p), p.edges))
                .collect();
            prop_assert_eq!(got.len() as u128, space.count_paths(&child));
            prop_assert_eq!(got, common::dfs_paths(&space, &child));
        }
    }

    #[test]
    fn sampled_children_are_connected(seed in any::<u64>(), n in 2usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = common::random_dag(&mut rng, n, 4, 0.5);
        if let Some(child) = common::random_child(&mut rng, &space) {
            prop_assert!(space.count_paths(&child) >= 1);
            prop_assert!(space.child(child.choices().to_vec()).is_ok());
            for e in 0..space.edges().len() {
                prop_assert!(!child.is_on_path(e) || child.is_present(e));
            }
        }
    }

    #[test]
    fn choices_encoding_round_trips(choices in prop::collection::vec(0usize..20, 1..10)) {
        prop_assert_eq!(decode_choices(&encode_choices(&choices)), Some(choices));
    }

    #[test]
    fn angle_is_bounded_and_symmetric(a in finite_vec(12), b in finite_vec(12)) {
        prop_assume!(a.iter().any(|v| *v != 0.0) && b.iter().any(|v| *v != 0.0));
        let ab = angle_between(&a, &b).unwrap().radians();
        let ba = angle_between(&b, &a).unwrap().radians();
        prop_assert!((0.0..=std::f64::consts::PI).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert_eq!(angle_between(&a, &a).unwrap().radians(), 0.0);
    }

    #[test]
    fn angle_ignores_positive_scale(a in finite_vec(9), b in finite_vec(9), c in 1e-3f64..1e3) {
        prop_assume!(a.iter().any(|v| *v != 0.0) && b.iter().any(|v| *v != 0.0));
        let scaled: Vec<f64> = b.iter().map(|v| v * c).collect();
        let d = angle_between(&a, &b).unwrap().radians() - angle_between(&a, &scaled).unwrap().radians();
        prop_assert!(d.abs() < 1e-9);
    }

    #[test]
    fn tau_matches_pair_counting(seed in any::<u64>(), n in 2usize..50, ties in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = if ties { 4.0 } else { 1e9 };
        let x: Vec<f64> = (0..n).map(|_| (rand::Rng::random::<f64>(&mut rng) * levels).floor()).collect();
        let y: Vec<f64> = (0..n).map(|_| (rand::Rng::random::<f64>(&mut rng) * levels).floor()).collect();
        let t = tau_a(&x, &y).unwrap();
        prop_assert!((t - common::brute_tau(&x, &y)).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&t));
    }

    #[test]
    fn tau_of_permutations(seed in any::<u64>(), n in 2usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a: Vec<usize> = (0..n).collect();
        a.shuffle(&mut rng);
        let rev: Vec<usize> = a.iter().map(|&r| n - 1 - r).collect();
        prop_assert_eq!(kendalls_tau(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(kendalls_tau(&a, &rev).unwrap(), -1.0);
    }

    #[test]
    fn tau_ignores_monotone_transforms(x in finite_vec(20), y in finite_vec(20)) {
        let t = tau_a(&x, &y).unwrap();
        let fx: Vec<f64> = x.iter().map(|v| (v / 3.0).exp() * 2.0 - 1.0).collect();
        let fy: Vec<f64> = y.iter().map(|v| v.powi(3) + 5.0).collect();
        prop_assert!((tau_a(&fx, &fy).unwrap() - t).abs() < 1e-12);
    }

    #[test]
    fn removal_keeps_connectivity(seed in any::<u64>(), k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut space = toy_space(9);
        for _ in 0..4 {
            let scores: Vec<OperatorScore> = space
                .operators()
                .map(|(op, _)| OperatorScore::from_samples(op, &[rand::Rng::random_range(&mut rng, 0..3) as f64]))
                .collect();
            let Ok(r) = select_removals(&space, &scores, k) else { break };
            prop_assert_eq!(r.removed.len() + r.shortfall, k);
            prop_assert!(r.space.edges().iter().all(|e| !e.ops.is_empty()));
            prop_assert!(r.space.has_parametric_path());
            prop_assert!(r.space.space_size() < space.space_size());
            prop_assert!(r.space.is_subspace_of(&space));
            // same inputs, same decision
            prop_assert_eq!(&select_removals(&space, &scores, k).unwrap(), &r);
            space = r.space;
        }
    }

    #[test]
    fn untrained_angles_are_zero(seed in any::<u64>()) {
        let space = toy_space(9);
        let store = init_supernet(&space, 2, 4, InitPolicy::KaimingNormal, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let child = space.sample_child(&mut rng, Some(OperatorId::new(0, 2))).unwrap();
        let a = angle_of_child(&space, &child, &store, WeightSet::Init, AngleOptions::default()).unwrap();
        prop_assert_eq!(a.radians(), 0.0);
    }

    #[test]
    fn dataset_bytes_round_trip(seed in any::<u64>(), rows in 4usize..40) {
        let cfg = DataConfig { train_size: rows, validation_size: rows, seed, ..DataConfig::default() };
        let (train, _) = cfg.generate().unwrap();
        prop_assert_eq!(ToyDataset::from_bytes(&train.to_bytes()).unwrap(), train);
    }

    #[test]
    fn space_file_round_trips(seed in any::<u64>(), n in 2usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = common::random_dag(&mut rng, n, 4, 0.5);
        let text = serde_json::to_string(&space.to_file()).unwrap();
        let back = SupernetGraph::from_file(serde_json::from_str(&text).unwrap()).unwrap();
        prop_assert_eq!(back.hash(), space.hash());
        prop_assert_eq!(back, space);
    }
}
