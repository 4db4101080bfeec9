//! Property tests for the invariants the library promises.

use c2ae::data::{load_idx, save_idx, LabeledDataset};
use c2ae::eval::{auroc, open_f_measure, openness, OpennessSpec, ScoreDirection, Truth};
use c2ae::evt::{compute_threshold, fit_exceedances, gpd_cdf, gpd_log_likelihood};
use c2ae::infer::{batch_inference, k_inference, Decision};
use c2ae::nets::{argmax, condition_vector, read_checkpoint, write_checkpoint, NetworkDef, OpenSetModel};
use c2ae::tensor::{Activation, Tensor};
use c2ae::train::{ErrorSets, NonMatchSampler};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn lognormal_sets(seed: u64) -> ErrorSets {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = rng.random_range(0.3..1.5);
    let m = Normal::new(0.0, rng.random_range(0.2..0.5)).unwrap();
    let nm = Normal::new(gap, rng.random_range(0.2..0.5)).unwrap();
    ErrorSets {
        s_match: (0..300).map(|_| f64::exp(m.sample(&mut rng))).collect(),
        s_nonmatch: (0..300).map(|_| f64::exp(nm.sample(&mut rng))).collect(),
    }
}

fn small_model(seed: u64, k: usize) -> OpenSetModel {
    let def = NetworkDef::mlp(3, k, &[6], 4, Activation::Tanh);
    let mut model = OpenSetModel::new(def, seed).unwrap();
    model.threshold = Some(compute_threshold(&lognormal_sets(seed), 0.5).unwrap());
    model
}

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![
        Just(Activation::Sigmoid),
        Just(Activation::Tanh),
        (0.01..0.5f64).prop_map(|slope| Activation::LeakyRelu { slope }),
    ]
}

fn rows(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0..1.0f64, d), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gpd_cdf_is_a_monotone_probability(zeta in -0.9..1.5f64, mu in 0.05..5.0f64, a in 0.0..10.0f64, b in 0.0..10.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (f_lo, f_hi) = (gpd_cdf(lo, zeta, mu).unwrap(), gpd_cdf(hi, zeta, mu).unwrap());
        prop_assert!((0.0..=1.0).contains(&f_lo) && (0.0..=1.0).contains(&f_hi));
        prop_assert!(f_lo <= f_hi);
    }

    #[test]
    fn threshold_does_not_increase_with_the_unknown_prior(seed in 0u64..1000, a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let sets = lognormal_sets(seed);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let t_lo = compute_threshold(&sets, lo).unwrap();
        let t_hi = compute_threshold(&sets, hi).unwrap();
        prop_assert!(t_hi.tau_star <= t_lo.tau_star);
        prop_assert!(t_lo.search_lo <= t_lo.tau_star && t_lo.tau_star <= t_lo.search_hi);
    }

    #[test]
    fn fitted_tail_beats_random_parameters(seed in 0u64..1000, zeta in -0.3..0.6f64, mu in 0.2..3.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..400)
            .map(|_| {
                let u: f64 = rng.random();
                if zeta.abs() < 1e-12 { -mu * (1.0 - u).ln() } else { mu / zeta * ((1.0 - u).powf(-zeta) - 1.0) }
            })
            .collect();
        let (z_hat, m_hat) = fit_exceedances(&y).unwrap();
        let best = gpd_log_likelihood(&y, z_hat, m_hat);
        prop_assert!(best.is_finite());
        for _ in 0..100 {
            let (z, m) = (rng.random_range(-0.9..1.5), rng.random_range(0.05..6.0));
            prop_assert!(gpd_log_likelihood(&y, z, m) <= best + 1e-9 * best.abs().max(1.0));
        }
    }

    #[test]
    fn auroc_directions_are_complementary(
        known in prop::collection::vec(0u8..20, 1..80),
        unknown in prop::collection::vec(0u8..20, 1..80),
    ) {
        let k: Vec<f64> = known.iter().map(|&v| f64::from(v)).collect();
        let u: Vec<f64> = unknown.iter().map(|&v| f64::from(v)).collect();
        let up = auroc(&k, &u, ScoreDirection::HigherIsUnknown).unwrap();
        let down = auroc(&k, &u, ScoreDirection::HigherIsKnown).unwrap();
        prop_assert!((0.0..=1.0).contains(&up));
        prop_assert!((up + down - 1.0).abs() < 1e-12);
        // invariant under a strictly increasing transform
        let k2: Vec<f64> = k.iter().map(|v| (v * 0.3).exp()).collect();
        let u2: Vec<f64> = u.iter().map(|v| (v * 0.3).exp()).collect();
        prop_assert_eq!(auroc(&k2, &u2, ScoreDirection::HigherIsUnknown).unwrap(), up);
    }

    #[test]
    fn openness_grows_with_test_classes(n_train in 1usize..30, extra in 0usize..100, more in 1usize..100) {
        let o = |n_test| openness(OpennessSpec { n_train, n_test, n_target: n_train }).unwrap();
        let (a, b) = (o(n_train + extra), o(n_train + extra + more));
        prop_assert!((0.0..1.0).contains(&a));
        prop_assert!(a < b);
        prop_assert_eq!(o(n_train), 0.0);
    }

    #[test]
    fn f_measure_ignores_sample_order(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
        seed in any::<u64>(),
    ) {
        // class 3 stands for unknown on both sides
        let to_decision = |c: usize| if c == 3 { Decision::Unknown } else { Decision::Known(c) };
        let to_truth = |c: usize| if c == 3 { Truth::Unknown } else { Truth::Known(c) };
        let d: Vec<Decision> = pairs.iter().map(|p| to_decision(p.0)).collect();
        let t: Vec<Truth> = pairs.iter().map(|p| to_truth(p.1)).collect();
        let mut idx: Vec<usize> = (0..pairs.len()).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let d2: Vec<Decision> = idx.iter().map(|&i| d[i]).collect();
        let t2: Vec<Truth> = idx.iter().map(|&i| t[i]).collect();
        let f = open_f_measure(&d, &t, 3).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f, open_f_measure(&d2, &t2, 3).unwrap());
    }

    #[test]
    fn condition_vector_has_one_positive_entry(k in 1usize..40, j in 0usize..40) {
        prop_assume!(j < k);
        let l = condition_vector(j, k).unwrap();
        prop_assert_eq!(l.values().len(), k);
        prop_assert_eq!(l.class_index(), j);
        for (i, &v) in l.values().iter().enumerate() {
            prop_assert_eq!(v, if i == j { 1.0 } else { -1.0 });
        }
        prop_assert!(condition_vector(k, k).is_err());
    }

    #[test]
    fn argmax_ignores_constant_shifts(row in prop::collection::vec(-50i32..50, 1..20), shift in -1000i32..1000) {
        let a: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
        let b: Vec<f64> = row.iter().map(|&v| f64::from(v + shift)).collect();
        let i = argmax(&a);
        prop_assert_eq!(i, argmax(&b));
        prop_assert!(a.iter().all(|&v| v <= a[i]));
        prop_assert!(a[..i].iter().all(|&v| v < a[i]));
    }

    #[test]
    fn nonmatch_targets_come_from_other_classes(labels in prop::collection::vec(0usize..4, 4..40), seed in any::<u64>()) {
        let mut labels = labels;
        labels.extend([0, 1, 2, 3]);
        let data = LabeledDataset::new(vec![0.0; labels.len()], 1, labels.clone(), 4).unwrap();
        let sampler = NonMatchSampler::new(&data).unwrap();
        let batch = sampler.sample(&labels, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for (i, &y) in labels.iter().enumerate() {
            prop_assert_ne!(batch.labels[i], y);
            prop_assert_ne!(labels[batch.targets[i]], y);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn checkpoint_restores_the_model(
        seed in any::<u64>(),
        k in 2usize..5,
        hidden in prop::collection::vec(1usize..12, 0..3),
        latent in 1usize..8,
        act in activation(),
        fitted in any::<bool>(),
    ) {
        let mut model = OpenSetModel::new(NetworkDef::mlp(3, k, &hidden, latent, act), seed).unwrap();
        if fitted {
            model.threshold = Some(compute_threshold(&lognormal_sets(seed % 1000), 0.3).unwrap());
        }
        // weights are stored as f32, so exactness starts after one trip
        let bytes = write_checkpoint(&model).unwrap();
        let once = read_checkpoint(&bytes).unwrap();
        let twice = read_checkpoint(&write_checkpoint(&once).unwrap()).unwrap();
        prop_assert_eq!(&twice, &once);
        prop_assert_eq!(write_checkpoint(&once).unwrap(), bytes);
        prop_assert_eq!(&once.def, &model.def);
        prop_assert_eq!(&once.threshold, &model.threshold);
        for ((name, a), (_, b)) in once.named_params().into_iter().zip(model.named_params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert_eq!(*x, f64::from(*y as f32), "{}", name);
            }
        }
    }

    #[test]
    fn idx_files_round_trip(pixels in prop::collection::vec(any::<u8>(), 12..=120), k in 1usize..10) {
        let n = pixels.len() / 12;
        let features: Vec<f64> = pixels[..n * 12].iter().map(|&p| f64::from(p) / 127.5 - 1.0).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let data = LabeledDataset::new(features, 12, labels, k.min(n)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        save_idx(&data, 3, 4, &img, &lab).unwrap();
        prop_assert_eq!(load_idx(&img, &lab).unwrap(), data);
    }

    #[test]
    fn batch_inference_matches_single_samples(seed in 0u64..1000, x in rows(7, 3), perm_seed in any::<u64>()) {
        let model = small_model(seed, 3);
        let batch = batch_inference(&model, &Tensor::from_rows(&x).unwrap()).unwrap();
        for (row, pred) in x.iter().zip(&batch) {
            prop_assert_eq!(&k_inference(&model, row).unwrap(), pred);
        }
        let mut idx: Vec<usize> = (0..x.len()).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(perm_seed));
        let shuffled: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
        let again = batch_inference(&model, &Tensor::from_rows(&shuffled).unwrap()).unwrap();
        for (j, &i) in idx.iter().enumerate() {
            prop_assert_eq!(&again[j], &batch[i]);
        }
    }
}
