mod common;

use c2ae::nets::OpenSetModel;
use c2ae::tensor::Tensor;
use c2ae::train::{stage1_gradients, stage2_gradients, Stage2Batch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn oracle_losses_match_library_losses() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let def = common::random_network(&mut rng);
        let mut model = OpenSetModel::new(def.clone(), seed).unwrap();
        let rows = 4;
        let x: Vec<f64> = (0..rows * def.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..rows).map(|i| i % def.k).collect();
        let xt = Tensor::new(vec![rows, def.input_dim], x.clone()).unwrap();
        let mut m = f64::INFINITY;
        let oracle1 = common::stage1_loss(&model, &x, &labels, &mut m);
        let lib1 = stage1_gradients(&mut model, &xt, &labels).unwrap();
        assert!((oracle1 - lib1).abs() <= 1e-12 * oracle1.abs().max(1.0), "seed {seed}: {oracle1} vs {lib1}");

        let batch = Stage2Batch {
            z: model.encode(&xt).unwrap(),
            x: xt.clone(),
            labels: labels.clone(),
            nonmatch_labels: labels.iter().map(|&y| (y + 1) % def.k).collect(),
            x_nonmatch: xt.clone(),
        };
        let oracle2 = common::stage2_loss(&model, &batch, 0.7, &mut m);
        let lib2 = stage2_gradients(&mut model, &batch, 0.7).unwrap().total;
        assert!((oracle2 - lib2).abs() <= 1e-12 * oracle2.abs().max(1.0), "seed {seed}: {oracle2} vs {lib2}");
    }
}

#[test]
fn finite_differences_on_a_few_networks() {
    for seed in 100..105 {
        let r = common::check_random_network(seed);
        assert!(r.entries > 0);
        assert!(r.max_rel_error < 1e-6, "seed {seed}: {r:?}");
    }
}
