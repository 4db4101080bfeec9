//! Analytic gradients of both training losses against central
//! differences of the same losses, on a small random model.

use c2ae::nets::{NetworkDef, OpenSetModel};
use c2ae::tensor::{Activation, Tensor};
use c2ae::train::{stage1_gradients, stage2_gradients, Stage2Batch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-4;
const ALPHA: f64 = 0.7;

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn main() -> c2ae::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = 3;
    let mut model = OpenSetModel::new(NetworkDef::mlp(4, k, &[6], 3, Activation::Tanh), 5)?;
    let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let x = Tensor::from_rows(&rows)?;
    let labels: Vec<usize> = (0..5).map(|i| i % k).collect();
    let nonmatch_labels: Vec<usize> = labels.iter().map(|&y| (y + 1) % k).collect();

    let n_stage1 = model.encoder.params().len() + model.classifier.params().len();
    stage1_gradients(&mut model, &x, &labels)?;
    let batch = Stage2Batch {
        z: model.encode(&x)?,
        x: x.clone(),
        labels: labels.clone(),
        nonmatch_labels,
        // the next row always carries a different label
        x_nonmatch: Tensor::from_rows(&(0..rows.len()).map(|i| rows[(i + 1) % rows.len()].clone()).collect::<Vec<_>>())?,
    };
    stage2_gradients(&mut model, &batch, ALPHA)?;
    let analytic: Vec<Vec<f64>> = model
        .params_mut()
        .iter()
        .map(|t| t.grad().map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let mut worst = [0.0f64; 2];
    for (p, grad) in analytic.iter().enumerate() {
        let stage = usize::from(p >= n_stage1);
        for (i, &a) in grad.iter().enumerate() {
            let mut loss_at = |delta: f64| -> c2ae::Result<f64> {
                let orig = model.params_mut()[p].data()[i];
                model.params_mut()[p].data_mut()[i] = orig + delta;
                let l = if stage == 0 {
                    stage1_gradients(&mut model, &x, &labels)?
                } else {
                    stage2_gradients(&mut model, &batch, ALPHA)?.total
                };
                model.params_mut()[p].data_mut()[i] = orig;
                Ok(l)
            };
            let numeric = (loss_at(STEP)? - loss_at(-STEP)?) / (2.0 * STEP);
            worst[stage] = worst[stage].max(rel(a, numeric));
        }
    }
    println!("max relative error, classification loss:  {:.3e}", worst[0]);
    println!("max relative error, reconstruction loss:  {:.3e}", worst[1]);
    Ok(())
}
