//! Oracles shared by the integration tests. Nothing here calls into the
//! library's forward or backward code paths.

#![allow(dead_code)]

use c2ae::nets::{Mlp, MlpDef, NetworkDef, OpenSetModel};
use c2ae::tensor::{Activation, Tensor};
use c2ae::train::{stage1_gradients, stage2_gradients, Stage2Batch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Gradient entries are compared relative to `max(|analytic|, |numeric|, FLOOR)`.
pub const FD_FLOOR: f64 = 1e-4;
/// Data draws closer than this to a kink of leaky ReLU or |.| are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Activation::Tanh => x.tanh(),
        Activation::LeakyRelu { slope } => {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        }
    }
}

/// Naive forward pass; `margin` tracks the smallest |pre-activation| seen
/// by a leaky ReLU.
pub fn mlp_forward(mlp: &Mlp, x: &[f64], rows: usize, margin: &mut f64) -> Vec<f64> {
    let mut h = x.to_vec();
    let n_layers = mlp.layers.len();
    for (li, layer) in mlp.layers.iter().enumerate() {
        let (d_in, d_out) = (layer.weight.shape()[0], layer.weight.shape()[1]);
        let w = layer.weight.data();
        let b = layer.bias.data();
        let a = if li + 1 == n_layers { mlp.def.output } else { Some(mlp.def.hidden) };
        let mut out = vec![0.0; rows * d_out];
        for r in 0..rows {
            for j in 0..d_out {
                let mut s = b[j];
                for i in 0..d_in {
                    s += h[r * d_in + i] * w[i * d_out + j];
                }
                out[r * d_out + j] = match a {
                    Some(kind) => {
                        if matches!(kind, Activation::LeakyRelu { .. }) {
                            *margin = margin.min(s.abs());
                        }
                        act(kind, s)
                    }
                    None => s,
                };
            }
        }
        h = out;
    }
    h
}

fn film_forward(model: &OpenSetModel, z: &[f64], labels: &[usize]) -> Vec<f64> {
    let (k, d) = (model.k(), model.def.latent_dim);
    let gw = model.film.gamma.weight.data();
    let gb = model.film.gamma.bias.data();
    let bw = model.film.beta.weight.data();
    let bb = model.film.beta.bias.data();
    let mut out = vec![0.0; z.len()];
    for (r, &y) in labels.iter().enumerate() {
        for j in 0..d {
            let (mut g, mut b) = (gb[j], bb[j]);
            for i in 0..k {
                let l = if i == y { 1.0 } else { -1.0 };
                g += l * gw[i * d + j];
                b += l * bw[i * d + j];
            }
            out[r * d + j] = g * z[r * d + j] + b;
        }
    }
    out
}

/// Mean softmax cross entropy of the closed-set head.
pub fn stage1_loss(model: &OpenSetModel, x: &[f64], labels: &[usize], margin: &mut f64) -> f64 {
    let rows = labels.len();
    let z = mlp_forward(&model.encoder, x, rows, margin);
    let logits = mlp_forward(&model.classifier, &z, rows, margin);
    let k = model.k();
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = &logits[r * k..(r + 1) * k];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / rows as f64
}

fn l1_mean(a: &[f64], b: &[f64], rows: usize, margin: &mut f64) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        *margin = margin.min((x - y).abs());
        s += (x - y).abs();
    }
    s / rows as f64
}

/// `alpha * L1(match) + (1 - alpha) * L1(non-match)` on frozen latents.
pub fn stage2_loss(model: &OpenSetModel, batch: &Stage2Batch, alpha: f64, margin: &mut f64) -> f64 {
    let rows = batch.labels.len();
    let zm = film_forward(model, batch.z.data(), &batch.labels);
    let rm = mlp_forward(&model.decoder, &zm, rows, margin);
    let znm = film_forward(model, batch.z.data(), &batch.nonmatch_labels);
    let rnm = mlp_forward(&model.decoder, &znm, rows, margin);
    alpha * l1_mean(&rm, batch.x.data(), rows, margin) + (1.0 - alpha) * l1_mean(&rnm, batch.x_nonmatch.data(), rows, margin)
}

fn random_act(rng: &mut impl Rng) -> Activation {
    match rng.random_range(0..3) {
        0 => Activation::Sigmoid,
        1 => Activation::Tanh,
        _ => Activation::LeakyRelu {
            slope: rng.random_range(0.05..0.3),
        },
    }
}

fn random_widths(rng: &mut impl Rng, from: usize, to: usize, max_layers: usize) -> Vec<usize> {
    let layers = rng.random_range(1..=max_layers);
    let mut w = vec![from];
    for _ in 1..layers {
        w.push(rng.random_range(2..=32));
    }
    w.push(to);
    w
}

/// A random network of at most three layers per sub-network and at most
/// 32 units per layer.
pub fn random_network(rng: &mut impl Rng) -> NetworkDef {
    let input_dim = rng.random_range(1..=6);
    let k = rng.random_range(2..=4);
    let latent_dim = rng.random_range(2..=8);
    let out = if rng.random_bool(0.5) { Some(Activation::Tanh) } else { None };
    NetworkDef {
        input_dim,
        k,
        latent_dim,
        encoder: MlpDef::new(random_widths(rng, input_dim, latent_dim, 3), random_act(rng), Some(random_act(rng))),
        classifier: MlpDef::new(random_widths(rng, latent_dim, k, 3), random_act(rng), None),
        decoder: MlpDef::new(random_widths(rng, latent_dim, input_dim, 3), random_act(rng), out),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub entries: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

fn uniform(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Builds a random network and data away from kinks, then compares every
/// analytic parameter gradient of both training losses with central
/// differences.
pub fn check_random_network(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let def = random_network(&mut rng);
    let mut model = OpenSetModel::new(def.clone(), rng.random()).unwrap();
    let (k, d) = (def.k, def.input_dim);
    let rows = rng.random_range(2..=5);
    let alpha = if rng.random_bool(0.2) { 1.0 } else { rng.random_range(0.05..0.95) };
    let (x, labels, batch) = loop {
        let x = uniform(&mut rng, rows * d);
        let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..k)).collect();
        let nm: Vec<usize> = labels.iter().map(|&y| (y + rng.random_range(1..k)) % k).collect();
        let mut margin = f64::INFINITY;
        let z = mlp_forward(&model.encoder, &x, rows, &mut margin);
        let batch = Stage2Batch {
            z: Tensor::new(vec![rows, def.latent_dim], z).unwrap(),
            x: Tensor::new(vec![rows, d], x.clone()).unwrap(),
            labels: labels.clone(),
            nonmatch_labels: nm,
            x_nonmatch: Tensor::new(vec![rows, d], uniform(&mut rng, rows * d)).unwrap(),
        };
        stage1_loss(&model, &x, &labels, &mut margin);
        stage2_loss(&model, &batch, alpha, &mut margin);
        if margin > KINK_MARGIN {
            break (x, labels, batch);
        }
    };

    let xt = Tensor::new(vec![rows, d], x.clone()).unwrap();
    stage1_gradients(&mut model, &xt, &labels).unwrap();
    stage2_gradients(&mut model, &batch, alpha).unwrap();

    let mut out = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        entries: 0,
    };
    // params_mut order: encoder, classifier (stage 1), then decoder, FiLM
    let n_stage1 = model.encoder.layers.len() * 2 + model.classifier.layers.len() * 2;
    for p in 0..model.params_mut().len() {
        let stage1 = p < n_stage1;
        let analytic = model.params_mut()[p].grad().expect("gradient written").to_vec();
        for (e, &a) in analytic.iter().enumerate() {
            let orig = model.params_mut()[p].data()[e];
            let eval = |v: f64, model: &mut OpenSetModel| {
                model.params_mut()[p].data_mut()[e] = v;
                let mut m = f64::INFINITY;
                if stage1 {
                    stage1_loss(model, &x, &labels, &mut m)
                } else {
                    stage2_loss(model, &batch, alpha, &mut m)
                }
            };
            let plus = eval(orig + FD_STEP, &mut model);
            let minus = eval(orig - FD_STEP, &mut model);
            model.params_mut()[p].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            out.max_rel_error = out.max_rel_error.max(rel_error(a, numeric));
            out.max_abs_error = out.max_abs_error.max((a - numeric).abs());
            out.entries += 1;
        }
    }
    out
}
