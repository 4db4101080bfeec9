//! Two-stage training.
//!
//! Stage 1 fits the encoder and classifier with cross entropy. Stage 2
//! freezes both and fits the decoder and FiLM layers on
//! `alpha * L1(x, x_match) + (1 - alpha) * L1(x_nm, x_nonmatch)`, where
//! `x_match` is decoded under the true label and `x_nonmatch` under a
//! random other label, pulled toward a sample `x_nm` of another class.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nets::{condition_matrix, per_sample_l1, OpenSetModel};
use crate::tensor::{Adam, Tape, Tensor};

const STAGE1_STREAM: u64 = 1;
const STAGE2_STREAM: u64 = 2;
const ERROR_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            lr: 0.0003,
            batch_size: 64,
            epochs_stage1: 100,
            epochs_stage2: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Contract(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Contract(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 || self.epochs_stage1 == 0 || self.epochs_stage2 == 0 {
            return Err(Error::Contract("batch size and epoch counts must be positive".into()));
        }
        Ok(())
    }
}

/// Per-sample reconstruction errors on the training data under the true
/// label (`s_match`) and under one random other label (`s_nonmatch`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorSets {
    pub s_match: Vec<f64>,
    pub s_nonmatch: Vec<f64>,
}

/// Mean batch losses per epoch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Stage2Trace {
    pub total: Vec<f64>,
    pub matched: Vec<f64>,
    pub nonmatched: Vec<f64>,
}

pub fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// RNG used for non-match labels when collecting error sets.
pub fn error_rng(seed: u64) -> ChaCha8Rng {
    stage_rng(seed, ERROR_STREAM)
}

fn check_dataset(model: &OpenSetModel, data: &LabeledDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    if data.dim() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "data width {} but network input {}",
            data.dim(),
            model.input_dim()
        )));
    }
    if data.class_count() != model.k() {
        return Err(Error::Contract(format!(
            "dataset has {} classes, model k = {}",
            data.class_count(),
            model.k()
        )));
    }
    Ok(())
}

/// Cross-entropy loss of one batch; writes gradients into the encoder and
/// classifier parameters.
pub fn stage1_gradients(model: &mut OpenSetModel, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let enc = model.encoder.bind(&mut tape, true);
    let cls = model.classifier.bind(&mut tape, true);
    let z = model.encoder.apply(&mut tape, &enc, xv)?;
    let logits = model.classifier.apply(&mut tape, &cls, z)?;
    let loss = tape.softmax_cross_entropy(logits, labels)?;
    let grads = tape.backward(loss)?;
    model.encoder.write_grads(&enc, &grads);
    model.classifier.write_grads(&cls, &grads);
    Ok(tape.value(loss)[0])
}

/// Trains encoder and classifier; returns the mean loss of each epoch.
pub fn train_stage1(model: &mut OpenSetModel, data: &LabeledDataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_dataset(model, data)?;
    let mut rng = stage_rng(cfg.seed, STAGE1_STREAM);
    let mut opt = Adam::new(model.encoder.params().into_iter().chain(model.classifier.params()), cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs_stage1);
    for _ in 0..cfg.epochs_stage1 {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let x = data.gather(batch)?;
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();
            total += stage1_gradients(model, &x, &labels)?;
            batches += 1;
            let mut params = model.encoder.params_mut();
            params.extend(model.classifier.params_mut());
            opt.step(&mut params)?;
        }
        trace.push(total / batches as f64);
    }
    Ok(trace)
}

/// Draws non-match labels and non-match targets for a batch.
#[derive(Debug, Clone)]
pub struct NonMatchSampler {
    by_class: Vec<Vec<usize>>,
    total: usize,
}

/// Non-match condition labels and row indices of the non-match targets.
#[derive(Debug, Clone, PartialEq)]
pub struct NonMatchBatch {
    pub labels: Vec<usize>,
    pub targets: Vec<usize>,
}

impl NonMatchSampler {
    pub fn new(data: &LabeledDataset) -> Result<Self> {
        if data.class_count() < 2 {
            return Err(Error::Contract("non-match sampling needs at least two classes".into()));
        }
        Ok(Self {
            by_class: data.indices_by_class(),
            total: data.len(),
        })
    }

    /// A label drawn uniformly from the classes other than `y`.
    pub fn label(&self, y: usize, rng: &mut impl Rng) -> usize {
        let r = rng.random_range(0..self.by_class.len() - 1);
        if r >= y {
            r + 1
        } else {
            r
        }
    }

    /// A sample drawn uniformly from all samples whose class is not `y`.
    pub fn target(&self, y: usize, rng: &mut impl Rng) -> Result<usize> {
        let pool = self.total - self.by_class[y].len();
        if pool == 0 {
            return Err(Error::Contract(format!("no samples outside class {y}")));
        }
        let mut r = rng.random_range(0..pool);
        for (c, ids) in self.by_class.iter().enumerate() {
            if c == y {
                continue;
            }
            if r < ids.len() {
                return Ok(ids[r]);
            }
            r -= ids.len();
        }
        unreachable!("r < pool")
    }

    pub fn sample(&self, batch_labels: &[usize], rng: &mut impl Rng) -> Result<NonMatchBatch> {
        let mut labels = Vec::with_capacity(batch_labels.len());
        let mut targets = Vec::with_capacity(batch_labels.len());
        for &y in batch_labels {
            if y >= self.by_class.len() {
                return Err(Error::Index(format!("label {y} out of range")));
            }
            labels.push(self.label(y, rng));
            targets.push(self.target(y, rng)?);
        }
        Ok(NonMatchBatch { labels, targets })
    }
}

pub fn sample_nonmatch(batch_labels: &[usize], data: &LabeledDataset, rng: &mut impl Rng) -> Result<NonMatchBatch> {
    NonMatchSampler::new(data)?.sample(batch_labels, rng)
}

/// Inputs of one stage-2 step. `z` are frozen-encoder latents of `x`.
#[derive(Debug, Clone)]
pub struct Stage2Batch {
    pub z: Tensor,
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub nonmatch_labels: Vec<usize>,
    pub x_nonmatch: Tensor,
}

/// Match and non-match L1 losses of one batch and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Losses {
    pub total: f64,
    pub matched: f64,
    pub nonmatched: f64,
}

/// Weighted reconstruction loss of one batch; writes gradients into the
/// decoder and FiLM parameters. A branch with zero weight is not recorded,
/// so at `alpha = 1` the gradients are exactly those of the match loss.
pub fn stage2_gradients(model: &mut OpenSetModel, batch: &Stage2Batch, alpha: f64) -> Result<Stage2Losses> {
    let k = model.k();
    let mut tape = Tape::new();
    let film = model.film.bind(&mut tape, true);
    let dec = model.decoder.bind(&mut tape, true);
    let z = tape.constant(&batch.z);

    let branch = |tape: &mut Tape, labels: &[usize], target: &Tensor| -> Result<_> {
        let cond = tape.constant(&condition_matrix(labels, k)?);
        let zl = model.film.apply(tape, &film, z, cond)?;
        let recon = model.decoder.apply(tape, &dec, zl)?;
        let t = tape.constant(target);
        tape.l1_loss(recon, t)
    };
    let lm = branch(&mut tape, &batch.labels, &batch.x)?;
    let lnm = branch(&mut tape, &batch.nonmatch_labels, &batch.x_nonmatch)?;
    let losses = Stage2Losses {
        total: alpha * tape.value(lm)[0] + (1.0 - alpha) * tape.value(lnm)[0],
        matched: tape.value(lm)[0],
        nonmatched: tape.value(lnm)[0],
    };
    let loss = if alpha == 1.0 {
        lm
    } else if alpha == 0.0 {
        lnm
    } else {
        let a = tape.scale(lm, alpha);
        let b = tape.scale(lnm, 1.0 - alpha);
        tape.add(a, b)?
    };
    let grads = tape.backward(loss)?;
    model.film.write_grads(&film, &grads);
    model.decoder.write_grads(&dec, &grads);
    Ok(losses)
}

/// Trains decoder and FiLM layers with the encoder and classifier frozen.
pub fn train_stage2(model: &mut OpenSetModel, data: &LabeledDataset, cfg: &TrainConfig) -> Result<Stage2Trace> {
    cfg.validate()?;
    check_dataset(model, data)?;
    let sampler = NonMatchSampler::new(data)?;
    let mut rng = stage_rng(cfg.seed, STAGE2_STREAM);
    // encoder is frozen, so latents are computed once
    let latents = model.encode(&data.to_tensor()?)?;
    let latent_dim = model.def.latent_dim;
    let mut opt = Adam::new(model.film.params().into_iter().chain(model.decoder.params()), cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Stage2Trace::default();
    for _ in 0..cfg.epochs_stage2 {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        let mut batches = 0;
        for ids in order.chunks(cfg.batch_size) {
            let labels: Vec<usize> = ids.iter().map(|&i| data.labels()[i]).collect();
            let nm = sampler.sample(&labels, &mut rng)?;
            let mut z = Vec::with_capacity(ids.len() * latent_dim);
            for &i in ids {
                z.extend_from_slice(latents.row(i));
            }
            let batch = Stage2Batch {
                z: Tensor::new(vec![ids.len(), latent_dim], z)?,
                x: data.gather(ids)?,
                labels,
                nonmatch_labels: nm.labels,
                x_nonmatch: data.gather(&nm.targets)?,
            };
            let l = stage2_gradients(model, &batch, cfg.alpha)?;
            sums[0] += l.total;
            sums[1] += l.matched;
            sums[2] += l.nonmatched;
            batches += 1;
            let mut params = model.film.params_mut();
            params.extend(model.decoder.params_mut());
            opt.step(&mut params)?;
        }
        let b = batches as f64;
        trace.total.push(sums[0] / b);
        trace.matched.push(sums[1] / b);
        trace.nonmatched.push(sums[2] / b);
    }
    Ok(trace)
}

/// Match and non-match errors of every sample, both measured against the
/// sample itself.
pub fn collect_error_sets(model: &OpenSetModel, data: &LabeledDataset, rng: &mut impl Rng) -> Result<ErrorSets> {
    check_dataset(model, data)?;
    let sampler = NonMatchSampler::new(data)?;
    let x = data.to_tensor()?;
    let z = model.encode(&x)?;
    let matched = model.decode_conditioned(&z, data.labels())?;
    let nm_labels: Vec<usize> = data.labels().iter().map(|&y| sampler.label(y, rng)).collect();
    let nonmatched = model.decode_conditioned(&z, &nm_labels)?;
    Ok(ErrorSets {
        s_match: per_sample_l1(&x, &matched)?,
        s_nonmatch: per_sample_l1(&x, &nonmatched)?,
    })
}

/// Per-epoch traces of a full two-stage run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage1_loss: Vec<f64>,
    pub stage2: Stage2Trace,
}

/// Fresh model seeded from `cfg.seed`, trained through both stages.
pub fn train_model(def: crate::nets::NetworkDef, data: &LabeledDataset, cfg: &TrainConfig) -> Result<(OpenSetModel, TrainReport)> {
    let mut model = OpenSetModel::new(def, cfg.seed)?;
    let stage1_loss = train_stage1(&mut model, data, cfg)?;
    let stage2 = train_stage2(&mut model, data, cfg)?;
    Ok((model, TrainReport { stage1_loss, stage2 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_toy, ToyKind};
    use crate::nets::NetworkDef;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs_stage1: 3,
            epochs_stage2: 3,
            lr: 0.01,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn forced_complement_for_two_classes() {
        let d = gen_toy(ToyKind::TwoGauss, 20, 1).unwrap();
        let mut rng = stage_rng(0, 9);
        let nm = sample_nonmatch(&[0; 50], &d, &mut rng).unwrap();
        assert!(nm.labels.iter().all(|&l| l == 1));
        assert!(nm.targets.iter().all(|&t| d.labels()[t] == 1));
    }

    #[test]
    fn nonmatch_needs_two_classes() {
        let d = LabeledDataset::new(vec![0.0; 4], 2, vec![0, 0], 1).unwrap();
        let mut rng = stage_rng(0, 9);
        assert!(matches!(sample_nonmatch(&[0], &d, &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn nonmatch_label_frequencies_are_uniform() {
        let d = gen_toy(ToyKind::FourGauss, 10, 1).unwrap();
        let s = NonMatchSampler::new(&d).unwrap();
        let mut rng = stage_rng(3, 9);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[s.label(2, &mut rng)] += 1;
        }
        assert_eq!(counts[2], 0);
        for c in [0, 1, 3] {
            let f = counts[c] as f64 / 10_000.0;
            assert!((f - 1.0 / 3.0).abs() < 0.05 / 3.0, "{counts:?}");
        }
    }

    #[test]
    fn stage2_leaves_encoder_and_classifier_untouched() {
        let d = gen_toy(ToyKind::FourGauss, 30, 2).unwrap();
        let cfg = small_cfg();
        let mut m = OpenSetModel::new(NetworkDef::toy(4), 1).unwrap();
        train_stage1(&mut m, &d, &cfg).unwrap();
        let enc = m.encoder.clone();
        let cls = m.classifier.clone();
        let dec = m.decoder.clone();
        train_stage2(&mut m, &d, &cfg).unwrap();
        let data = |mlp: &crate::nets::Mlp| -> Vec<u64> {
            mlp.params().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(data(&enc), data(&m.encoder));
        assert_eq!(data(&cls), data(&m.classifier));
        assert_ne!(data(&dec), data(&m.decoder));
    }

    #[test]
    fn training_is_deterministic() {
        let d = gen_toy(ToyKind::FourGauss, 30, 2).unwrap();
        let (a, ra) = train_model(NetworkDef::toy(4), &d, &small_cfg()).unwrap();
        let (b, rb) = train_model(NetworkDef::toy(4), &d, &small_cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn single_class_cross_entropy_is_zero() {
        let d = LabeledDataset::new(vec![0.1, 0.2, -0.3, 0.4], 2, vec![0, 0], 1).unwrap();
        let mut m = OpenSetModel::new(NetworkDef::toy(1), 0).unwrap();
        let trace = train_stage1(&mut m, &d, &small_cfg()).unwrap();
        assert!(trace.iter().all(|&l| l.abs() < 1e-12));
    }

    #[test]
    fn empty_dataset_rejected() {
        let d = LabeledDataset::new(vec![], 2, vec![], 2).unwrap();
        let mut m = OpenSetModel::new(NetworkDef::toy(2), 0).unwrap();
        assert!(matches!(train_stage1(&mut m, &d, &small_cfg()), Err(Error::Contract(_))));
    }

    #[test]
    fn error_sets_are_nonnegative() {
        let d = gen_toy(ToyKind::FourGauss, 20, 2).unwrap();
        let m = OpenSetModel::new(NetworkDef::toy(4), 3).unwrap();
        let e = collect_error_sets(&m, &d, &mut error_rng(0)).unwrap();
        assert_eq!(e.s_match.len(), d.len());
        assert!(e.s_match.iter().chain(&e.s_nonmatch).all(|v| *v >= 0.0 && v.is_finite()));
    }
}
