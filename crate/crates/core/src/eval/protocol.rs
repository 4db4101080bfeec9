//! End-to-end experiment protocols: AUROC over randomized trials and
//! macro-F1 of the proposed method and its baselines as openness grows.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    auroc, cls_dec_decisions, cls_decisions, max_train_error, naive_decisions, open_f_measure, openness,
    outcome_counts, per_class_stats, EvalReport, OpennessSpec, ScoreDirection, Truth,
};
use crate::data::{sample_class_split, split_known_unknown, KnownUnknownSplit, LabeledDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::evt::{compute_threshold, ThresholdModel};
use crate::infer::{batch_inference_with, min_reconstruction_errors, Decision};
use crate::nets::{NetworkDef, OpenSetModel};
use crate::tensor::{Activation, Tensor};
use crate::train::{collect_error_sets, error_rng, stage_rng, train_stage1, train_stage2, TrainConfig};

const CAP_STREAM: u64 = 4;
const CLASS_STREAM: u64 = 5;

/// Network family, sized to the data at hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchSpec {
    /// The small sigmoid nets for 2-D data.
    Toy,
    /// Fully connected encoder/decoder pair; see [`NetworkDef::mlp`].
    Mlp {
        hidden: Vec<usize>,
        latent_dim: usize,
        activation: Activation,
    },
}

impl ArchSpec {
    pub fn network(&self, input_dim: usize, k: usize) -> Result<NetworkDef> {
        let def = match self {
            ArchSpec::Toy => {
                let mut d = NetworkDef::toy(k);
                if input_dim != 2 {
                    d.input_dim = input_dim;
                    d.encoder.widths[0] = input_dim;
                    *d.decoder.widths.last_mut().expect("non-empty") = input_dim;
                }
                d
            }
            ArchSpec::Mlp {
                hidden,
                latent_dim,
                activation,
            } => NetworkDef::mlp(input_dim, k, hidden, *latent_dim, *activation),
        };
        def.validate()?;
        Ok(def)
    }
}

/// Prior probability of unknowns used for the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PuMode {
    Fixed { value: f64 },
    /// `p_u = 0.5 * openness`.
    OpennessScaled,
}

impl PuMode {
    pub fn resolve(self, openness: f64) -> Result<f64> {
        let p = match self {
            PuMode::Fixed { value } => value,
            PuMode::OpennessScaled => 0.5 * openness,
        };
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Contract(format!("p_u {p} outside [0, 1]")));
        }
        Ok(p)
    }
}

/// Known/unknown split whose training part is optionally subsampled to at
/// most `max_train` samples (seeded, order preserved).
pub fn split_with_cap(data: &LabeledDataset, spec: &SplitSpec, max_train: Option<usize>) -> Result<KnownUnknownSplit> {
    let mut split = split_known_unknown(data, spec)?;
    if let Some(cap) = max_train {
        if cap < split.train_known.len() {
            let mut keep: Vec<usize> = (0..split.train_known.len()).collect();
            keep.shuffle(&mut stage_rng(spec.seed, CAP_STREAM));
            keep.truncate(cap);
            keep.sort_unstable();
            split.train_known = split.train_known.subset(&keep);
            split.train_ids = keep.iter().map(|&i| split.train_ids[i]).collect();
        }
    }
    Ok(split)
}

/// Collects the training error sets and fits the threshold model.
pub fn fit_threshold(model: &OpenSetModel, train: &LabeledDataset, p_u: f64, seed: u64) -> Result<ThresholdModel> {
    let errors = collect_error_sets(model, train, &mut error_rng(seed))?;
    compute_threshold(&errors, p_u)
}

/// Test features (known then unknown) and their ground truth.
fn test_set(split: &KnownUnknownSplit, unknown_classes: Option<&[usize]>) -> Result<(Tensor, Vec<Truth>)> {
    let mut features = split.test_known.features().to_vec();
    let mut truth: Vec<Truth> = split.test_known.labels().iter().map(|&l| Truth::Known(l)).collect();
    for i in 0..split.test_unknown.len() {
        let keep = unknown_classes.is_none_or(|u| u.contains(&split.test_unknown.labels()[i]));
        if keep {
            features.extend_from_slice(split.test_unknown.row(i));
            truth.push(Truth::Unknown);
        }
    }
    let x = Tensor::new(vec![truth.len(), split.test_known.dim()], features)?;
    Ok((x, truth))
}

fn known_unknown_scores(scores: &[f64], truth: &[Truth]) -> (Vec<f64>, Vec<f64>) {
    let mut known = Vec::new();
    let mut unknown = Vec::new();
    for (&s, t) in scores.iter().zip(truth) {
        match t {
            Truth::Known(_) => known.push(s),
            Truth::Unknown => unknown.push(s),
        }
    }
    (known, unknown)
}

/// Assembles an [`EvalReport`] from decisions and ground truth.
#[allow(clippy::too_many_arguments)]
pub fn build_report(
    protocol: &str,
    decisions: &[Decision],
    truth: &[Truth],
    k: usize,
    auroc: Option<f64>,
    openness: f64,
    p_u: Option<f64>,
    tau: Option<f64>,
) -> Result<EvalReport> {
    let f = if protocol == "fmeasure" {
        Some(open_f_measure(decisions, truth, k)?)
    } else {
        None
    };
    Ok(EvalReport {
        protocol: protocol.to_string(),
        auroc,
        f_measure: f,
        openness,
        p_u,
        tau,
        per_class: per_class_stats(decisions, truth, k)?,
        counts: outcome_counts(decisions, truth)?,
    })
}

/// Evaluates a trained model on the test part of `split`.
///
/// The AUROC scores samples by their smallest conditioned reconstruction
/// error. Decisions use the fitted threshold when present; without one
/// every sample is accepted with its closed-set label, which is only
/// allowed for the `auroc` protocol.
pub fn evaluate_model(model: &OpenSetModel, split: &KnownUnknownSplit, protocol: &str) -> Result<EvalReport> {
    if protocol != "auroc" && protocol != "fmeasure" {
        return Err(Error::Contract(format!("unknown protocol '{protocol}'")));
    }
    let (x, truth) = test_set(split, None)?;
    let scores = min_reconstruction_errors(model, &x)?;
    let (ks, us) = known_unknown_scores(&scores, &truth);
    let au = if ks.is_empty() || us.is_empty() {
        None
    } else {
        Some(auroc(&ks, &us, ScoreDirection::HigherIsUnknown)?)
    };
    let mut unknown_classes: Vec<usize> = split.test_unknown.labels().to_vec();
    unknown_classes.sort_unstable();
    unknown_classes.dedup();
    let k = model.k();
    let o = openness(OpennessSpec {
        n_train: k,
        n_test: k + unknown_classes.len(),
        n_target: k,
    })?;
    let (decisions, p_u, tau) = match (&model.threshold, protocol) {
        (Some(tm), _) => {
            let preds = batch_inference_with(model, &x, tm.tau_star)?;
            (preds.into_iter().map(|p| p.decision).collect(), Some(tm.p_u), Some(tm.tau_star))
        }
        (None, "auroc") => {
            let closed = model.forward_closed(&x)?;
            (closed.y_pred.into_iter().map(Decision::Known).collect::<Vec<_>>(), None, None)
        }
        (None, _) => return Err(Error::ThresholdMissing),
    };
    build_report(protocol, &decisions, &truth, k, au, o, p_u, tau)
}

/// How each trial picks its known and unknown classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ClassSelection {
    Fixed { known: Vec<usize>, unknown: Vec<usize> },
    /// `n_known` classes drawn per trial; all remaining classes are unknown.
    Random { n_known: usize },
}

impl ClassSelection {
    pub fn resolve(&self, class_count: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
        match self {
            ClassSelection::Fixed { known, unknown } => Ok((known.clone(), unknown.clone())),
            ClassSelection::Random { n_known } => {
                if *n_known == 0 || *n_known >= class_count {
                    return Err(Error::Contract(format!(
                        "cannot draw {n_known} known classes out of {class_count}"
                    )));
                }
                Ok(sample_class_split(class_count, *n_known, &mut stage_rng(seed, CLASS_STREAM)))
            }
        }
    }
}

/// AUROC protocol settings. Trial `t` uses seed `train.seed + t` for the
/// class draw, the split, the initialization and training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocProtocol {
    pub classes: ClassSelection,
    pub train_fraction: f64,
    pub max_train: Option<usize>,
    pub arch: ArchSpec,
    pub train: TrainConfig,
    pub trials: usize,
}

/// Reduced-scale MNIST preset: 6 known digits drawn per trial, 2000
/// training images, one hidden layer of 512 units and a 128-d latent.
pub fn mnist_protocol(seed: u64) -> AurocProtocol {
    AurocProtocol {
        classes: ClassSelection::Random { n_known: 6 },
        train_fraction: 0.8,
        max_train: Some(2000),
        arch: ArchSpec::Mlp {
            hidden: vec![512],
            latent_dim: 128,
            activation: Activation::LeakyRelu { slope: 0.2 },
        },
        train: TrainConfig {
            lr: 3e-3,
            epochs_stage1: 30,
            epochs_stage2: 60,
            seed,
            ..TrainConfig::default()
        },
        trials: 3,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AurocTrial {
    pub seed: u64,
    pub known: Vec<usize>,
    pub unknown: Vec<usize>,
    pub auroc: f64,
    /// Closed-set accuracy on the known test samples.
    pub closed_accuracy: f64,
    #[serde(skip)]
    pub model: OpenSetModel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AurocProtocolResult {
    pub trials: Vec<AurocTrial>,
    pub mean_auroc: f64,
}

fn train_on_split(split: &KnownUnknownSplit, spec: &SplitSpec, arch: &ArchSpec, cfg: &TrainConfig) -> Result<OpenSetModel> {
    let def = arch.network(split.train_known.dim(), split.train_known.class_count())?;
    let mut model = OpenSetModel::new(def, cfg.seed)?;
    train_stage1(&mut model, &split.train_known, cfg)?;
    train_stage2(&mut model, &split.train_known, cfg)?;
    model.split = Some(spec.clone());
    Ok(model)
}

fn closed_accuracy(model: &OpenSetModel, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let out = model.forward_closed(&data.to_tensor()?)?;
    let hits = out.y_pred.iter().zip(data.labels()).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / data.len() as f64)
}

pub fn run_auroc_protocol(data: &LabeledDataset, protocol: &AurocProtocol) -> Result<AurocProtocolResult> {
    if protocol.trials == 0 {
        return Err(Error::Contract("at least one trial is required".into()));
    }
    let mut trials = Vec::with_capacity(protocol.trials);
    for t in 0..protocol.trials as u64 {
        let seed = protocol.train.seed.wrapping_add(t);
        let (known, unknown) = protocol.classes.resolve(data.class_count(), seed)?;
        if unknown.is_empty() {
            return Err(Error::Contract("AUROC protocol needs unknown classes".into()));
        }
        let spec = SplitSpec {
            known_classes: known.clone(),
            unknown_classes: unknown.clone(),
            train_fraction: protocol.train_fraction,
            seed,
        };
        let split = split_with_cap(data, &spec, protocol.max_train)?;
        let cfg = TrainConfig { seed, ..protocol.train.clone() };
        let model = train_on_split(&split, &spec, &protocol.arch, &cfg)?;
        let known_scores = min_reconstruction_errors(&model, &split.test_known.to_tensor()?)?;
        let unknown_scores = min_reconstruction_errors(&model, &split.test_unknown.to_tensor()?)?;
        trials.push(AurocTrial {
            seed,
            known,
            unknown,
            auroc: auroc(&known_scores, &unknown_scores, ScoreDirection::HigherIsUnknown)?,
            closed_accuracy: closed_accuracy(&model, &split.test_known)?,
            model,
        });
    }
    let mean_auroc = trials.iter().map(|t| t.auroc).sum::<f64>() / trials.len() as f64;
    Ok(AurocProtocolResult { trials, mean_auroc })
}

/// F-measure protocol: unknown classes from `unknown_order` join the test
/// set one at a time, raising the openness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FMeasureProtocol {
    pub known: Vec<usize>,
    pub unknown_order: Vec<usize>,
    pub train_fraction: f64,
    pub arch: ArchSpec,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub pu_mode: PuMode,
}

/// Training settings for the toy problems.
pub fn toy_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 0.01,
        epochs_stage1: 200,
        epochs_stage2: 200,
        seed,
        ..TrainConfig::default()
    }
}

/// Four-Gaussian ablation preset: quadrants 0 and 1 known, 2 and 3 added
/// as unknowns in order, `p_u = 0.5 * openness`.
pub fn toy_fmeasure_protocol(seeds: Vec<u64>) -> FMeasureProtocol {
    FMeasureProtocol {
        known: vec![0, 1],
        unknown_order: vec![2, 3],
        train_fraction: 0.8,
        arch: ArchSpec::Toy,
        train: toy_train_config(0),
        seeds,
        pu_mode: PuMode::OpennessScaled,
    }
}

/// Macro-F1 of each method at one openness level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FMeasureLevel {
    pub unknown_classes: usize,
    pub openness: f64,
    pub p_u: f64,
    pub proposed: f64,
    pub naive: f64,
    pub cls: f64,
    pub cls_dec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FMeasureResult {
    /// Averages over seeds, one entry per openness level.
    pub levels: Vec<FMeasureLevel>,
    pub per_seed: Vec<Vec<FMeasureLevel>>,
}

pub fn run_fmeasure_protocol(data: &LabeledDataset, protocol: &FMeasureProtocol) -> Result<FMeasureResult> {
    if protocol.seeds.is_empty() {
        return Err(Error::Contract("at least one seed is required".into()));
    }
    let k = protocol.known.len();
    let mut per_seed = Vec::new();
    for &seed in &protocol.seeds {
        let spec = SplitSpec {
            known_classes: protocol.known.clone(),
            unknown_classes: protocol.unknown_order.clone(),
            train_fraction: protocol.train_fraction,
            seed,
        };
        let split = split_known_unknown(data, &spec)?;
        let cfg = TrainConfig { seed, ..protocol.train.clone() };
        let def = protocol.arch.network(split.train_known.dim(), k)?;

        // stage 1 is shared; CLS+DEC gets a match-only decoder
        let mut model = OpenSetModel::new(def, seed)?;
        train_stage1(&mut model, &split.train_known, &cfg)?;
        let mut match_only = model.clone();
        train_stage2(&mut model, &split.train_known, &cfg)?;
        train_stage2(&mut match_only, &split.train_known, &TrainConfig { alpha: 1.0, ..cfg.clone() })?;

        let train_x = split.train_known.to_tensor()?;
        let max_err = max_train_error(&match_only, &train_x, split.train_known.labels())?;
        let errors = collect_error_sets(&model, &split.train_known, &mut error_rng(seed))?;

        let mut levels = Vec::new();
        for m in 0..=protocol.unknown_order.len() {
            let classes = &protocol.unknown_order[..m];
            let (x, truth) = test_set(&split, Some(classes))?;
            let o = openness(OpennessSpec {
                n_train: k,
                n_test: k + m,
                n_target: k,
            })?;
            let p_u = protocol.pu_mode.resolve(o)?;
            let tm = compute_threshold(&errors, p_u)?;
            let proposed: Vec<Decision> = batch_inference_with(&model, &x, tm.tau_star)?
                .into_iter()
                .map(|p| p.decision)
                .collect();
            let (_, naive) = naive_decisions(&model, &x, &errors, p_u)?;
            let cls = cls_decisions(&model, &x)?;
            let cls_dec = cls_dec_decisions(&match_only, &x, Some(max_err))?;
            levels.push(FMeasureLevel {
                unknown_classes: m,
                openness: o,
                p_u,
                proposed: open_f_measure(&proposed, &truth, k)?,
                naive: open_f_measure(&naive, &truth, k)?,
                cls: open_f_measure(&cls, &truth, k)?,
                cls_dec: open_f_measure(&cls_dec, &truth, k)?,
            });
        }
        per_seed.push(levels);
    }
    let n = per_seed.len() as f64;
    let levels = (0..per_seed[0].len())
        .map(|i| {
            let mean = |f: fn(&FMeasureLevel) -> f64| per_seed.iter().map(|s| f(&s[i])).sum::<f64>() / n;
            FMeasureLevel {
                unknown_classes: per_seed[0][i].unknown_classes,
                openness: per_seed[0][i].openness,
                p_u: per_seed[0][i].p_u,
                proposed: mean(|l| l.proposed),
                naive: mean(|l| l.naive),
                cls: mean(|l| l.cls),
                cls_dec: mean(|l| l.cls_dec),
            }
        })
        .collect();
    Ok(FMeasureResult { levels, per_seed })
}
