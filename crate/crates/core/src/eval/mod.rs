//! Openness, AUROC, open-set F-measure, ablation baselines, error
//! histograms and the experiment protocols built from them.

mod baselines;
mod histogram;
mod protocol;

pub use baselines::{cls_dec_decision, cls_dec_decisions, cls_decision, cls_decisions, max_train_error, naive_decisions, CLS_MIN_PROB, CLS_DEC_FRACTION};
pub use histogram::{ErrorHistogram, HISTOGRAM_BINS};
pub use protocol::{
    build_report, evaluate_model, fit_threshold, mnist_protocol, toy_fmeasure_protocol, toy_train_config, run_auroc_protocol, run_fmeasure_protocol, split_with_cap, ArchSpec,
    AurocProtocol, AurocProtocolResult, ClassSelection, AurocTrial, FMeasureLevel, FMeasureProtocol, FMeasureResult, PuMode,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::Decision;

/// Class counts entering the openness measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpennessSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub n_target: usize,
}

/// `1 - sqrt(2 n_train / (n_test + n_target))`.
pub fn openness(spec: OpennessSpec) -> Result<f64> {
    if spec.n_train == 0 || spec.n_target == 0 || spec.n_test < spec.n_target {
        return Err(Error::Contract(format!("invalid openness spec {spec:?}")));
    }
    Ok(1.0 - (2.0 * spec.n_train as f64 / (spec.n_test + spec.n_target) as f64).sqrt())
}

/// Which end of the score axis corresponds to known samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDirection {
    HigherIsKnown,
    HigherIsUnknown,
}

/// Twice the Mann-Whitney count of correctly ordered (known, unknown)
/// pairs, ties counting one half. Exact in integers.
fn twice_u(known: &[f64], unknown: &[f64], direction: ScoreDirection) -> Result<u128> {
    if known.is_empty() || unknown.is_empty() {
        return Err(Error::Contract("AUROC needs known and unknown scores".into()));
    }
    if known.iter().chain(unknown).any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    // (score, is_unknown)
    let mut all: Vec<(f64, bool)> = known
        .iter()
        .map(|&s| (s, false))
        .chain(unknown.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut below = [0u128; 2];
    let mut total = 0u128;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let mut group = [0u128; 2];
        while j < all.len() && all[j].0 == all[i].0 {
            group[usize::from(all[j].1)] += 1;
            j += 1;
        }
        total += match direction {
            ScoreDirection::HigherIsUnknown => 2 * group[1] * below[0],
            ScoreDirection::HigherIsKnown => 2 * group[0] * below[1],
        } + group[0] * group[1];
        below[0] += group[0];
        below[1] += group[1];
        i = j;
    }
    Ok(total)
}

/// Area under the ROC curve via the rank-sum statistic.
pub fn auroc(known: &[f64], unknown: &[f64], direction: ScoreDirection) -> Result<f64> {
    let u2 = twice_u(known, unknown, direction)?;
    Ok(u2 as f64 / (2 * known.len() as u128 * unknown.len() as u128) as f64)
}

/// Ground truth of one test sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    Known(usize),
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: usize,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Outcome counts; they sum to the number of evaluated samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub known_correct: usize,
    pub known_incorrect: usize,
    pub known_rejected: usize,
    pub unknown_accepted: usize,
    pub unknown_rejected: usize,
}

impl OutcomeCounts {
    pub fn total(&self) -> usize {
        self.known_correct + self.known_incorrect + self.known_rejected + self.unknown_accepted + self.unknown_rejected
    }

    /// Fraction of known samples accepted as known (with any label).
    pub fn known_acceptance(&self) -> f64 {
        let n = self.known_correct + self.known_incorrect + self.known_rejected;
        (self.known_correct + self.known_incorrect) as f64 / n.max(1) as f64
    }

    pub fn unknown_rejection(&self) -> f64 {
        let n = self.unknown_accepted + self.unknown_rejected;
        self.unknown_rejected as f64 / n.max(1) as f64
    }
}

fn check_pairs(decisions: &[Decision], truth: &[Truth]) -> Result<()> {
    if decisions.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} ground-truth entries",
            decisions.len(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn outcome_counts(decisions: &[Decision], truth: &[Truth]) -> Result<OutcomeCounts> {
    check_pairs(decisions, truth)?;
    let mut c = OutcomeCounts::default();
    for (d, t) in decisions.iter().zip(truth) {
        match (t, d) {
            (Truth::Known(y), Decision::Known(p)) if y == p => c.known_correct += 1,
            (Truth::Known(_), Decision::Known(_)) => c.known_incorrect += 1,
            (Truth::Known(_), Decision::Unknown) => c.known_rejected += 1,
            (Truth::Unknown, Decision::Known(_)) => c.unknown_accepted += 1,
            (Truth::Unknown, Decision::Unknown) => c.unknown_rejected += 1,
        }
    }
    Ok(c)
}

/// Per-class precision, recall and F1 over the known classes that have at
/// least one ground-truth sample. Unknowns accepted as class `c` are false
/// positives of `c`.
pub fn per_class_stats(decisions: &[Decision], truth: &[Truth], k: usize) -> Result<Vec<ClassStats>> {
    check_pairs(decisions, truth)?;
    let (mut tp, mut fp, mut fneg, mut support) = (vec![0usize; k], vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for (d, t) in decisions.iter().zip(truth) {
        if let Truth::Known(y) = *t {
            if y >= k {
                return Err(Error::Index(format!("ground-truth class {y} out of range for k = {k}")));
            }
            support[y] += 1;
            if *d != Decision::Known(y) {
                fneg[y] += 1;
            }
        }
        if let Decision::Known(p) = *d {
            if p >= k {
                return Err(Error::Index(format!("predicted class {p} out of range for k = {k}")));
            }
            if *t == Truth::Known(p) {
                tp[p] += 1;
            } else {
                fp[p] += 1;
            }
        }
    }
    Ok((0..k)
        .filter(|&c| support[c] > 0)
        .map(|c| {
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            ClassStats {
                class: c,
                support: support[c],
                precision: ratio(tp[c], tp[c] + fp[c]),
                recall: ratio(tp[c], tp[c] + fneg[c]),
                f1: ratio(2 * tp[c], 2 * tp[c] + fp[c] + fneg[c]),
            }
        })
        .collect())
}

/// Macro-averaged F1 over the known classes present in `truth`.
pub fn open_f_measure(decisions: &[Decision], truth: &[Truth], k: usize) -> Result<f64> {
    if decisions.is_empty() {
        return Err(Error::Contract("F-measure of an empty prediction set".into()));
    }
    let stats = per_class_stats(decisions, truth, k)?;
    if stats.is_empty() {
        return Ok(0.0);
    }
    Ok(stats.iter().map(|s| s.f1).sum::<f64>() / stats.len() as f64)
}

/// Machine-readable evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub auroc: Option<f64>,
    pub f_measure: Option<f64>,
    pub openness: f64,
    pub p_u: Option<f64>,
    pub tau: Option<f64>,
    pub per_class: Vec<ClassStats>,
    pub counts: OutcomeCounts,
}
