//! Ablation baselines: softmax confidence (CLS), classifier plus a
//! match-only decoder (CLS+DEC), and a threshold on raw error counts
//! (Naive).

use crate::error::{Error, Result};
use crate::evt::naive_threshold;
use crate::infer::{batch_inference_with, Decision};
use crate::nets::{per_sample_l1, OpenSetModel};
use crate::tensor::Tensor;
use crate::train::ErrorSets;

/// CLS rejects when the top softmax probability is below this.
pub const CLS_MIN_PROB: f64 = 0.5;
/// CLS+DEC rejects errors above this fraction of the largest training error.
pub const CLS_DEC_FRACTION: f64 = 0.95;

/// Unknown iff the largest probability is strictly below 0.5.
pub fn cls_decision(probs: &[f64], y_pred: usize) -> Decision {
    let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max < CLS_MIN_PROB {
        Decision::Unknown
    } else {
        Decision::Known(y_pred)
    }
}

pub fn cls_decisions(model: &OpenSetModel, x: &Tensor) -> Result<Vec<Decision>> {
    let out = model.forward_closed(x)?;
    Ok(out
        .y_pred
        .iter()
        .enumerate()
        .map(|(i, &y)| cls_decision(out.probs.row(i), y))
        .collect())
}

/// Largest matched-condition reconstruction error on the training data.
pub fn max_train_error(model: &OpenSetModel, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let recon = model.reconstruct_conditioned(x, labels)?;
    Ok(per_sample_l1(x, &recon)?.into_iter().fold(0.0, f64::max))
}

/// Unknown iff `error` is strictly above `0.95 * max_train_error`.
pub fn cls_dec_decision(error: f64, y_pred: usize, max_train_error: f64) -> Decision {
    if error > CLS_DEC_FRACTION * max_train_error {
        Decision::Unknown
    } else {
        Decision::Known(y_pred)
    }
}

/// Decodes each sample under its predicted label and applies
/// [`cls_dec_decision`].
pub fn cls_dec_decisions(model: &OpenSetModel, x: &Tensor, max_train_error: Option<f64>) -> Result<Vec<Decision>> {
    let max = max_train_error.ok_or_else(|| Error::Contract("CLS+DEC needs the maximum training error".into()))?;
    let out = model.forward_closed(x)?;
    let recon = model.decode_conditioned(&out.z, &out.y_pred)?;
    Ok(per_sample_l1(x, &recon)?
        .into_iter()
        .zip(&out.y_pred)
        .map(|(e, &y)| cls_dec_decision(e, y, max))
        .collect())
}

/// k-inference with the raw-count threshold instead of the tail-model one.
pub fn naive_decisions(model: &OpenSetModel, x: &Tensor, errors: &ErrorSets, p_u: f64) -> Result<(f64, Vec<Decision>)> {
    let tau = naive_threshold(errors, p_u)?;
    let preds = batch_inference_with(model, x, tau)?;
    Ok((tau, preds.into_iter().map(|p| p.decision).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cls_boundary_is_known() {
        assert_eq!(cls_decision(&[0.9, 0.1], 0), Decision::Known(0));
        assert_eq!(cls_decision(&[0.4, 0.3, 0.3], 0), Decision::Unknown);
        assert_eq!(cls_decision(&[0.5, 0.25, 0.25], 0), Decision::Known(0));
    }

    #[test]
    fn cls_dec_needs_calibration() {
        let m = OpenSetModel::new(crate::nets::NetworkDef::toy(2), 0).unwrap();
        let x = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(cls_dec_decisions(&m, &x, None), Err(Error::Contract(_))));
    }

    #[test]
    fn cls_dec_boundaries() {
        assert_eq!(cls_dec_decision(0.0, 1, 2.0), Decision::Known(1));
        assert_eq!(cls_dec_decision(2.0, 1, 2.0), Decision::Unknown);
        assert_eq!(cls_dec_decision(CLS_DEC_FRACTION * 2.0, 1, 2.0), Decision::Known(1));
    }
}
