//! k-inference: decode each sample under all `k` class hypotheses and
//! reject it as unknown unless the smallest reconstruction error falls
//! below the fitted threshold.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::nets::{per_sample_l1, OpenSetModel};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Known(usize),
    Unknown,
}

impl Decision {
    pub fn is_known(self) -> bool {
        matches!(self, Decision::Known(_))
    }

    pub fn label(self) -> Option<usize> {
        match self {
            Decision::Known(c) => Some(c),
            Decision::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenSetPrediction {
    pub decision: Decision,
    /// Closed-set argmax, reported even for unknowns.
    pub y_pred: usize,
    /// Reconstruction error under each class hypothesis, in class order.
    pub rec_errors: Vec<f64>,
    pub min_error: f64,
    pub tau: f64,
}

impl OpenSetPrediction {
    /// Applies the decision rule: known iff `min(rec_errors) < tau`.
    pub fn decide(y_pred: usize, rec_errors: Vec<f64>, tau: f64) -> Self {
        let min_error = rec_errors.iter().copied().fold(f64::INFINITY, f64::min);
        let decision = if min_error < tau {
            Decision::Known(y_pred)
        } else {
            Decision::Unknown
        };
        Self {
            decision,
            y_pred,
            rec_errors,
            min_error,
            tau,
        }
    }
}

impl Serialize for OpenSetPrediction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("OpenSetPrediction", 4)?;
        st.serialize_field("decision", if self.decision.is_known() { "known" } else { "unknown" })?;
        st.serialize_field("label", &self.decision.label())?;
        st.serialize_field("rec_errors", &self.rec_errors)?;
        st.serialize_field("tau", &self.tau)?;
        st.end()
    }
}

/// Closed-set labels and the `N x k` matrix of conditioned reconstruction
/// errors, row-major.
pub fn reconstruction_errors(model: &OpenSetModel, x: &Tensor) -> Result<(Vec<usize>, Vec<f64>)> {
    let closed = model.forward_closed(x)?;
    let n = x.rows();
    let k = model.k();
    let mut errors = vec![0.0; n * k];
    for class in 0..k {
        let recon = model.decode_conditioned(&closed.z, &vec![class; n])?;
        for (i, e) in per_sample_l1(x, &recon)?.into_iter().enumerate() {
            errors[i * k + class] = e;
        }
    }
    Ok((closed.y_pred, errors))
}

/// Smallest conditioned reconstruction error per sample.
pub fn min_reconstruction_errors(model: &OpenSetModel, x: &Tensor) -> Result<Vec<f64>> {
    let (_, errors) = reconstruction_errors(model, x)?;
    Ok(errors
        .chunks_exact(model.k())
        .map(|r| r.iter().copied().fold(f64::INFINITY, f64::min))
        .collect())
}

/// Open-set predictions with an explicit threshold.
pub fn batch_inference_with(model: &OpenSetModel, x: &Tensor, tau: f64) -> Result<Vec<OpenSetPrediction>> {
    let (y_pred, errors) = reconstruction_errors(model, x)?;
    Ok(y_pred
        .into_iter()
        .zip(errors.chunks_exact(model.k()))
        .map(|(y, e)| OpenSetPrediction::decide(y, e.to_vec(), tau))
        .collect())
}

/// Open-set predictions using the model's fitted `tau*`.
pub fn batch_inference(model: &OpenSetModel, x: &Tensor) -> Result<Vec<OpenSetPrediction>> {
    let tau = model.threshold()?.tau_star;
    batch_inference_with(model, x, tau)
}

/// Single-sample k-inference.
pub fn k_inference(model: &OpenSetModel, x: &[f64]) -> Result<OpenSetPrediction> {
    let tau = model.threshold()?.tau_star;
    if x.len() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "sample has {} features, network expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    let t = Tensor::new(vec![1, x.len()], x.to_vec())?;
    Ok(batch_inference_with(model, &t, tau)?.remove(0))
}
