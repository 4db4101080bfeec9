use super::Tensor;
use crate::error::{Error, Result};

/// First/second moment estimates for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state with the usual defaults (0.9, 0.999, 1e-8).
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// Non-finite gradients are rejected before anything is modified.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(bad) = grads.iter().find(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient {bad}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Adam over an ordered group of tensors, using each tensor's `grad`.
#[derive(Debug, Clone)]
pub struct Adam {
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, lr: f64) -> Self {
        Self {
            states: params
                .into_iter()
                .map(|p| AdamState::new(p.len(), lr))
                .collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if params.len() != self.states.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, got {}",
                self.states.len(),
                params.len()
            )));
        }
        for p in params.iter() {
            match p.grad() {
                None => return Err(Error::Contract("parameter has no gradient".into())),
                Some(g) => {
                    if let Some(bad) = g.iter().find(|g| !g.is_finite()) {
                        return Err(Error::Numeric(format!("non-finite gradient {bad}")));
                    }
                }
            }
        }
        for (p, state) in params.iter_mut().zip(&mut self.states) {
            let grad = p.grad().expect("checked above").to_vec();
            adam_step(p.data_mut(), &grad, state)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut s = AdamState::new(3, 0.1);
        adam_step(&mut p, &[0.0; 3], &mut s).unwrap();
        adam_step(&mut p, &[0.0; 3], &mut s).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.step, 2);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // f = w^2 at w = 1 -> g = 2; m_hat / sqrt(v_hat) = 2 / (2 + eps)
        let mut p = vec![1.0];
        let mut s = AdamState::new(1, 0.1);
        adam_step(&mut p, &[2.0], &mut s).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let mut p = vec![1.0];
        let mut s = AdamState::new(1, 0.1);
        assert!(matches!(
            adam_step(&mut p, &[f64::NAN], &mut s),
            Err(Error::Numeric(_))
        ));
        assert_eq!(p, vec![1.0]);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn deterministic_given_same_state() {
        let grads = [0.3, -1.2, 4.0];
        let run = || {
            let mut p = vec![0.5, 0.25, -1.0];
            let mut s = AdamState::new(3, 0.01);
            for _ in 0..5 {
                adam_step(&mut p, &grads, &mut s).unwrap();
            }
            (p, s)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                   b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(sa, sb);
    }
}
