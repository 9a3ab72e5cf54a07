use std::collections::BTreeMap;

use super::{Gradients, Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Clone, Debug)]
struct Moments {
    first: Matrix,
    second: Matrix,
}

/// Optimizer state. Adam moment tables are created up front for every
/// parameter of the store the optimizer is built for.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f64,
    moments: BTreeMap<ParamId, Moments>,
    step: u64,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            moments: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn adam(store: &ParamStore, learning_rate: f64) -> Self {
        let moments = store
            .ids()
            .map(|id| {
                let (r, c) = store.get(id).shape();
                (
                    id,
                    Moments {
                        first: Matrix::zeros(r, c),
                        second: Matrix::zeros(r, c),
                    },
                )
            })
            .collect();
        Self {
            kind: OptimizerKind::Adam {
                beta1: ADAM_BETA1,
                beta2: ADAM_BETA2,
                eps: ADAM_EPS,
            },
            learning_rate,
            moments,
            step: 0,
        }
    }

    pub fn kind(&self) -> &OptimizerKind {
        &self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from `grads`, then zeroes `grads`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &mut Gradients) -> Result<()> {
        for (id, g) in grads.params() {
            if store.get(id).shape() != g.shape() {
                return Err(Error::InvalidMatrix(format!(
                    "gradient shape {:?} for parameter {} of shape {:?}",
                    g.shape(),
                    store.name(id),
                    store.get(id).shape()
                )));
            }
            if let OptimizerKind::Adam { .. } = self.kind {
                if !self.moments.contains_key(&id) {
                    return Err(Error::MissingMoments(store.name(id).to_string()));
                }
            }
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (id, g) in grads.params() {
                    for (w, gv) in store.get_mut(id).values_mut().iter_mut().zip(g.values()) {
                        *w -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (id, g) in grads.params() {
                    let m = self.moments.get_mut(&id).expect("checked above");
                    let w = store.get_mut(id).values_mut();
                    let first = m.first.values_mut();
                    let second = m.second.values_mut();
                    for i in 0..w.len() {
                        let gv = g.values()[i];
                        first[i] = beta1 * first[i] + (1.0 - beta1) * gv;
                        second[i] = beta2 * second[i] + (1.0 - beta2) * gv * gv;
                        let m_hat = first[i] / c1;
                        let v_hat = second[i] / c2;
                        w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        grads.zero();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("w", Matrix::scalar(v));
        (s, id)
    }

    fn grad(id: ParamId, v: f64) -> Gradients {
        let mut g = Gradients::default();
        g.insert_param(id, Matrix::scalar(v));
        g
    }

    #[test]
    fn sgd_step() {
        let (mut s, id) = one_param(1.0);
        let mut g = grad(id, 1.0);
        OptimizerState::sgd(0.1).step(&mut s, &mut g).unwrap();
        assert!((s.get(id).values()[0] - 0.9).abs() < 1e-15);
        assert_eq!(g.param(id).unwrap().values(), &[0.0]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let (mut s, id) = one_param(0.0);
        let mut opt = OptimizerState::adam(&s, 1e-3);
        opt.step(&mut s, &mut grad(id, 1.0)).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction
        let expected = -1e-3 / (1.0 + ADAM_EPS);
        assert!((s.get(id).values()[0] - expected).abs() < 1e-18);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = one_param(0.7);
        let mut opt = OptimizerState::adam(&s, 1e-3);
        for _ in 0..3 {
            opt.step(&mut s, &mut grad(id, 0.0)).unwrap();
        }
        assert_eq!(s.get(id).values()[0], 0.7);
    }

    #[test]
    fn adam_rejects_unknown_parameters() {
        let (s, _) = one_param(0.0);
        let mut opt = OptimizerState::adam(&s, 1e-3);
        let mut bigger = s.clone();
        let extra = bigger.insert("extra", Matrix::scalar(1.0));
        let err = opt.step(&mut bigger, &mut grad(extra, 1.0)).unwrap_err();
        assert!(matches!(err, Error::MissingMoments(name) if name == "extra"));
    }
}
