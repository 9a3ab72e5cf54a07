use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Backbone, Predictor, Provenance};
use crate::autodiff::{Gradients, Graph, Matrix, OptimizerState};
use crate::error::{Error, Result};
use crate::rng;
use crate::search::TrainingSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Feed ground-truth previous ratios to the autoregressive backbone.
    pub teacher_forcing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 40,
            epochs: 64,
            learning_rate: 1e-3,
            seed: 0,
            teacher_forcing: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidArgument("learning rate must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample loss of each epoch, measured while training.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    /// `epoch,mean_loss` rows, epochs counted from 1.
    pub fn loss_curve_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for (i, l) in self.epoch_losses.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, l));
        }
        s
    }
}

/// `(1/L) Σ (pred_l - target_l)^2`.
pub fn compute_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            what: "loss operands",
            expected: target.len(),
            actual: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("loss operands"));
    }
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(s / pred.len() as f64)
}

/// Loss graph of one sample; returns the scalar root.
pub(crate) fn sample_loss(
    predictor: &Predictor,
    g: &mut Graph,
    sample: &TrainingSample,
    teacher_forcing: bool,
) -> Result<crate::autodiff::NodeId> {
    let teacher = if teacher_forcing && predictor.backbone() == Backbone::TransformerAr {
        Some(&sample.theta[..])
    } else {
        None
    };
    let pred = predictor.build_graph(g, sample.b, teacher)?;
    let target = g.input(Matrix::row_vector(sample.theta.clone()));
    Ok(g.mse(pred, target))
}

/// Minibatch Adam on the per-sample squared error. Shuffling draws from the
/// `train` stream of `config.seed`, so runs are reproducible.
pub fn train(predictor: &mut Predictor, samples: &[TrainingSample], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training samples"));
    }
    let l = predictor.config().sequence_length;
    for s in samples {
        if s.theta.len() != l {
            return Err(Error::LengthMismatch {
                what: "sample ratios",
                expected: l,
                actual: s.theta.len(),
            });
        }
    }
    let mut r = rng::stream(config.seed, rng::STREAM_TRAIN);
    let mut opt = OptimizerState::adam(predictor.params(), config.learning_rate);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = Gradients::default();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut g = Graph::new();
                let root = sample_loss(predictor, &mut g, &samples[i], config.teacher_forcing)?;
                let loss = g.forward(root)?.values()[0];
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, batch: bi });
                }
                total += loss;
                grads.accumulate(&g.backward(root)?, scale);
            }
            if !grads.is_finite() {
                return Err(Error::Diverged { epoch, batch: bi });
            }
            opt.step(predictor.params_mut(), &mut grads)?;
        }
        epoch_losses.push(total / samples.len() as f64);
    }
    if config.epochs > 0 {
        let fingerprint = predictor.provenance().dataset_fingerprint.clone();
        predictor.set_provenance(Provenance {
            trained: true,
            dataset_fingerprint: fingerprint,
        });
    }
    Ok(TrainReport { epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Activation;
    use crate::predictor::PredictorConfig;

    fn tiny(backbone: Backbone) -> Predictor {
        Predictor::new(
            PredictorConfig {
                backbone,
                sequence_length: 3,
                hidden_dim: 8,
                encoder_layers: 1,
                heads: 2,
                ff_multiplier: 2,
                activation: Activation::Gelu,
            },
            1,
        )
        .unwrap()
    }

    fn sample() -> TrainingSample {
        TrainingSample {
            b: 0.3,
            theta: vec![0.25, 0.35, 0.3],
            reward: 0.9,
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(compute_loss(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
        assert!((compute_loss(&[0.3, 0.5], &[0.2, 0.4]).unwrap() - 0.01).abs() < 1e-15);
        assert!(compute_loss(&[0.3], &[0.2, 0.4]).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut p = tiny(Backbone::TransformerAr);
        let before = p.params().clone();
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let rep = train(&mut p, &[sample(), sample()], &cfg).unwrap();
        assert_eq!(p.params(), &before);
        assert!(rep.epoch_losses.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn single_sample_overfits_every_backbone() {
        for bb in Backbone::ALL {
            let mut p = Predictor::new(PredictorConfig::with_backbone(bb, 3), 1).unwrap();
            let rep = train(&mut p, &[sample()], &TrainConfig::default()).unwrap();
            let last = *rep.epoch_losses.last().unwrap();
            if bb == Backbone::TransformerAr {
                assert!(last <= 1e-4, "{bb}: {last}");
            } else {
                assert!(last < rep.epoch_losses[0] / 10.0, "{bb}: {:?}", rep.epoch_losses);
            }
            assert!(p.provenance().trained);
        }
    }

    #[test]
    fn training_is_seeded() {
        let data = vec![sample(), TrainingSample { b: 0.5, theta: vec![0.5, 0.4, 0.6], reward: 0.8 }];
        let cfg = TrainConfig {
            batch_size: 1,
            epochs: 3,
            ..TrainConfig::default()
        };
        let mut a = tiny(Backbone::Mlp);
        let mut b = tiny(Backbone::Mlp);
        train(&mut a, &data, &cfg).unwrap();
        train(&mut b, &data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_header() {
        let rep = TrainReport {
            epoch_losses: vec![0.5, 0.25],
        };
        assert_eq!(rep.loss_curve_csv(), "epoch,mean_loss\n1,0.5\n2,0.25\n");
    }

    #[test]
    fn wrong_label_length() {
        let mut p = tiny(Backbone::Mlp);
        let bad = TrainingSample {
            b: 0.3,
            theta: vec![0.3],
            reward: 1.0,
        };
        assert!(train(&mut p, &[bad], &TrainConfig::default()).is_err());
    }
}

#[cfg(test)]
mod grad_tests {
    use super::*;
    use crate::autodiff::{grad_check, Activation, FD_STEP};
    use crate::predictor::PredictorConfig;

    #[test]
    fn backbone_gradients_match_finite_differences() {
        use rand_distr::{Distribution, Normal};
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut r = crate::rng::from_seed(11);
        for bb in Backbone::ALL {
            for tf in [true, false] {
                let mut p = Predictor::new(
                    PredictorConfig {
                        backbone: bb,
                        sequence_length: 4,
                        hidden_dim: 8,
                        encoder_layers: 2,
                        heads: 2,
                        ff_multiplier: 2,
                        activation: Activation::Gelu,
                    },
                    7,
                )
                .unwrap();
                let ids: Vec<_> = p.params().ids().collect();
                for id in ids {
                    for v in p.params_mut().get_mut(id).values_mut() {
                        *v += noise.sample(&mut r);
                    }
                }
                let s = TrainingSample {
                    b: 0.35,
                    theta: vec![0.3, 0.4, 0.2, 0.5],
                    reward: 1.0,
                };
                let mut g = Graph::new();
                let root = sample_loss(&p, &mut g, &s, tf).unwrap();
                let wrt: Vec<_> = g.parameter_nodes().into_iter().map(|(_, n)| n).collect();
                let rep = grad_check(&mut g, root, &wrt, FD_STEP).unwrap();
                eprintln!("{bb} tf={tf}: {:e}", rep.max_rel_error());
                assert!(rep.max_rel_error() <= 1e-4, "{bb}: {:?}", rep);
            }
        }
    }
}
