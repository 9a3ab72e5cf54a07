//! Budget-to-ratios predictors: map a target mean ratio `b` to one pruning
//! ratio per layer in a single inference.

mod mlp;
mod recurrent;
mod train;
mod transformer;

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, NodeId, ParamStore, TensorDocument};
use crate::error::{Error, Result};
use crate::importance::PruningConfig;
use crate::rng;
use crate::search::mcts::{clip_ratio, ConstraintSpec, RATIO_MIN};

pub use train::{compute_loss, train, TrainConfig, TrainReport};
pub use transformer::{embed_constraint, EMBEDDING_STD};

/// Layer count of the large reference model the default sequence length was
/// scaled down from.
pub const REFERENCE_SEQUENCE_LENGTH: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Backbone {
    #[serde(rename = "transformer-ar")]
    TransformerAr,
    #[serde(rename = "transformer-parallel")]
    TransformerParallel,
    #[serde(rename = "bilstm")]
    BiLstm,
    #[serde(rename = "mlp")]
    Mlp,
}

impl Backbone {
    pub const ALL: [Backbone; 4] = [
        Backbone::TransformerAr,
        Backbone::TransformerParallel,
        Backbone::BiLstm,
        Backbone::Mlp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Backbone::TransformerAr => "transformer-ar",
            Backbone::TransformerParallel => "transformer-parallel",
            Backbone::BiLstm => "bilstm",
            Backbone::Mlp => "mlp",
        }
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Backbone::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown backbone {s:?}")))
    }
}

impl std::fmt::Display for Backbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub backbone: Backbone,
    /// Number of ratios predicted (target-model layers).
    pub sequence_length: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub heads: usize,
    pub ff_multiplier: usize,
    pub activation: Activation,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::TransformerAr,
            sequence_length: 6,
            hidden_dim: 128,
            encoder_layers: 2,
            heads: 4,
            ff_multiplier: 4,
            activation: Activation::Gelu,
        }
    }
}

impl PredictorConfig {
    pub fn with_backbone(backbone: Backbone, sequence_length: usize) -> Self {
        Self {
            backbone,
            sequence_length,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sequence_length == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidArgument("sequence length and hidden dim must be >= 1".into()));
        }
        if matches!(self.backbone, Backbone::TransformerAr | Backbone::TransformerParallel) {
            if self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
                return Err(Error::InvalidArgument(format!(
                    "hidden dim {} is not divisible by {} heads",
                    self.hidden_dim, self.heads
                )));
            }
            if self.ff_multiplier == 0 {
                return Err(Error::InvalidArgument("ff multiplier must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Whether parameters came out of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub trained: bool,
    pub dataset_fingerprint: Option<String>,
}

impl Provenance {
    pub fn label(&self) -> &'static str {
        if self.trained {
            "trained"
        } else {
            "untrained"
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    config: PredictorConfig,
    params: ParamStore,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct PredictorDocument {
    backbone: Backbone,
    config: PredictorConfig,
    provenance: String,
    dataset_fingerprint: Option<String>,
    #[serde(flatten)]
    tensors: TensorDocument,
}

/// `x·W + b` for named weight and bias parameters.
pub(crate) fn dense(g: &mut Graph, store: &ParamStore, x: NodeId, w: &str, b: &str) -> Result<NodeId> {
    let wn = g.param_named(store, w)?;
    let y = g.matmul(x, wn);
    let bn = g.param_named(store, b)?;
    Ok(g.add(y, bn))
}

fn check_budget(b: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&b) {
        return Err(Error::InvalidArgument(format!("b must lie in [0, 1], got {b}")));
    }
    Ok(())
}

impl Predictor {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: PredictorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::from_seed(seed);
        let params = match config.backbone {
            Backbone::TransformerAr => transformer::init_params(&config, false, &mut r),
            Backbone::TransformerParallel => transformer::init_params(&config, true, &mut r),
            Backbone::BiLstm => recurrent::init_params(&config, &mut r),
            Backbone::Mlp => mlp::init_params(&config, &mut r),
        };
        Ok(Self {
            config,
            params,
            provenance: Provenance {
                trained: false,
                dataset_fingerprint: None,
            },
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn backbone(&self) -> Backbone {
        self.config.backbone
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn set_provenance(&mut self, provenance: Provenance) {
        self.provenance = provenance;
    }

    /// Latent vector the budget is embedded to (transformer backbones).
    pub fn embed_constraint(&self, b: f64) -> Result<Vec<f64>> {
        Ok(embed_constraint(b, &self.params, self.config.activation)?.into_values())
    }

    /// Adds the `1 × L` prediction for `b` to `g`. For the autoregressive
    /// backbone `teacher` supplies the previous-layer inputs; without it the
    /// graph runs free, feeding back its own predictions.
    pub fn build_graph(&self, g: &mut Graph, b: f64, teacher: Option<&[f64]>) -> Result<NodeId> {
        let (s, c) = (&self.params, &self.config);
        match c.backbone {
            Backbone::TransformerAr => match teacher {
                Some(t) => transformer::ar_teacher_graph(g, s, c, b, t),
                None => transformer::ar_free_graph(g, s, c, b, &[]),
            },
            Backbone::TransformerParallel => transformer::parallel_graph(g, s, c, b),
            Backbone::BiLstm => recurrent::bilstm_graph(g, s, c, b),
            Backbone::Mlp => mlp::mlp_graph(g, s, b),
        }
    }

    /// Autoregressive forward. Positions covered by `known_prefix` take the
    /// given values as inputs instead of the model's own predictions.
    pub fn forward_autoregressive(&self, b: f64, known_prefix: Option<&[f64]>) -> Result<Vec<f64>> {
        if self.config.backbone != Backbone::TransformerAr {
            return Err(Error::InvalidArgument(format!(
                "{} is not autoregressive",
                self.config.backbone
            )));
        }
        let prefix = known_prefix.unwrap_or(&[]);
        if !prefix.is_empty() && prefix.len() >= self.config.sequence_length {
            return Err(Error::LengthMismatch {
                what: "known prefix (must be shorter than the sequence)",
                expected: self.config.sequence_length - 1,
                actual: prefix.len(),
            });
        }
        if let Some(v) = prefix.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::InvalidArgument(format!("prefix value {v} outside (0, 1)")));
        }
        transformer::ar_infer(&self.params, &self.config, b, prefix)
    }

    /// Raw ratios in `(0, 1)^L`.
    pub fn forward(&self, b: f64) -> Result<Vec<f64>> {
        check_budget(b)?;
        if self.config.backbone == Backbone::TransformerAr {
            return self.forward_autoregressive(b, None);
        }
        let mut g = Graph::new();
        let out = self.build_graph(&mut g, b, None)?;
        Ok(g.forward(out)?.values().to_vec())
    }

    /// Predicted configuration for budget `b`.
    pub fn predict(&self, b: f64) -> Result<PruningConfig> {
        Ok(PruningConfig(self.forward(b)?))
    }

    /// Prediction together with its wall-clock time in seconds.
    pub fn predict_timed(&self, b: f64) -> Result<(PruningConfig, f64)> {
        let start = Instant::now();
        let p = self.predict(b)?;
        Ok((p, start.elapsed().as_secs_f64()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&PredictorDocument {
            backbone: self.config.backbone,
            config: self.config.clone(),
            provenance: self.provenance.label().to_string(),
            dataset_fingerprint: self.provenance.dataset_fingerprint.clone(),
            tensors: self.params.to_document(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: PredictorDocument = serde_json::from_str(s)?;
        if doc.backbone != doc.config.backbone {
            return Err(Error::InvalidArgument("backbone header disagrees with config".into()));
        }
        let trained = match doc.provenance.as_str() {
            "trained" => true,
            "untrained" => false,
            other => return Err(Error::InvalidArgument(format!("unknown provenance {other:?}"))),
        };
        let params = ParamStore::from_document(doc.tensors)?;
        let reference = Predictor::new(doc.config.clone(), 0)?;
        if params.len() != reference.params.len() {
            return Err(Error::InvalidArgument("tensor count does not match config".into()));
        }
        for id in reference.params.ids() {
            let name = reference.params.name(id);
            if params.by_name(name)?.shape() != reference.params.get(id).shape() {
                return Err(Error::InvalidArgument(format!("tensor {name} does not match config")));
            }
        }
        Ok(Self {
            config: doc.config,
            params,
            provenance: Provenance {
                trained,
                dataset_fingerprint: doc.dataset_fingerprint,
            },
        })
    }
}

/// Moves a raw prediction into `[0.1, 1]^L ∩ {mean <= b}`.
///
/// Ratios are clipped first; while the mean still exceeds `b` the excess is
/// taken evenly from the ratios that sit above the floor, then re-clipped.
/// Each round either meets the budget or pins another ratio at the floor.
pub fn project_to_constraint(theta: &[f64], b: f64) -> Result<PruningConfig> {
    ConstraintSpec::new(b)?.ensure_feasible()?;
    if theta.is_empty() {
        return Err(Error::Empty("predicted ratios"));
    }
    let n = theta.len() as f64;
    let mut out: Vec<f64> = theta.iter().map(|&t| clip_ratio(t)).collect();
    for _ in 0..=theta.len() {
        let mean = out.iter().sum::<f64>() / n;
        if mean <= b {
            break;
        }
        let free = out.iter().filter(|&&t| t > RATIO_MIN).count();
        if free == 0 {
            break;
        }
        let shift = (mean - b) * n / free as f64;
        for t in out.iter_mut().filter(|t| **t > RATIO_MIN) {
            *t = clip_ratio(*t - shift);
        }
    }
    Ok(PruningConfig(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(backbone: Backbone) -> Predictor {
        let cfg = PredictorConfig {
            backbone,
            sequence_length: 4,
            hidden_dim: 8,
            encoder_layers: 2,
            heads: 2,
            ff_multiplier: 2,
            activation: Activation::Gelu,
        };
        Predictor::new(cfg, 5).unwrap()
    }

    fn zero(p: &mut Predictor, names: &[&str]) {
        for n in names {
            let id = p.params.id(n).unwrap();
            p.params.get_mut(id).fill(0.0);
        }
    }

    #[test]
    fn default_embedding_width() {
        let p = Predictor::new(PredictorConfig::default(), 0).unwrap();
        assert_eq!(p.embed_constraint(0.3).unwrap().len(), 128);
        assert_eq!(p.embed_constraint(0.3).unwrap(), p.embed_constraint(0.3).unwrap());
    }

    #[test]
    fn zero_embedding_weights_give_bias() {
        let mut p = small(Backbone::TransformerAr);
        zero(&mut p, &["embed.w1", "embed.w2"]);
        let bias = p.params.by_name("embed.b2").unwrap().values().to_vec();
        assert_eq!(p.embed_constraint(0.4).unwrap(), bias);
    }

    #[test]
    fn heads_must_divide_width() {
        let cfg = PredictorConfig {
            hidden_dim: 10,
            heads: 4,
            ..PredictorConfig::default()
        };
        assert!(Predictor::new(cfg, 0).is_err());
    }

    #[test]
    fn outputs_in_open_unit_interval() {
        for bb in Backbone::ALL {
            let p = small(bb);
            for b in [0.0, 0.3, 1.0] {
                let out = p.forward(b).unwrap();
                assert_eq!(out.len(), 4);
                assert!(out.iter().all(|&t| t > 0.0 && t < 1.0), "{bb}: {out:?}");
                assert_eq!(out, p.forward(b).unwrap());
            }
        }
    }

    #[test]
    fn zero_output_projection_is_constant() {
        let mut p = small(Backbone::TransformerAr);
        zero(&mut p, &["out.w"]);
        let c = sigmoid_of(&p, "out.b", 0);
        assert!(p.forward(0.3).unwrap().iter().all(|&t| t == c));
    }

    fn sigmoid_of(p: &Predictor, name: &str, i: usize) -> f64 {
        crate::autodiff::sigmoid(p.params.by_name(name).unwrap().values()[i])
    }

    #[test]
    fn zero_mlp_gives_bias_sigmoid() {
        let mut p = small(Backbone::Mlp);
        zero(&mut p, &["mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2", "mlp.w3"]);
        let out = p.forward(0.5).unwrap();
        for (i, t) in out.iter().enumerate() {
            assert_eq!(*t, sigmoid_of(&p, "mlp.b3", i));
        }
    }

    #[test]
    fn zero_lstm_gives_head_bias() {
        let mut p = small(Backbone::BiLstm);
        zero(
            &mut p,
            &["lstm.fwd.wx", "lstm.fwd.wh", "lstm.fwd.b", "lstm.bwd.wx", "lstm.bwd.wh", "lstm.bwd.b"],
        );
        let c = sigmoid_of(&p, "head.b", 0);
        assert!(p.forward(0.2).unwrap().iter().all(|&t| t == c));
    }

    #[test]
    fn tied_lstm_directions_are_position_symmetric() {
        let mut p = small(Backbone::BiLstm);
        for n in ["wx", "wh", "b"] {
            let v = p.params.by_name(&format!("lstm.fwd.{n}")).unwrap().clone();
            let id = p.params.id(&format!("lstm.bwd.{n}")).unwrap();
            *p.params.get_mut(id) = v;
        }
        let hw = p.params.by_name("head.w").unwrap().clone();
        let d = 8;
        let mut tied = hw.clone();
        for i in 0..d {
            tied.set(d + i, 0, hw.get(i, 0));
        }
        let id = p.params.id("head.w").unwrap();
        *p.params.get_mut(id) = tied;
        let out = p.forward(0.35).unwrap();
        let mut rev = out.clone();
        rev.reverse();
        for (a, b) in out.iter().zip(&rev) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn cached_inference_matches_graph() {
        let p = small(Backbone::TransformerAr);
        let fast = p.forward(0.45).unwrap();
        let mut g = Graph::new();
        let out = p.build_graph(&mut g, 0.45, None).unwrap();
        let slow = g.forward(out).unwrap().values().to_vec();
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12, "{fast:?} vs {slow:?}");
        }
        // teacher forcing with the model's own outputs reproduces them
        let mut g = Graph::new();
        let out = p.build_graph(&mut g, 0.45, Some(&fast[..3])).unwrap();
        let tf = g.forward(out).unwrap().values().to_vec();
        for (a, b) in fast.iter().zip(&tf) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn known_prefix_validation() {
        let p = small(Backbone::TransformerAr);
        assert!(p.forward_autoregressive(0.3, Some(&[0.2, 1.0])).is_err());
        assert!(p.forward_autoregressive(0.3, Some(&[0.2; 4])).is_err());
        let a = p.forward_autoregressive(0.3, Some(&[0.2, 0.4])).unwrap();
        let mut g = Graph::new();
        let out = p.build_graph(&mut g, 0.3, Some(&[0.2, 0.4, a[2]])).unwrap();
        let tf = g.forward(out).unwrap().values().to_vec();
        for (x, y) in a.iter().zip(&tf) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        for bb in Backbone::ALL {
            let mut p = small(bb);
            p.set_provenance(Provenance {
                trained: true,
                dataset_fingerprint: Some("abc".into()),
            });
            let back = Predictor::from_json(&p.to_json().unwrap()).unwrap();
            assert_eq!(back, p);
            assert_eq!(back.forward(0.3).unwrap(), p.forward(0.3).unwrap());
        }
    }

    #[test]
    fn budget_range_checked() {
        let p = small(Backbone::Mlp);
        assert!(p.predict(1.5).is_err());
        assert!(p.predict(-0.1).is_err());
    }

    #[test]
    fn projection_examples() {
        let id = project_to_constraint(&[0.2, 0.3], 0.4).unwrap();
        assert_eq!(id.0, vec![0.2, 0.3]);
        let p = project_to_constraint(&[0.5, 0.5], 0.4).unwrap();
        for t in &p.0 {
            assert!((t - 0.4).abs() < 1e-12);
        }
        let p = project_to_constraint(&[0.9, 0.12, 0.05], 0.2).unwrap();
        assert!(p.mean() <= 0.2 + 1e-12);
        assert!(p.0.iter().all(|&t| (0.1..=1.0).contains(&t)));
        assert!(matches!(
            project_to_constraint(&[0.5], 0.05),
            Err(Error::InfeasibleBudget(_))
        ));
    }

    #[test]
    fn graph_and_matrix_shapes() {
        let p = small(Backbone::TransformerParallel);
        let mut g = Graph::new();
        let out = p.build_graph(&mut g, 0.3, None).unwrap();
        assert_eq!(g.forward(out).unwrap().shape(), (1, 4));
    }
}
