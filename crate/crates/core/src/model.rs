//! Toy prunable model: a stack of FFN blocks over a fixed-width residual
//! stream followed by a linear classifier head.
//!
//! Block `l` computes `h = act(W1 x + b1)` with `W1: d_l x input_dim` and
//! `y = W2 h + b2` with `W2: input_dim x d_l`. Structured pruning removes
//! hidden neuron `j` of a block, that is row `j` of `W1`, entry `j` of `b1`
//! and column `j` of `W2`. A block with no kept neuron is bypassed.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, Matrix, NodeId, OptimizerState, ParamStore};
use crate::data::CalibrationSet;
use crate::error::{Error, Result};
use crate::init;
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetModelSpec {
    pub num_layers: usize,
    pub hidden_widths: Vec<usize>,
    pub input_dim: usize,
    pub num_classes: usize,
    pub activation: Activation,
    pub residual: bool,
}

impl Default for TargetModelSpec {
    fn default() -> Self {
        Self::uniform(6, 64)
    }
}

impl TargetModelSpec {
    /// `layers` blocks of equal width over the 16-dimensional, 4-class task.
    pub fn uniform(layers: usize, width: usize) -> Self {
        Self {
            num_layers: layers,
            hidden_widths: vec![width; layers],
            input_dim: 16,
            num_classes: 4,
            activation: Activation::Relu,
            residual: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::InvalidArgument("num_layers must be >= 1".into()));
        }
        if self.hidden_widths.len() != self.num_layers {
            return Err(Error::LengthMismatch {
                what: "hidden_widths",
                expected: self.num_layers,
                actual: self.hidden_widths.len(),
            });
        }
        if self.hidden_widths.iter().any(|&d| d < 2) {
            return Err(Error::InvalidArgument("every hidden width must be >= 2".into()));
        }
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::InvalidArgument("input_dim and num_classes must be positive".into()));
        }
        if !matches!(self.activation, Activation::Relu | Activation::Gelu) {
            return Err(Error::InvalidArgument("activation must be relu or gelu".into()));
        }
        Ok(())
    }

    pub fn total_neurons(&self) -> usize {
        self.hidden_widths.iter().sum()
    }
}

/// Per-layer binary keep vectors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSet {
    pub layers: Vec<Vec<bool>>,
}

impl MaskSet {
    pub fn all_ones(widths: &[usize]) -> Self {
        Self {
            layers: widths.iter().map(|&d| vec![true; d]).collect(),
        }
    }

    pub fn all_zeros(widths: &[usize]) -> Self {
        Self {
            layers: widths.iter().map(|&d| vec![false; d]).collect(),
        }
    }

    pub fn kept(&self, layer: usize) -> usize {
        self.layers[layer].iter().filter(|&&z| z).count()
    }

    pub fn kept_indices(&self, layer: usize) -> Vec<usize> {
        self.layers[layer]
            .iter()
            .enumerate()
            .filter_map(|(j, &z)| z.then_some(j))
            .collect()
    }
}

/// Accuracy with ties in the argmax resolved toward the lowest class index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub correct_per_class: Vec<usize>,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub train_accuracy: f64,
    pub epoch_losses: Vec<f64>,
}

/// Borrowed parameters of one FFN block.
#[derive(Clone, Copy, Debug)]
pub struct BlockView<'a> {
    pub w1: &'a Matrix,
    pub b1: &'a Matrix,
    pub w2: &'a Matrix,
    pub b2: &'a Matrix,
}

impl BlockView<'_> {
    pub fn width(&self) -> usize {
        self.w1.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetModel {
    spec: TargetModelSpec,
    params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    spec: TargetModelSpec,
    #[serde(flatten)]
    tensors: crate::autodiff::TensorDocument,
}

impl TargetModel {
    /// Seeded initialization: weights uniform in `±sqrt(6/(fan_in+fan_out))`,
    /// biases zero.
    pub fn build(spec: TargetModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::from_seed(seed);
        let mut params = ParamStore::new();
        let n = spec.input_dim;
        for (l, &d) in spec.hidden_widths.iter().enumerate() {
            params.insert(format!("block.{l}.w1"), init::xavier_uniform(d, n, n, d, &mut rng));
            params.insert(format!("block.{l}.b1"), Matrix::zeros(1, d));
            params.insert(format!("block.{l}.w2"), init::xavier_uniform(n, d, d, n, &mut rng));
            params.insert(format!("block.{l}.b2"), Matrix::zeros(1, n));
        }
        let c = spec.num_classes;
        params.insert("head.w", init::xavier_uniform(c, n, n, c, &mut rng));
        params.insert("head.b", Matrix::zeros(1, c));
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &TargetModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_layers(&self) -> usize {
        self.spec.num_layers
    }

    pub fn widths(&self) -> &[usize] {
        &self.spec.hidden_widths
    }

    pub fn block(&self, l: usize) -> BlockView<'_> {
        let get = |k: usize| self.params.get(crate::autodiff::ParamId(4 * l + k));
        BlockView {
            w1: get(0),
            b1: get(1),
            w2: get(2),
            b2: get(3),
        }
    }

    pub fn head(&self) -> (&Matrix, &Matrix) {
        let base = 4 * self.spec.num_layers;
        (
            self.params.get(crate::autodiff::ParamId(base)),
            self.params.get(crate::autodiff::ParamId(base + 1)),
        )
    }

    fn check_masks(&self, masks: &MaskSet) -> Result<()> {
        if masks.layers.len() != self.num_layers() {
            return Err(Error::LengthMismatch {
                what: "mask layers",
                expected: self.num_layers(),
                actual: masks.layers.len(),
            });
        }
        for (m, &d) in masks.layers.iter().zip(self.widths()) {
            if m.len() != d {
                return Err(Error::LengthMismatch {
                    what: "mask width",
                    expected: d,
                    actual: m.len(),
                });
            }
        }
        Ok(())
    }

    /// View of the model with pruned neurons removed.
    pub fn apply_masks(&self, masks: &MaskSet) -> Result<MaskedModel<'_>> {
        self.check_masks(masks)?;
        Ok(MaskedModel {
            model: self,
            kept: (0..self.num_layers()).map(|l| masks.kept_indices(l)).collect(),
        })
    }

    /// View with every neuron kept.
    pub fn dense(&self) -> MaskedModel<'_> {
        MaskedModel {
            model: self,
            kept: self.widths().iter().map(|&d| (0..d).collect()).collect(),
        }
    }

    /// Physically smaller model with the masked rows and columns deleted.
    /// Its spec may hold widths below 2 (including 0) and is not revalidated.
    pub fn shrink(&self, masks: &MaskSet) -> Result<TargetModel> {
        self.check_masks(masks)?;
        let n = self.spec.input_dim;
        let mut params = ParamStore::new();
        let mut widths = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let b = self.block(l);
            let kept = masks.kept_indices(l);
            let k = kept.len();
            let mut w1 = Vec::with_capacity(k * n);
            let mut b1 = Vec::with_capacity(k);
            for &j in &kept {
                w1.extend_from_slice(b.w1.row(j));
                b1.push(b.b1.values()[j]);
            }
            let mut w2 = Vec::with_capacity(n * k);
            for i in 0..n {
                for &j in &kept {
                    w2.push(b.w2.get(i, j));
                }
            }
            params.insert(format!("block.{l}.w1"), Matrix::from_vec(k, n, w1)?);
            params.insert(format!("block.{l}.b1"), Matrix::from_vec(1, k, b1)?);
            params.insert(format!("block.{l}.w2"), Matrix::from_vec(n, k, w2)?);
            params.insert(format!("block.{l}.b2"), b.b2.clone());
            widths.push(k);
        }
        let (hw, hb) = self.head();
        params.insert("head.w", hw.clone());
        params.insert("head.b", hb.clone());
        let mut spec = self.spec.clone();
        spec.hidden_widths = widths;
        Ok(TargetModel { spec, params })
    }

    pub fn forward(&self, inputs: &Matrix) -> Matrix {
        self.dense().forward(inputs)
    }

    pub fn evaluate(&self, masks: &MaskSet, set: &CalibrationSet) -> Result<EvalResult> {
        self.apply_masks(masks)?.evaluate(set)
    }

    /// Post-activation hidden values of the dense model, one `N x d_l`
    /// matrix per block.
    pub fn collect_activations(&self, set: &CalibrationSet) -> Result<Vec<Matrix>> {
        set.validate()?;
        self.check_input_dim(set)?;
        let view = self.dense();
        let mut traces: Vec<Matrix> = self.widths().iter().map(|&d| Matrix::zeros(set.len(), d)).collect();
        let mut hidden = Vec::new();
        for (i, x) in set.inputs.iter().enumerate() {
            let mut stream = x.clone();
            for (l, trace) in traces.iter_mut().enumerate() {
                view.block_forward(l, &mut stream, &mut hidden);
                trace.row_mut(i).copy_from_slice(&hidden);
            }
        }
        Ok(traces)
    }

    fn check_input_dim(&self, set: &CalibrationSet) -> Result<()> {
        if set.dim() != self.spec.input_dim {
            return Err(Error::LengthMismatch {
                what: "input dimension",
                expected: self.spec.input_dim,
                actual: set.dim(),
            });
        }
        if let Some(&y) = set.labels.iter().find(|&&y| y >= self.spec.num_classes) {
            return Err(Error::InvalidArgument(format!("label {y} out of range")));
        }
        Ok(())
    }

    /// Minibatch Adam on softmax cross-entropy. The shuffle order comes from
    /// `config.seed`, so the trajectory is fully determined by the inputs.
    pub fn pretrain(&mut self, train: &CalibrationSet, config: &PretrainConfig) -> Result<PretrainReport> {
        train.validate()?;
        self.check_input_dim(train)?;
        if config.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        let mut rng = rng::from_seed(config.seed);
        let mut opt = OptimizerState::adam(&self.params, config.learning_rate);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut epoch_losses = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for (batch, idx) in order.chunks(config.batch_size).enumerate() {
                let (mut graph, loss) = self.training_graph(train, idx);
                let value = graph.forward(loss)?.values()[0];
                if !value.is_finite() {
                    return Err(Error::Diverged { epoch, batch });
                }
                total += value * idx.len() as f64;
                let mut grads = graph.backward(loss)?;
                if !grads.is_finite() {
                    return Err(Error::Diverged { epoch, batch });
                }
                opt.step(&mut self.params, &mut grads)?;
            }
            epoch_losses.push(total / train.len() as f64);
        }
        let train_accuracy = self.evaluate(&MaskSet::all_ones(self.widths()), train)?.accuracy;
        Ok(PretrainReport {
            train_accuracy,
            epoch_losses,
        })
    }

    fn training_graph(&self, set: &CalibrationSet, idx: &[usize]) -> (Graph, NodeId) {
        let mut g = Graph::new();
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| set.inputs[i].clone()).collect();
        let labels = idx.iter().map(|&i| set.labels[i]).collect();
        let mut x = g.input(Matrix::from_rows(&rows).expect("rectangular"));
        let p = &self.params;
        let ids: Vec<_> = p.ids().collect();
        for l in 0..self.num_layers() {
            let w1 = g.param(p, ids[4 * l]);
            let b1 = g.param(p, ids[4 * l + 1]);
            let w2 = g.param(p, ids[4 * l + 2]);
            let b2 = g.param(p, ids[4 * l + 3]);
            let w1t = g.transpose(w1);
            let pre = g.matmul(x, w1t);
            let pre = g.add(pre, b1);
            let h = g.activation(pre, self.spec.activation);
            let w2t = g.transpose(w2);
            let y = g.matmul(h, w2t);
            let y = g.add(y, b2);
            x = if self.spec.residual { g.add(x, y) } else { y };
        }
        let base = 4 * self.num_layers();
        let hw = g.param(p, ids[base]);
        let hb = g.param(p, ids[base + 1]);
        let hwt = g.transpose(hw);
        let logits = g.matmul(x, hwt);
        let logits = g.add(logits, hb);
        let loss = g.softmax_cross_entropy(logits, labels);
        (g, loss)
    }

    /// `{"spec": ..., "tensors": [...]}`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelDocument {
            spec: self.spec.clone(),
            tensors: self.params.to_document(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(s)?;
        doc.spec.validate()?;
        let params = ParamStore::from_document(doc.tensors)?;
        let reference = TargetModel::build(doc.spec.clone(), 0)?;
        if params.len() != reference.params.len() {
            return Err(Error::InvalidArgument("tensor count does not match spec".into()));
        }
        for id in reference.params.ids() {
            if params.name(id) != reference.params.name(id)
                || params.get(id).shape() != reference.params.get(id).shape()
            {
                return Err(Error::InvalidArgument(format!(
                    "tensor {} does not match spec",
                    reference.params.name(id)
                )));
            }
        }
        Ok(Self { spec: doc.spec, params })
    }
}

/// Forward pass that visits only the kept neurons of each block, in
/// increasing index order. A shrunken model visits the same neurons in the
/// same order, which makes the two forwards bit-identical.
#[derive(Clone, Debug)]
pub struct MaskedModel<'a> {
    model: &'a TargetModel,
    kept: Vec<Vec<usize>>,
}

impl MaskedModel<'_> {
    pub fn kept(&self, layer: usize) -> &[usize] {
        &self.kept[layer]
    }

    /// Updates `stream` in place and leaves the kept hidden values in `hidden`.
    fn block_forward(&self, l: usize, stream: &mut [f64], hidden: &mut Vec<f64>) {
        let b = self.model.block(l);
        let kept = &self.kept[l];
        hidden.clear();
        if kept.is_empty() {
            return;
        }
        let act = self.model.spec.activation;
        for &j in kept {
            let mut acc = 0.0;
            for (w, x) in b.w1.row(j).iter().zip(stream.iter()) {
                acc += w * x;
            }
            hidden.push(act.apply(acc + b.b1.values()[j]));
        }
        let width = b.w2.cols();
        let residual = self.model.spec.residual;
        for (i, s) in stream.iter_mut().enumerate() {
            let row = &b.w2.values()[i * width..(i + 1) * width];
            let mut acc = 0.0;
            for (&j, h) in kept.iter().zip(hidden.iter()) {
                acc += row[j] * h;
            }
            let y = acc + b.b2.values()[i];
            *s = if residual { *s + y } else { y };
        }
    }

    fn logits(&self, x: &[f64], hidden: &mut Vec<f64>) -> Vec<f64> {
        let mut stream = x.to_vec();
        for l in 0..self.kept.len() {
            self.block_forward(l, &mut stream, hidden);
        }
        let (hw, hb) = self.model.head();
        (0..hw.rows())
            .map(|c| {
                let mut acc = 0.0;
                for (w, s) in hw.row(c).iter().zip(&stream) {
                    acc += w * s;
                }
                acc + hb.values()[c]
            })
            .collect()
    }

    pub fn forward(&self, inputs: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(inputs.rows(), self.model.spec.num_classes);
        let mut hidden = Vec::new();
        for r in 0..inputs.rows() {
            let z = self.logits(inputs.row(r), &mut hidden);
            out.row_mut(r).copy_from_slice(&z);
        }
        out
    }

    pub fn evaluate(&self, set: &CalibrationSet) -> Result<EvalResult> {
        set.validate()?;
        self.model.check_input_dim(set)?;
        let classes = self.model.spec.num_classes;
        let mut correct_per_class = vec![0usize; classes];
        let mut hidden = Vec::new();
        for (x, &y) in set.inputs.iter().zip(&set.labels) {
            let z = self.logits(x, &mut hidden);
            let pred = Matrix::row_vector(z).argmax_row(0);
            if pred == y {
                correct_per_class[y] += 1;
            }
        }
        let correct: usize = correct_per_class.iter().sum();
        Ok(EvalResult {
            accuracy: correct as f64 / set.len() as f64,
            correct_per_class,
            total: set.len(),
        })
    }
}

/// Draws a random mask keeping each neuron with probability `p`.
pub fn random_masks(widths: &[usize], p: f64, rng: &mut Rng) -> MaskSet {
    use rand::Rng as _;
    MaskSet {
        layers: widths
            .iter()
            .map(|&d| (0..d).map(|_| rng.random_bool(p)).collect())
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BlobsTask;

    fn small() -> TargetModel {
        TargetModel::build(TargetModelSpec::uniform(3, 8), 11).unwrap()
    }

    #[test]
    fn build_is_deterministic_and_seed_sensitive() {
        let spec = TargetModelSpec::uniform(3, 8);
        let a = TargetModel::build(spec.clone(), 1).unwrap();
        assert_eq!(a, TargetModel::build(spec.clone(), 1).unwrap());
        assert_ne!(a, TargetModel::build(spec, 2).unwrap());
        assert_eq!(a.params().len(), 3 * 4 + 2);
        assert_eq!(a.block(2).w1.shape(), (8, 16));
        assert_eq!(a.block(2).w2.shape(), (16, 8));
    }

    #[test]
    fn rejects_narrow_layers() {
        assert!(TargetModel::build(TargetModelSpec::uniform(2, 1), 0).is_err());
    }

    #[test]
    fn all_ones_mask_is_identity() {
        let m = small();
        let set = BlobsTask::default().sample(10, &mut rng::from_seed(0));
        let x = set.to_matrix();
        let masked = m.apply_masks(&MaskSet::all_ones(m.widths())).unwrap().forward(&x);
        assert_eq!(masked, m.forward(&x));
    }

    #[test]
    fn zero_mask_bypasses_residual_block() {
        let mut m = small();
        // give b2 a nonzero value so a half-removed block would show up
        let id = m.params().id("block.1.b2").unwrap();
        m.params_mut().get_mut(id).fill(0.5);
        let mut masks = MaskSet::all_ones(m.widths());
        masks.layers[1] = vec![false; 8];
        let x = BlobsTask::default().sample(5, &mut rng::from_seed(1)).to_matrix();
        let out = m.apply_masks(&masks).unwrap().forward(&x);

        let mut without = m.clone();
        let mut spec = without.spec.clone();
        spec.num_layers = 2;
        spec.hidden_widths = vec![8, 8];
        let mut params = ParamStore::new();
        for (src, dst) in [(0, 0), (2, 1)] {
            for (k, name) in ["w1", "b1", "w2", "b2"].iter().enumerate() {
                params.insert(format!("block.{dst}.{name}"), m.params().get(crate::autodiff::ParamId(4 * src + k)).clone());
            }
        }
        let (hw, hb) = m.head();
        params.insert("head.w", hw.clone());
        params.insert("head.b", hb.clone());
        without.spec = spec;
        without.params = params;
        assert_eq!(out, without.forward(&x));
    }

    #[test]
    fn mask_length_mismatch_is_an_error() {
        let m = small();
        let masks = MaskSet::all_ones(&[8, 8]);
        assert!(m.apply_masks(&masks).is_err());
        let masks = MaskSet::all_ones(&[8, 7, 8]);
        assert!(m.apply_masks(&masks).is_err());
    }

    #[test]
    fn shrunken_model_matches_masked_forward_exactly() {
        let m = small();
        let x = BlobsTask::default().sample(16, &mut rng::from_seed(5)).to_matrix();
        let mut r = rng::from_seed(9);
        for _ in 0..20 {
            let masks = random_masks(m.widths(), 0.5, &mut r);
            let a = m.apply_masks(&masks).unwrap().forward(&x);
            let b = m.shrink(&masks).unwrap().forward(&x);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn constant_logits_pick_class_zero() {
        let mut m = small();
        for id in m.params().ids().collect::<Vec<_>>() {
            m.params_mut().get_mut(id).fill(0.0);
        }
        let set = CalibrationSet::new(
            vec![vec![1.0; 16], vec![-1.0; 16], vec![0.5; 16], vec![2.0; 16]],
            vec![0, 1, 0, 3],
        )
        .unwrap();
        let r = m.evaluate(&MaskSet::all_ones(m.widths()), &set).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.correct_per_class, vec![2, 0, 0, 0]);
    }

    #[test]
    fn evaluate_rejects_empty_set() {
        let m = small();
        let empty = CalibrationSet {
            inputs: vec![],
            labels: vec![],
        };
        assert!(m.evaluate(&MaskSet::all_ones(m.widths()), &empty).is_err());
    }

    #[test]
    fn activation_trace_contracts() {
        let mut m = small();
        let zero = CalibrationSet::new(vec![vec![0.0; 16]], vec![0]).unwrap();
        let t = m.collect_activations(&zero).unwrap();
        assert!(t.iter().all(|l| l.values().iter().all(|&v| v == 0.0)));

        let x = vec![0.3; 16];
        let twin = CalibrationSet::new(vec![x.clone(), x], vec![0, 0]).unwrap();
        let t = m.collect_activations(&twin).unwrap();
        for layer in &t {
            assert_eq!(layer.shape(), (2, 8));
            assert_eq!(layer.row(0), layer.row(1));
        }
        let id = m.params().id("block.0.b1").unwrap();
        m.params_mut().get_mut(id).fill(0.1);
        assert!(m.collect_activations(&zero).unwrap()[0].values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let mut m = small();
        let before = m.clone();
        let set = BlobsTask::default().sample(20, &mut rng::from_seed(2));
        let cfg = PretrainConfig {
            epochs: 0,
            ..PretrainConfig::default()
        };
        m.pretrain(&set, &cfg).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn single_sample_overfits() {
        let mut m = small();
        let set = BlobsTask::default().sample(1, &mut rng::from_seed(4));
        let cfg = PretrainConfig {
            epochs: 30,
            batch_size: 1,
            learning_rate: 1e-2,
            seed: 0,
        };
        assert_eq!(m.pretrain(&set, &cfg).unwrap().train_accuracy, 1.0);
    }

    #[test]
    fn json_round_trip() {
        let m = small();
        let back = TargetModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
