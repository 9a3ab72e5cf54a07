//! Neuron importance scores and ratio-to-mask selection.

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::model::{MaskSet, TargetModel};

/// Tolerance applied inside the keep-count floor so decimal ratios such as
/// 0.1 or 0.3 realize their intended counts despite binary rounding.
pub const KEEP_COUNT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "activation-l2")]
    ActivationL2,
    #[serde(rename = "magnitude")]
    Magnitude,
    #[serde(rename = "wanda")]
    Wanda,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::ActivationL2 => "activation-l2",
            Metric::Magnitude => "magnitude",
            Metric::Wanda => "wanda",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "activation-l2" => Ok(Metric::ActivationL2),
            "magnitude" => Ok(Metric::Magnitude),
            "wanda" => Ok(Metric::Wanda),
            other => Err(Error::InvalidArgument(format!("unknown metric {other}"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-layer, per-neuron scores. Serializes as `{"metric", "layers"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub metric: Metric,
    pub layers: Vec<Vec<f64>>,
}

impl ImportanceTable {
    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .layers
            .iter()
            .flatten()
            .any(|s| !s.is_finite() || *s < 0.0)
        {
            return Err(Error::InvalidArgument(
                "importance scores must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }
}

/// Per-layer pruning ratios, the fraction of neurons removed in each layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PruningConfig(pub Vec<f64>);

impl PruningConfig {
    pub fn uniform(ratio: f64, layers: usize) -> Self {
        Self(vec![ratio; layers])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ratios(&self) -> &[f64] {
        &self.0
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    /// Bit pattern of the ratios, usable as a hash key.
    pub fn key(&self) -> Vec<u64> {
        self.0.iter().map(|v| v.to_bits()).collect()
    }
}

/// Number of neurons kept in a layer of width `d` pruned at `ratio`:
/// `floor((1 - ratio) * d)`.
pub fn keep_count(ratio: f64, d: usize) -> usize {
    let k = ((1.0 - ratio) * d as f64 + KEEP_COUNT_TOLERANCE).floor();
    k.clamp(0.0, d as f64) as usize
}

/// RMS of each neuron's activation over the calibration samples.
pub fn score_activation_l2(traces: &[Matrix]) -> Result<ImportanceTable> {
    if traces.is_empty() || traces.iter().any(|t| t.rows() == 0) {
        return Err(Error::Empty("activation traces"));
    }
    let layers = traces.iter().map(rms_columns).collect();
    Ok(ImportanceTable {
        metric: Metric::ActivationL2,
        layers,
    })
}

fn rms_columns(t: &Matrix) -> Vec<f64> {
    let n = t.rows() as f64;
    let mut sums = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (s, v) in sums.iter_mut().zip(t.row(r)) {
            *s += v * v;
        }
    }
    sums.into_iter().map(|s| (s / n).sqrt()).collect()
}

/// L2 norm of each neuron's weight group: its `W1` row, `b1` entry and
/// `W2` column.
pub fn score_magnitude(model: &TargetModel) -> ImportanceTable {
    let layers = (0..model.num_layers())
        .map(|l| {
            let b = model.block(l);
            (0..b.width())
                .map(|j| {
                    let mut sq: f64 = b.w1.row(j).iter().map(|w| w * w).sum();
                    sq += (0..b.w2.rows()).map(|i| b.w2.get(i, j).powi(2)).sum::<f64>();
                    sq += b.b1.values()[j].powi(2);
                    sq.sqrt()
                })
                .collect()
        })
        .collect();
    ImportanceTable {
        metric: Metric::Magnitude,
        layers,
    }
}

/// Weight-group norm times activation RMS, per neuron.
pub fn score_wanda(model: &TargetModel, traces: &[Matrix]) -> Result<ImportanceTable> {
    let act = score_activation_l2(traces)?;
    let mag = score_magnitude(model);
    if act.widths() != mag.widths() {
        return Err(Error::LengthMismatch {
            what: "trace widths",
            expected: mag.layers.len(),
            actual: act.layers.len(),
        });
    }
    let layers = mag
        .layers
        .iter()
        .zip(&act.layers)
        .map(|(m, a)| m.iter().zip(a).map(|(x, y)| x * y).collect())
        .collect();
    Ok(ImportanceTable {
        metric: Metric::Wanda,
        layers,
    })
}

/// Scores `model` with `metric`, collecting activations on `calibration`
/// when the metric needs them.
pub fn score(
    metric: Metric,
    model: &TargetModel,
    calibration: &crate::data::CalibrationSet,
) -> Result<ImportanceTable> {
    match metric {
        Metric::Magnitude => Ok(score_magnitude(model)),
        Metric::ActivationL2 => score_activation_l2(&model.collect_activations(calibration)?),
        Metric::Wanda => score_wanda(model, &model.collect_activations(calibration)?),
    }
}

/// Keeps the `keep_count(θ_l, d_l)` highest-scoring neurons of each layer;
/// equal scores keep the lower index first.
pub fn config_to_masks(config: &PruningConfig, table: &ImportanceTable, widths: &[usize]) -> Result<MaskSet> {
    if config.len() != widths.len() || table.layers.len() != widths.len() {
        return Err(Error::LengthMismatch {
            what: "config layers",
            expected: widths.len(),
            actual: if config.len() != widths.len() { config.len() } else { table.layers.len() },
        });
    }
    if let Some(&bad) = config.0.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::RatioOutOfRange(bad));
    }
    let mut layers = Vec::with_capacity(widths.len());
    for ((&ratio, scores), &d) in config.0.iter().zip(&table.layers).zip(widths) {
        if scores.len() != d {
            return Err(Error::LengthMismatch {
                what: "score width",
                expected: d,
                actual: scores.len(),
            });
        }
        let k = keep_count(ratio, d);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut mask = vec![false; d];
        for &j in &order[..k] {
            mask[j] = true;
        }
        layers.push(mask);
    }
    Ok(MaskSet { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;
    use crate::model::TargetModelSpec;

    fn table(scores: Vec<f64>) -> ImportanceTable {
        ImportanceTable {
            metric: Metric::ActivationL2,
            layers: vec![scores],
        }
    }

    #[test]
    fn activation_l2_formula() {
        let t = Matrix::from_vec(2, 1, vec![3.0, 0.0]).unwrap();
        let s = score_activation_l2(&[t]).unwrap();
        assert!((s.layers[0][0] - (4.5f64).sqrt()).abs() < 1e-15);
        assert!((s.layers[0][0] - 2.1213).abs() < 1e-4);
    }

    #[test]
    fn activation_l2_zero_and_duplication() {
        let z = Matrix::zeros(3, 2);
        assert_eq!(score_activation_l2(&[z]).unwrap().layers[0], vec![0.0, 0.0]);
        let t = Matrix::from_vec(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let doubled = Matrix::from_vec(4, 2, vec![1.0, -2.0, 0.5, 3.0, 1.0, -2.0, 0.5, 3.0]).unwrap();
        let a = score_activation_l2(&[t]).unwrap();
        let b = score_activation_l2(&[doubled]).unwrap();
        for (x, y) in a.layers[0].iter().zip(&b.layers[0]) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(score_activation_l2(&[]).is_err());
        assert!(score_activation_l2(&[Matrix::zeros(0, 3)]).is_err());
    }

    fn handmade_model(w1: Vec<f64>, w2: Vec<f64>, b1: f64) -> TargetModel {
        // one layer, width 2, input_dim 2; neuron 1 carries the given weights
        let spec = TargetModelSpec {
            num_layers: 1,
            hidden_widths: vec![2],
            input_dim: 2,
            num_classes: 2,
            activation: crate::autodiff::Activation::Relu,
            residual: true,
        };
        let mut m = TargetModel::build(spec, 0).unwrap();
        let p: &mut ParamStore = m.params_mut();
        let id = p.id("block.0.w1").unwrap();
        *p.get_mut(id) = Matrix::from_vec(2, 2, [vec![0.0, 0.0], w1].concat()).unwrap();
        let id = p.id("block.0.w2").unwrap();
        *p.get_mut(id) = Matrix::from_vec(2, 2, vec![0.0, w2[0], 0.0, w2[1]]).unwrap();
        let id = p.id("block.0.b1").unwrap();
        *p.get_mut(id) = Matrix::row_vector(vec![0.0, b1]);
        m
    }

    #[test]
    fn magnitude_examples() {
        let m = handmade_model(vec![3.0, 4.0], vec![0.0, 0.0], 0.0);
        let s = score_magnitude(&m);
        assert_eq!(s.layers[0][0], 0.0);
        assert_eq!(s.layers[0][1], 5.0);

        let mut doubled = m.clone();
        for id in doubled.params().ids().collect::<Vec<_>>() {
            let v = doubled.params().get(id).scale(2.0);
            *doubled.params_mut().get_mut(id) = v;
        }
        let s2 = score_magnitude(&doubled);
        assert_eq!(s2.layers[0][1], 10.0);
    }

    #[test]
    fn wanda_examples() {
        let m = handmade_model(vec![1.0, 0.0], vec![0.0, 0.0], 0.0);
        let zero = Matrix::zeros(3, 2);
        assert_eq!(score_wanda(&m, &[zero]).unwrap().layers[0], vec![0.0, 0.0]);
        let ones = Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let w = score_wanda(&m, std::slice::from_ref(&ones)).unwrap();
        assert_eq!(w.layers[0][1], 1.0);
        let m2 = handmade_model(vec![3.0, 4.0], vec![1.0, 2.0], 0.5);
        assert_eq!(score_wanda(&m2, &[ones]).unwrap().layers, score_magnitude(&m2).layers);
    }

    #[test]
    fn top_two_of_four() {
        let masks = config_to_masks(&PruningConfig(vec![0.5]), &table(vec![5.0, 1.0, 3.0, 2.0]), &[4]).unwrap();
        assert_eq!(masks.layers[0], vec![true, false, true, false]);
    }

    #[test]
    fn zero_ratio_keeps_everything() {
        let masks = config_to_masks(&PruningConfig(vec![0.0]), &table(vec![0.0, 1.0, 0.5]), &[3]).unwrap();
        assert_eq!(masks.layers[0], vec![true; 3]);
    }

    #[test]
    fn ties_keep_lower_index() {
        let masks = config_to_masks(&PruningConfig(vec![0.5]), &table(vec![1.0; 4]), &[4]).unwrap();
        assert_eq!(masks.layers[0], vec![true, true, false, false]);
    }

    #[test]
    fn out_of_range_ratio() {
        assert!(matches!(
            config_to_masks(&PruningConfig(vec![1.5]), &table(vec![1.0; 4]), &[4]),
            Err(Error::RatioOutOfRange(_))
        ));
        assert!(config_to_masks(&PruningConfig(vec![-0.1]), &table(vec![1.0; 4]), &[4]).is_err());
    }

    #[test]
    fn keep_count_on_decimal_grid() {
        for k in 0..=10 {
            let ratio = k as f64 / 10.0;
            assert_eq!(keep_count(ratio, 10), 10 - k, "ratio {ratio}");
        }
        assert_eq!(keep_count(0.1 + 0.2, 10), 7);
        assert_eq!(keep_count(0.41, 10), 5);
    }

    #[test]
    fn json_form() {
        let t = ImportanceTable {
            metric: Metric::Wanda,
            layers: vec![vec![1.0, 0.5]],
        };
        assert_eq!(t.to_json().unwrap(), r#"{"metric":"wanda","layers":[[1.0,0.5]]}"#);
        assert!(ImportanceTable::from_json(r#"{"metric":"wanda","layers":[[-1.0]]}"#).is_err());
    }
}
