//! Labelled sample sets and the seeded Gaussian-blobs task.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Inputs with class labels, used for training, calibration and evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl CalibrationSet {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        let set = Self { inputs, labels };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Empty("sample set"));
        }
        if self.inputs.len() != self.labels.len() {
            return Err(Error::LengthMismatch {
                what: "labels",
                expected: self.inputs.len(),
                actual: self.labels.len(),
            });
        }
        let dim = self.inputs[0].len();
        if let Some(bad) = self.inputs.iter().find(|x| x.len() != dim) {
            return Err(Error::LengthMismatch {
                what: "input dimension",
                expected: dim,
                actual: bad.len(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.inputs).expect("validated rectangular")
    }

    /// Rows `idx` of the set, in the given order.
    pub fn subset(&self, idx: &[usize]) -> CalibrationSet {
        CalibrationSet {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let set: Self = serde_json::from_str(s)?;
        set.validate()?;
        Ok(set)
    }
}

/// Isotropic Gaussian classes whose means sit on the coordinate axes at
/// distance `separation * sigma` from the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobsTask {
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub sigma: f64,
}

impl Default for BlobsTask {
    fn default() -> Self {
        Self {
            classes: 4,
            dim: 16,
            separation: 4.0,
            sigma: 1.0,
        }
    }
}

impl BlobsTask {
    pub fn class_mean(&self, class: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        m[class % self.dim] = self.separation * self.sigma;
        m
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> CalibrationSet {
        let noise = Normal::new(0.0, self.sigma).expect("finite sigma");
        let mut inputs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let y = rng.random_range(0..self.classes);
            let mean = self.class_mean(y);
            inputs.push(mean.iter().map(|m| m + noise.sample(rng)).collect());
            labels.push(y);
        }
        CalibrationSet { inputs, labels }
    }
}

/// Default split sizes for the blobs task.
pub const TRAIN_SIZE: usize = 2000;
pub const EVAL_SIZE: usize = 500;
pub const CALIBRATION_SIZE: usize = 500;

/// Train, evaluation and calibration sets drawn in that order from one stream.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: CalibrationSet,
    pub eval: CalibrationSet,
    pub calibration: CalibrationSet,
}

impl BlobsTask {
    pub fn splits(&self, rng: &mut Rng) -> Splits {
        Splits {
            train: self.sample(TRAIN_SIZE, rng),
            eval: self.sample(EVAL_SIZE, rng),
            calibration: self.sample(CALIBRATION_SIZE, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn blobs_are_seeded() {
        let task = BlobsTask::default();
        let a = task.sample(20, &mut rng::from_seed(3));
        let b = task.sample(20, &mut rng::from_seed(3));
        assert_eq!(a, b);
        assert_eq!(a.dim(), 16);
        assert!(a.labels.iter().all(|&y| y < 4));
    }

    #[test]
    fn json_shape() {
        let set = CalibrationSet::new(vec![vec![1.0, 2.0]], vec![1]).unwrap();
        assert_eq!(set.to_json().unwrap(), r#"{"inputs":[[1.0,2.0]],"labels":[1]}"#);
        assert!(CalibrationSet::from_json(r#"{"inputs":[],"labels":[]}"#).is_err());
        assert!(CalibrationSet::from_json(r#"{"inputs":[[1.0]],"labels":[0,1]}"#).is_err());
    }
}
