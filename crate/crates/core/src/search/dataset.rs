//! Supervision pairs `(b, θ*)` produced by one search per budget.

use serde::{Deserialize, Serialize};

use super::mcts::{search, ConstraintSpec, RewardModel, SearchBudget};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub b: f64,
    pub theta: Vec<f64>,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub model_fingerprint: String,
    pub metric: String,
    pub samples: Vec<TrainingSample>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Empty("dataset samples"));
        }
        let layers = self.samples[0].theta.len();
        for s in &self.samples {
            if s.theta.len() != layers {
                return Err(Error::LengthMismatch {
                    what: "theta length",
                    expected: layers,
                    actual: s.theta.len(),
                });
            }
            if !s.b.is_finite() || s.theta.iter().any(|t| !t.is_finite()) || !s.reward.is_finite() {
                return Err(Error::InvalidArgument("non-finite value in dataset".into()));
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.samples.first().map_or(0, |s| s.theta.len())
    }

    pub fn sort_by_budget(&mut self) {
        self.samples.sort_by(|a, b| a.b.total_cmp(&b.b));
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: Dataset = serde_json::from_str(s)?;
        d.validate()?;
        Ok(d)
    }
}

/// Inclusive grid `start, start + step, ..., stop`, rounded to 1e-9.
pub fn budget_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !step.is_finite() || step <= 0.0 || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(Error::InvalidArgument(format!(
            "bad budget grid {start}:{stop}:{step}"
        )));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect())
}

/// Parses `start:stop:step`.
pub fn parse_budget_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!("expected start:stop:step, got {s:?}")));
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad number {p:?} in budget grid")))?;
    }
    budget_grid(v[0], v[1], v[2])
}

/// 0.10 to 0.70 in steps of 0.025.
pub fn default_budget_grid() -> Vec<f64> {
    budget_grid(0.10, 0.70, 0.025).expect("static grid")
}

/// Seed of the search run for budget `b`.
pub fn search_seed(base: u64, b: f64) -> u64 {
    rng::derive_seed(base, &format!("b={b:.6}"))
}

/// Runs one search per budget and returns samples sorted by `b`.
/// `budget.seed` is the base seed; each budget gets its own derived seed.
pub fn generate_dataset<R: RewardModel + ?Sized>(
    reward: &R,
    b_grid: &[f64],
    budget: &SearchBudget,
) -> Result<Vec<TrainingSample>> {
    if b_grid.is_empty() {
        return Err(Error::Empty("budget grid"));
    }
    let mut out = Vec::with_capacity(b_grid.len());
    for &b in b_grid {
        let run = SearchBudget {
            seed: search_seed(budget.seed, b),
            ..budget.clone()
        };
        let (res, _) = search(reward, &ConstraintSpec::new(b)?, &run)?;
        out.push(TrainingSample {
            b,
            theta: res.best_config.0,
            reward: res.best_reward,
        });
    }
    out.sort_by(|a, b| a.b.total_cmp(&b.b));
    Ok(out)
}
