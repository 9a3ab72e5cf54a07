//! Reference searches: exhaustive grid enumeration and rejection-sampled
//! random search.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::mcts::{check_valid, ConstraintSpec, MemoEvaluator, RewardModel, RATIO_MAX, RATIO_MIN};
use crate::error::{Error, Result};
use crate::importance::PruningConfig;
use crate::rng;

/// Largest grid the exhaustive oracle will enumerate.
pub const MAX_GRID_CONFIGS: f64 = 1e6;
/// Random search gives up after this many proposals per requested sample.
pub const MAX_ATTEMPTS_PER_SAMPLE: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub config: PruningConfig,
    pub reward: f64,
    /// Valid configurations scored.
    pub evaluated: usize,
}

/// `0.1, 0.1 + step, ...` up to 1.0 inclusive, rounded to 1e-9.
pub fn grid_values(step: f64) -> Result<Vec<f64>> {
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::InvalidArgument(format!("grid step must be > 0, got {step}")));
    }
    let mut out = Vec::new();
    let mut i = 0usize;
    loop {
        let v = ((RATIO_MIN + i as f64 * step) * 1e9).round() / 1e9;
        if v > RATIO_MAX + 1e-9 {
            break;
        }
        out.push(v);
        i += 1;
    }
    Ok(out)
}

/// Scores every grid configuration satisfying the constraint and returns
/// the best one. Ties keep the lexicographically smallest configuration.
pub fn brute_force_oracle<R: RewardModel + ?Sized>(
    reward: &R,
    constraint: &ConstraintSpec,
    grid_step: f64,
) -> Result<OracleResult> {
    let layers = reward.num_layers();
    if layers == 0 {
        return Err(Error::Empty("layers"));
    }
    let values = grid_values(grid_step)?;
    let total = (values.len() as f64).powi(layers as i32);
    if total > MAX_GRID_CONFIGS {
        return Err(Error::SearchSpaceTooLarge(total));
    }
    let mut eval = MemoEvaluator::new(reward);
    let mut idx = vec![0usize; layers];
    let mut best: Option<(PruningConfig, f64)> = None;
    let mut evaluated = 0;
    loop {
        let cfg = PruningConfig(idx.iter().map(|&i| values[i]).collect());
        if check_valid(&cfg, constraint)? {
            let r = eval.evaluate(&cfg)?;
            evaluated += 1;
            if best.as_ref().is_none_or(|(_, b)| r > *b) {
                best = Some((cfg, r));
            }
        }
        // odometer, last layer fastest, gives lexicographic order
        let mut k = layers;
        loop {
            if k == 0 {
                let (config, reward) = best.ok_or(Error::NoValidConfig(constraint.b))?;
                return Ok(OracleResult {
                    config,
                    reward,
                    evaluated,
                });
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < values.len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Best of `n_samples` configurations drawn uniformly from the valid region
/// `{θ ∈ [0.1, 1]^L : mean(θ) <= b}`.
///
/// Proposals come from whichever of the box `[0.1, 1]^L` or the simplex
/// `Σ(θ - 0.1) <= L(b - 0.1)` has the smaller volume; both contain the valid
/// region, so accepted draws are uniform on it either way.
pub fn random_search_baseline<R: RewardModel + ?Sized>(
    reward: &R,
    constraint: &ConstraintSpec,
    n_samples: usize,
    seed: u64,
) -> Result<OracleResult> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("random search needs at least one sample".into()));
    }
    constraint.ensure_feasible()?;
    let layers = reward.num_layers();
    if layers == 0 {
        return Err(Error::Empty("layers"));
    }
    let mut r = rng::from_seed(seed);
    let width = RATIO_MAX - RATIO_MIN;
    let slack = layers as f64 * (constraint.b - RATIO_MIN);
    let log_box = layers as f64 * width.ln();
    let log_simplex = layers as f64 * slack.ln() - ln_factorial(layers);
    let use_simplex = log_simplex < log_box;

    let mut eval = MemoEvaluator::new(reward);
    let mut best: Option<(PruningConfig, f64)> = None;
    let mut attempts = 0usize;
    let max_attempts = n_samples.saturating_mul(MAX_ATTEMPTS_PER_SAMPLE);
    let mut accepted = 0;
    while accepted < n_samples {
        if attempts >= max_attempts {
            return Err(Error::RejectionRate(constraint.b));
        }
        attempts += 1;
        let ratios: Vec<f64> = if use_simplex {
            let e: Vec<f64> = (0..=layers).map(|_| Exp1.sample(&mut r)).collect();
            let sum: f64 = e.iter().sum();
            e[..layers].iter().map(|x| RATIO_MIN + slack * x / sum).collect()
        } else {
            (0..layers).map(|_| r.random_range(RATIO_MIN..RATIO_MAX)).collect()
        };
        if ratios.iter().any(|&x| x > RATIO_MAX) {
            continue;
        }
        let cfg = PruningConfig(ratios);
        if !check_valid(&cfg, constraint)? {
            continue;
        }
        accepted += 1;
        let v = eval.evaluate(&cfg)?;
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((cfg, v));
        }
    }
    let (config, reward) = best.expect("n_samples >= 1");
    Ok(OracleResult {
        config,
        reward,
        evaluated: accepted,
    })
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::mcts::FnReward;

    #[test]
    fn grid_has_ten_values_at_step_point_one() {
        let g = grid_values(0.1).unwrap();
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[9], 1.0);
        assert_eq!(grid_values(0.025).unwrap().len(), 37);
    }

    #[test]
    fn monotone_single_layer_picks_smallest() {
        let reward = FnReward::new(1, |c: &PruningConfig| 1.0 - c.0[0]);
        let res = brute_force_oracle(&reward, &ConstraintSpec::new(0.5).unwrap(), 0.1).unwrap();
        assert_eq!(res.config.0, vec![0.1]);
    }

    #[test]
    fn enumerates_only_valid_configs() {
        let reward = FnReward::new(3, |_: &PruningConfig| 0.5);
        let res = brute_force_oracle(&reward, &ConstraintSpec::new(0.5).unwrap(), 0.1).unwrap();
        // integer triples in 1..=10 with sum <= 15
        let mut expected = 0;
        for a in 1..=10 {
            for b in 1..=10 {
                for c in 1..=10 {
                    if a + b + c <= 15 {
                        expected += 1;
                    }
                }
            }
        }
        assert_eq!(res.evaluated, expected);
        // flat landscape: ties keep the first config
        assert_eq!(res.config.0, vec![0.1, 0.1, 0.1]);
    }

    #[test]
    fn oversized_grid_is_rejected() {
        let reward = FnReward::new(7, |_: &PruningConfig| 0.5);
        let err = brute_force_oracle(&reward, &ConstraintSpec::new(0.5).unwrap(), 0.1).unwrap_err();
        assert!(matches!(err, Error::SearchSpaceTooLarge(_)));
    }

    #[test]
    fn random_search_requires_samples() {
        let reward = FnReward::new(3, |_: &PruningConfig| 0.5);
        assert!(random_search_baseline(&reward, &ConstraintSpec::new(0.5).unwrap(), 0, 1).is_err());
    }

    #[test]
    fn random_search_is_reproducible_and_valid() {
        let reward = FnReward::new(6, |c: &PruningConfig| c.0[0]);
        let c = ConstraintSpec::new(0.2).unwrap();
        let a = random_search_baseline(&reward, &c, 50, 9).unwrap();
        let b = random_search_baseline(&reward, &c, 50, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.config.mean() <= 0.2 + 1e-12);
        assert!(a.config.0.iter().all(|&x| (0.1..=1.0).contains(&x)));
    }
}
