//! Strategy timing and the bench report.

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::PruningConfig;
use crate::search::ConstraintSpec;

pub const CSV_HEADER: &str = "method,b,accuracy,acc_drop,strategy_seconds,speedup";
/// Attempts made before a zero elapsed time is reported as an error.
pub const TIMING_ATTEMPTS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lop,
    Mcts,
    Magnitude,
    Wanda,
    Uniform,
    Random,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Lop,
        Method::Mcts,
        Method::Magnitude,
        Method::Wanda,
        Method::Uniform,
        Method::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lop => "lop",
            Method::Mcts => "mcts",
            Method::Magnitude => "magnitude",
            Method::Wanda => "wanda",
            Method::Uniform => "uniform",
            Method::Random => "random",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown bench method {s:?}")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Comma-separated method list.
pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    let methods = s
        .split(',')
        .map(|m| m.trim().parse())
        .collect::<Result<Vec<Method>>>()?;
    if methods.is_empty() {
        return Err(Error::Empty("bench methods"));
    }
    Ok(methods)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub b: f64,
    pub accuracy: f64,
    pub acc_drop: f64,
    pub strategy_seconds: f64,
    pub speedup: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method, r.b, r.accuracy, r.acc_drop, r.strategy_seconds, r.speedup
            ));
        }
        s
    }

    pub fn row(&self, method: Method, b: f64) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && r.b == b)
    }
}

/// `θ_l = b` for every layer.
pub fn baseline_uniform(b: f64, layers: usize) -> Result<PruningConfig> {
    ConstraintSpec::new(b)?.ensure_feasible()?;
    if layers == 0 {
        return Err(Error::Empty("layers"));
    }
    Ok(PruningConfig::uniform(b, layers))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall-clock seconds of `repetitions` calls, with the last call's
/// output. A zero median doubles the repetitions and tries again.
pub fn time_median<T>(label: &str, repetitions: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be >= 1".into()));
    }
    let mut reps = repetitions;
    for _ in 0..TIMING_ATTEMPTS {
        let mut times = Vec::with_capacity(reps);
        let mut last = None;
        for _ in 0..reps {
            let start = Instant::now();
            let out = f()?;
            times.push(start.elapsed().as_secs_f64());
            last = Some(out);
        }
        let m = median(times);
        if m > 0.0 {
            return Ok((last.expect("reps >= 1"), m));
        }
        reps *= 2;
    }
    Err(Error::ZeroTiming(label.to_string()))
}

/// A named producer of pruning decisions (configurations or masks).
pub struct Strategy<'a, T> {
    pub method: Method,
    pub produce: Box<dyn FnMut() -> Result<T> + 'a>,
}

impl<'a, T> Strategy<'a, T> {
    pub fn new(method: Method, produce: impl FnMut() -> Result<T> + 'a) -> Self {
        Self {
            method,
            produce: Box::new(produce),
        }
    }
}

/// Times every strategy at budget `b` and scores what it produced.
/// Speedups are relative to `reference_seconds`, or to the `mcts` strategy
/// when no reference time is given.
pub fn measure_speedup<T>(
    strategies: Vec<Strategy<'_, T>>,
    b: f64,
    repetitions: usize,
    reference_seconds: Option<f64>,
    dense_accuracy: f64,
    score: &dyn Fn(&T) -> Result<f64>,
) -> Result<Vec<BenchRow>> {
    let mut timed = Vec::with_capacity(strategies.len());
    for mut s in strategies {
        let (cfg, secs) = time_median(s.method.as_str(), repetitions, &mut s.produce)?;
        timed.push((s.method, cfg, secs));
    }
    let reference = match reference_seconds {
        Some(t) => t,
        None => timed
            .iter()
            .find(|(m, _, _)| *m == Method::Mcts)
            .map(|t| t.2)
            .ok_or_else(|| Error::InvalidArgument("no reference timing for speedup".into()))?,
    };
    timed
        .into_iter()
        .map(|(method, cfg, secs)| {
            let accuracy = score(&cfg)?;
            Ok(BenchRow {
                method,
                b,
                accuracy,
                acc_drop: dense_accuracy - accuracy,
                strategy_seconds: secs,
                speedup: reference / secs,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_baseline() {
        let c = baseline_uniform(0.3, 6).unwrap();
        assert_eq!(c.0, vec![0.3; 6]);
        assert_eq!(c.mean(), 0.3);
        assert!(matches!(baseline_uniform(0.05, 6), Err(Error::InfeasibleBudget(_))));
    }

    #[test]
    fn reference_against_itself() {
        let s = vec![Strategy::new(Method::Mcts, || {
            std::thread::sleep(std::time::Duration::from_millis(1));
            Ok(PruningConfig::uniform(0.3, 2))
        })];
        let rows = measure_speedup(s, 0.3, 1, None, 1.0, &|_| Ok(0.9)).unwrap();
        assert_eq!(rows[0].speedup, 1.0);
        assert!((rows[0].acc_drop - 0.1).abs() < 1e-15);
    }

    #[test]
    fn median_of_times() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn single_repetition_is_one_call() {
        let mut calls = 0;
        let (_, t) = time_median("x", 1, || {
            calls += 1;
            std::thread::sleep(std::time::Duration::from_millis(1));
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 1);
        assert!(t >= 1e-3);
    }

    #[test]
    fn csv_format() {
        let r = BenchReport {
            rows: vec![BenchRow {
                method: Method::Lop,
                b: 0.3,
                accuracy: 0.5,
                acc_drop: 0.25,
                strategy_seconds: 0.5,
                speedup: 2.0,
            }],
        };
        assert_eq!(r.to_csv(), format!("{CSV_HEADER}\nlop,0.3,0.5,0.25,0.5,2\n"));
    }

    #[test]
    fn method_parsing() {
        assert_eq!(parse_methods("lop,mcts").unwrap(), vec![Method::Lop, Method::Mcts]);
        assert!(parse_methods("lop,flap").is_err());
    }
}
