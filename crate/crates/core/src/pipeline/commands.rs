//! One function per CLI subcommand. Every command reads its inputs from a
//! run directory, checks them against the manifest fingerprints, writes its
//! artifacts atomically and records them in the manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bench::{self, measure_speedup, time_median, BenchReport, Method, Strategy};
use super::io;
use super::manifest::RunManifest;
use crate::data::{BlobsTask, CalibrationSet};
use crate::error::{Error, Result};
use crate::importance::{self, config_to_masks, ImportanceTable, Metric, PruningConfig};
use crate::model::{MaskSet, PretrainConfig, TargetModel, TargetModelSpec};
use crate::predictor::{project_to_constraint, train, Backbone, Predictor, PredictorConfig, Provenance, TrainConfig};
use crate::rng;
use crate::search::{
    default_budget_grid, generate_dataset, random_search_baseline, run_search, search_seed, ConstraintSpec, Dataset,
    PrunedAccuracy, SearchBudget, SearchResult,
};

pub const MODEL_FILE: &str = "model.json";
pub const EVAL_SET_FILE: &str = "eval_set.json";
pub const CALIBRATION_FILE: &str = "calibration_set.json";
pub const PRETRAIN_FILE: &str = "pretrain.json";
pub const IMPORTANCE_FILE: &str = "importance.json";
pub const DATASET_FILE: &str = "dataset.json";
pub const PREDICTOR_FILE: &str = "predictor.json";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const PREDICTION_FILE: &str = "prediction.json";
pub const BENCH_FILE: &str = "bench.csv";
pub const BENCH_META_FILE: &str = "bench_meta.json";

pub fn search_file(b: f64) -> String {
    format!("search_b{b:.4}.json")
}

pub fn trace_file(b: f64) -> String {
    format!("search_b{b:.4}.trace.jsonl")
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    io::atomic_write(&dir.join(name), s.as_bytes())
}

fn write_artifact(dir: &Path, manifest: &mut RunManifest, name: &str, bytes: &[u8]) -> Result<()> {
    io::atomic_write(&dir.join(name), bytes)?;
    manifest.record(dir, name)
}

fn load_model(dir: &Path, m: &RunManifest) -> Result<TargetModel> {
    m.verify(dir, MODEL_FILE)?;
    io::read_with(&dir.join(MODEL_FILE), TargetModel::from_json)
}

fn load_set(dir: &Path, m: &RunManifest, name: &str) -> Result<CalibrationSet> {
    m.verify(dir, name)?;
    io::read_with(&dir.join(name), CalibrationSet::from_json)
}

fn load_importance(dir: &Path, m: &RunManifest, model: &TargetModel) -> Result<ImportanceTable> {
    m.verify(dir, IMPORTANCE_FILE)?;
    let t = io::read_with(&dir.join(IMPORTANCE_FILE), ImportanceTable::from_json)?;
    if t.widths() != model.widths() {
        return Err(io::schema_error(
            &dir.join(IMPORTANCE_FILE),
            "layer widths do not match the model",
        ));
    }
    Ok(t)
}

fn load_dataset(dir: &Path, m: &RunManifest) -> Result<Dataset> {
    m.verify(dir, DATASET_FILE)?;
    let d = io::read_with(&dir.join(DATASET_FILE), Dataset::from_json)?;
    let model_fp = m.fingerprint(MODEL_FILE).unwrap_or_default();
    if d.model_fingerprint != model_fp {
        return Err(Error::Fingerprint {
            what: "model referenced by dataset".into(),
            expected: model_fp.to_string(),
            found: d.model_fingerprint,
        });
    }
    Ok(d)
}

fn load_predictor(dir: &Path, m: &RunManifest) -> Result<Predictor> {
    m.verify(dir, PREDICTOR_FILE)?;
    let p = io::read_with(&dir.join(PREDICTOR_FILE), Predictor::from_json)?;
    if let Some(fp) = &p.provenance().dataset_fingerprint {
        let expected = m.fingerprint(DATASET_FILE).unwrap_or_default();
        if fp != expected {
            return Err(Error::Fingerprint {
                what: "dataset referenced by predictor".into(),
                expected: expected.to_string(),
                found: fp.clone(),
            });
        }
    }
    Ok(p)
}

fn metric_of(m: &RunManifest) -> Result<Metric> {
    m.metric
        .ok_or_else(|| Error::InvalidArgument("no metric recorded; run calibrate first".into()))
}

/// Base seed of every search in the run; each budget derives its own.
pub fn search_base_seed(seed: u64) -> u64 {
    rng::derive_seed(seed, rng::STREAM_SEARCH)
}

fn predictor_init_seed(seed: u64) -> u64 {
    rng::derive_seed(rng::derive_seed(seed, rng::STREAM_TRAIN), "init")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
    pub epoch_losses: Vec<f64>,
}

/// Builds the blobs splits and a model from `seed`, pretrains it and starts
/// a fresh manifest in `dir`.
pub fn cmd_pretrain(dir: &Path, seed: u64, spec: TargetModelSpec, config: PretrainConfig) -> Result<PretrainSummary> {
    spec.validate()?;
    let config = PretrainConfig { seed, ..config };
    let task = BlobsTask {
        classes: spec.num_classes,
        dim: spec.input_dim,
        ..BlobsTask::default()
    };
    let splits = task.splits(&mut rng::stream(seed, rng::STREAM_DATA));
    let mut model = TargetModel::build(spec.clone(), rng::derive_seed(seed, rng::STREAM_MODEL))?;
    let report = model.pretrain(&splits.train, &config)?;
    let eval_accuracy = model.evaluate(&MaskSet::all_ones(model.widths()), &splits.eval)?.accuracy;
    let summary = PretrainSummary {
        train_accuracy: report.train_accuracy,
        eval_accuracy,
        epoch_losses: report.epoch_losses,
    };
    let mut m = RunManifest::new(seed, spec, config);
    write_artifact(dir, &mut m, MODEL_FILE, model.to_json()?.as_bytes())?;
    write_artifact(dir, &mut m, EVAL_SET_FILE, splits.eval.to_json()?.as_bytes())?;
    write_artifact(dir, &mut m, CALIBRATION_FILE, splits.calibration.to_json()?.as_bytes())?;
    write_json(dir, PRETRAIN_FILE, &summary)?;
    m.record(dir, PRETRAIN_FILE)?;
    m.save(dir)?;
    Ok(summary)
}

/// Scores every FFN neuron of the model on the calibration set.
pub fn cmd_calibrate(dir: &Path, metric: Metric) -> Result<ImportanceTable> {
    let mut m = RunManifest::load(dir)?;
    let model = load_model(dir, &m)?;
    let calib = load_set(dir, &m, CALIBRATION_FILE)?;
    let table = importance::score(metric, &model, &calib)?;
    write_artifact(dir, &mut m, IMPORTANCE_FILE, table.to_json()?.as_bytes())?;
    m.metric = Some(metric);
    m.save(dir)?;
    Ok(table)
}

/// Optional overrides of the search budget.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BudgetOverrides {
    pub simulations: Option<usize>,
    pub eval_cap: Option<usize>,
}

fn resolve_budget(m: &RunManifest, o: &BudgetOverrides) -> SearchBudget {
    let mut b = m.search_budget.clone().unwrap_or_default();
    if let Some(s) = o.simulations {
        b.simulations = s;
    }
    if let Some(c) = o.eval_cap {
        b.eval_cap = c;
    }
    b.seed = search_base_seed(m.seed);
    b
}

#[derive(Serialize)]
struct SearchDocument<'a> {
    b: f64,
    metric: Metric,
    model_fingerprint: &'a str,
    budget: &'a SearchBudget,
    best_config: &'a PruningConfig,
    best_reward: f64,
    unique_evaluations: usize,
    simulations_run: usize,
    timing: SearchTiming,
}

#[derive(Serialize)]
struct SearchTiming {
    wall_clock_seconds: f64,
}

/// One MCTS search at budget `b`, with its evaluation trace.
pub fn cmd_search(dir: &Path, b: f64, overrides: &BudgetOverrides) -> Result<SearchResult> {
    let mut m = RunManifest::load(dir)?;
    let constraint = ConstraintSpec::new(b)?;
    constraint.ensure_feasible()?;
    let model = load_model(dir, &m)?;
    let eval = load_set(dir, &m, EVAL_SET_FILE)?;
    let table = load_importance(dir, &m, &model)?;
    let metric = metric_of(&m)?;
    let base = resolve_budget(&m, overrides);
    let run = SearchBudget {
        seed: search_seed(base.seed, b),
        ..base.clone()
    };
    let res = run_search(&model, &table, &eval, &constraint, &run)?;
    let doc = SearchDocument {
        b,
        metric,
        model_fingerprint: m.fingerprint(MODEL_FILE).unwrap_or_default(),
        budget: &run,
        best_config: &res.best_config,
        best_reward: res.best_reward,
        unique_evaluations: res.unique_evaluations,
        simulations_run: res.simulations_run,
        timing: SearchTiming {
            wall_clock_seconds: res.wall_clock_seconds,
        },
    };
    write_json(dir, &search_file(b), &doc)?;
    m.record(dir, &search_file(b))?;
    write_artifact(dir, &mut m, &trace_file(b), res.trace_jsonl()?.as_bytes())?;
    m.search_budget = Some(base);
    m.save(dir)?;
    Ok(res)
}

/// One search per budget in `grid`; samples sorted by budget.
pub fn cmd_gen_dataset(dir: &Path, grid: &[f64], overrides: &BudgetOverrides) -> Result<Dataset> {
    let mut m = RunManifest::load(dir)?;
    if grid.is_empty() {
        return Err(Error::Empty("budget grid"));
    }
    for &b in grid {
        ConstraintSpec::new(b)?.ensure_feasible()?;
    }
    let model = load_model(dir, &m)?;
    let eval = load_set(dir, &m, EVAL_SET_FILE)?;
    let table = load_importance(dir, &m, &model)?;
    let metric = metric_of(&m)?;
    let budget = resolve_budget(&m, overrides);
    let reward = PrunedAccuracy {
        model: &model,
        importance: &table,
        eval_set: &eval,
    };
    let samples = generate_dataset(&reward, grid, &budget)?;
    let dataset = Dataset {
        model_fingerprint: m.fingerprint(MODEL_FILE).unwrap_or_default().to_string(),
        metric: metric.as_str().to_string(),
        samples,
    };
    write_artifact(dir, &mut m, DATASET_FILE, format!("{}\n", dataset.to_json()?).as_bytes())?;
    m.b_grid = Some(grid.to_vec());
    m.search_budget = Some(budget);
    m.save(dir)?;
    Ok(dataset)
}

/// Trains a predictor on the dataset. Zero epochs leaves it untrained.
pub fn cmd_train_predictor(
    dir: &Path,
    backbone: Backbone,
    config: TrainConfig,
) -> Result<crate::predictor::TrainReport> {
    let mut m = RunManifest::load(dir)?;
    let dataset = load_dataset(dir, &m)?;
    let pcfg = PredictorConfig::with_backbone(backbone, dataset.num_layers());
    let mut predictor = Predictor::new(pcfg.clone(), predictor_init_seed(m.seed))?;
    predictor.set_provenance(Provenance {
        trained: false,
        dataset_fingerprint: m.fingerprint(DATASET_FILE).map(str::to_string),
    });
    let config = TrainConfig { seed: m.seed, ..config };
    let report = train(&mut predictor, &dataset.samples, &config)?;
    write_artifact(dir, &mut m, PREDICTOR_FILE, predictor.to_json()?.as_bytes())?;
    write_artifact(dir, &mut m, LOSS_CURVE_FILE, report.loss_curve_csv().as_bytes())?;
    m.predictor = Some(pcfg);
    m.train = Some(config);
    m.save(dir)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub b: f64,
    pub raw_theta: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionTiming {
    pub seconds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub backbone: Backbone,
    pub provenance: String,
    pub predictions: Vec<PredictionEntry>,
    pub timing: PredictionTiming,
}

/// Predicts and projects a configuration for every budget in `budgets`.
pub fn cmd_predict(dir: &Path, budgets: &[f64]) -> Result<PredictionRecord> {
    let mut m = RunManifest::load(dir)?;
    if budgets.is_empty() {
        return Err(Error::Empty("budgets"));
    }
    for &b in budgets {
        ConstraintSpec::new(b)?.ensure_feasible()?;
    }
    let predictor = load_predictor(dir, &m)?;
    let mut predictions = Vec::with_capacity(budgets.len());
    let mut seconds = Vec::with_capacity(budgets.len());
    for &b in budgets {
        let (raw, secs) = predictor.predict_timed(b)?;
        let theta = project_to_constraint(&raw.0, b)?;
        predictions.push(PredictionEntry {
            b,
            raw_theta: raw.0,
            theta: theta.0,
        });
        seconds.push(secs);
    }
    let record = PredictionRecord {
        backbone: predictor.backbone(),
        provenance: predictor.provenance().label().to_string(),
        predictions,
        timing: PredictionTiming { seconds },
    };
    write_json(dir, PREDICTION_FILE, &record)?;
    m.record(dir, PREDICTION_FILE)?;
    m.save(dir)?;
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub budgets: Vec<f64>,
    pub methods: Vec<Method>,
    pub repetitions: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            budgets: vec![0.2, 0.3, 0.5],
            methods: Method::ALL.to_vec(),
            repetitions: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchMeta {
    pub reference: String,
    pub note: String,
    pub predictor_provenance: Option<String>,
    pub dense_accuracy: f64,
    pub settings: BenchSettings,
}

/// Times and scores every requested method at every budget. Speedups are
/// relative to one full MCTS search, which is always timed.
pub fn cmd_bench(dir: &Path, settings: &BenchSettings, overrides: &BudgetOverrides) -> Result<BenchReport> {
    let mut m = RunManifest::load(dir)?;
    if settings.budgets.is_empty() || settings.methods.is_empty() {
        return Err(Error::Empty("bench budgets or methods"));
    }
    for &b in &settings.budgets {
        ConstraintSpec::new(b)?.ensure_feasible()?;
    }
    let model = load_model(dir, &m)?;
    let eval = load_set(dir, &m, EVAL_SET_FILE)?;
    let calib = load_set(dir, &m, CALIBRATION_FILE)?;
    let table = load_importance(dir, &m, &model)?;
    let predictor = if settings.methods.contains(&Method::Lop) {
        Some(load_predictor(dir, &m)?)
    } else {
        None
    };
    let dataset = if m.artifacts.contains_key(DATASET_FILE) {
        Some(load_dataset(dir, &m)?)
    } else {
        None
    };
    let base = resolve_budget(&m, overrides);
    let layers = model.num_layers();
    let widths = model.widths().to_vec();
    let dense = model.evaluate(&MaskSet::all_ones(&widths), &eval)?.accuracy;
    let reward = PrunedAccuracy {
        model: &model,
        importance: &table,
        eval_set: &eval,
    };
    let score = |masks: &MaskSet| Ok(model.evaluate(masks, &eval)?.accuracy);
    let (table, widths, reward) = (&table, &widths[..], &reward);

    let mut report = BenchReport::default();
    for &b in &settings.budgets {
        let constraint = ConstraintSpec::new(b)?;
        let run = SearchBudget {
            seed: search_seed(base.seed, b),
            ..base.clone()
        };
        let (mcts, mcts_secs) = time_median("mcts", settings.repetitions, || {
            run_search(&model, table, &eval, &constraint, &run)
        })?;
        if let Some(sample) = dataset.as_ref().and_then(|d| d.samples.iter().find(|s| s.b == b)) {
            if sample.reward != mcts.best_reward || sample.theta != mcts.best_config.0 {
                return Err(Error::InvalidArgument(format!(
                    "search at b={b} no longer reproduces the dataset sample (reward {} vs {})",
                    mcts.best_reward, sample.reward
                )));
            }
        }
        let mut strategies: Vec<Strategy<'_, MaskSet>> = Vec::new();
        for &method in &settings.methods {
            let s = match method {
                Method::Mcts => {
                    let cfg = mcts.best_config.clone();
                    // already timed above; rescoring the stored result keeps the row exact
                    Strategy::new(method, move || config_to_masks(&cfg, table, widths))
                }
                Method::Lop => {
                    let p = predictor.as_ref().expect("loaded for lop");
                    Strategy::new(method, move || {
                        let raw = p.predict(b)?;
                        let cfg = project_to_constraint(&raw.0, b)?;
                        config_to_masks(&cfg, table, widths)
                    })
                }
                Method::Magnitude => Strategy::new(method, || {
                    let t = importance::score_magnitude(&model);
                    config_to_masks(&bench::baseline_uniform(b, layers)?, &t, widths)
                }),
                Method::Wanda => Strategy::new(method, || {
                    let t = importance::score(Metric::Wanda, &model, &calib)?;
                    config_to_masks(&bench::baseline_uniform(b, layers)?, &t, widths)
                }),
                Method::Uniform => Strategy::new(method, || {
                    config_to_masks(&bench::baseline_uniform(b, layers)?, table, widths)
                }),
                Method::Random => {
                    let n = mcts.unique_evaluations;
                    let seed = rng::derive_seed(run.seed, "random");
                    Strategy::new(method, move || {
                        let best = random_search_baseline(reward, &constraint, n, seed)?;
                        config_to_masks(&best.config, table, widths)
                    })
                }
            };
            strategies.push(s);
        }
        let mut rows = measure_speedup(strategies, b, settings.repetitions, Some(mcts_secs), dense, &score)?;
        for r in rows.iter_mut().filter(|r| r.method == Method::Mcts) {
            r.strategy_seconds = mcts_secs;
            r.speedup = 1.0;
        }
        report.rows.extend(rows);
    }
    write_artifact(dir, &mut m, BENCH_FILE, report.to_csv().as_bytes())?;
    let meta = BenchMeta {
        reference: Method::Mcts.as_str().to_string(),
        note: "speedup = median MCTS search time / median method time on this machine".into(),
        predictor_provenance: predictor.as_ref().map(|p| p.provenance().label().to_string()),
        dense_accuracy: dense,
        settings: settings.clone(),
    };
    write_json(dir, BENCH_META_FILE, &meta)?;
    m.record(dir, BENCH_META_FILE)?;
    m.bench = Some(settings.clone());
    m.save(dir)?;
    Ok(report)
}

/// Settings of a complete run, stored in the manifest so it can be replayed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub model_spec: TargetModelSpec,
    pub pretrain: PretrainConfig,
    pub metric: Metric,
    pub b_grid: Vec<f64>,
    pub search_budget: SearchBudget,
    pub backbone: Backbone,
    pub train: TrainConfig,
    pub bench: BenchSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model_spec: TargetModelSpec::default(),
            pretrain: PretrainConfig::default(),
            metric: Metric::ActivationL2,
            b_grid: default_budget_grid(),
            search_budget: SearchBudget::default(),
            backbone: Backbone::TransformerAr,
            train: TrainConfig::default(),
            bench: BenchSettings::default(),
        }
    }
}

/// Document written next to the manifest by [`run_pipeline`].
pub const PIPELINE_FILE: &str = "pipeline.json";

/// pretrain → calibrate → gen-dataset → train-predictor → predict → bench.
pub fn run_pipeline(dir: &Path, cfg: &PipelineConfig) -> Result<RunManifest> {
    cmd_pretrain(dir, cfg.seed, cfg.model_spec.clone(), cfg.pretrain.clone())?;
    write_json(dir, PIPELINE_FILE, cfg)?;
    let mut m = RunManifest::load(dir)?;
    m.record(dir, PIPELINE_FILE)?;
    m.search_budget = Some(SearchBudget {
        seed: search_base_seed(cfg.seed),
        ..cfg.search_budget.clone()
    });
    m.save(dir)?;
    cmd_calibrate(dir, cfg.metric)?;
    let none = BudgetOverrides::default();
    cmd_gen_dataset(dir, &cfg.b_grid, &none)?;
    cmd_train_predictor(dir, cfg.backbone, cfg.train.clone())?;
    cmd_predict(dir, &cfg.bench.budgets)?;
    cmd_bench(dir, &cfg.bench, &none)?;
    RunManifest::load(dir)
}

/// Reads the pipeline settings recorded by an earlier [`run_pipeline`].
pub fn load_pipeline_config(path: &Path) -> Result<PipelineConfig> {
    io::read_json(path)
}
