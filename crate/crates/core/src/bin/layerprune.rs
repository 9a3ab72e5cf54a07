use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use layerprune::importance::Metric;
use layerprune::model::{PretrainConfig, TargetModelSpec};
use layerprune::pipeline::{self, io, BenchSettings, BudgetOverrides, PipelineConfig};
use layerprune::predictor::{Backbone, TrainConfig};
use layerprune::search::parse_budget_grid;
use layerprune::{Error, Result};

#[derive(Parser)]
#[command(name = "layerprune", version, about = "Layer-wise pruning ratio search and prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Out {
    /// Run directory holding artifacts and manifest.json.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct Budget {
    #[arg(long)]
    simulations: Option<usize>,
    #[arg(long)]
    eval_cap: Option<usize>,
}

impl Budget {
    fn overrides(&self) -> BudgetOverrides {
        BudgetOverrides {
            simulations: self.simulations,
            eval_cap: self.eval_cap,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build and pretrain the toy model; starts a new manifest.
    Pretrain {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON file with the model spec; defaults to 6 blocks of width 64.
        #[arg(long)]
        model_spec: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        out: Out,
    },
    /// Score neuron importance on the calibration set.
    Calibrate {
        #[arg(long, default_value = "activation-l2")]
        metric: String,
        #[command(flatten)]
        out: Out,
    },
    /// One MCTS search at budget b.
    Search {
        #[arg(long)]
        b: f64,
        #[command(flatten)]
        budget: Budget,
        #[command(flatten)]
        out: Out,
    },
    /// One search per budget on a start:stop:step grid.
    GenDataset {
        #[arg(long, default_value = "0.10:0.70:0.025")]
        b_grid: String,
        #[command(flatten)]
        budget: Budget,
        #[command(flatten)]
        out: Out,
    },
    /// Train the budget-to-ratio predictor on the dataset.
    TrainPredictor {
        #[arg(long, default_value = "transformer-ar")]
        backbone: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        out: Out,
    },
    /// Predict per-layer ratios for one or more budgets.
    Predict {
        #[arg(long, required = true, num_args = 1..)]
        b: Vec<f64>,
        #[command(flatten)]
        out: Out,
    },
    /// Time and score pruning methods against the MCTS reference.
    Bench {
        #[arg(long, num_args = 1.., default_values_t = [0.2, 0.3, 0.5])]
        b: Vec<f64>,
        #[arg(long, default_value = "lop,mcts,magnitude,wanda,uniform,random")]
        methods: String,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[command(flatten)]
        budget: Budget,
        #[command(flatten)]
        out: Out,
    },
    /// Every stage in order. With --manifest, replays a recorded run.
    Run {
        /// pipeline.json written by an earlier run.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        model_spec: Option<PathBuf>,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        b_grid: Option<String>,
        #[arg(long)]
        backbone: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, num_args = 1..)]
        b: Option<Vec<f64>>,
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[command(flatten)]
        budget: Budget,
        #[command(flatten)]
        out: Out,
    },
}

fn model_spec(path: Option<&Path>) -> Result<TargetModelSpec> {
    match path {
        Some(p) => io::read_json(p),
        None => Ok(TargetModelSpec::default()),
    }
}

fn train_config(epochs: Option<usize>, batch_size: Option<usize>, lr: Option<f64>, base: TrainConfig) -> TrainConfig {
    TrainConfig {
        epochs: epochs.unwrap_or(base.epochs),
        batch_size: batch_size.unwrap_or(base.batch_size),
        learning_rate: lr.unwrap_or(base.learning_rate),
        ..base
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Pretrain {
            seed,
            model_spec: spec,
            epochs,
            batch_size,
            lr,
            out,
        } => {
            let d = PretrainConfig::default();
            let cfg = PretrainConfig {
                epochs: epochs.unwrap_or(d.epochs),
                batch_size: batch_size.unwrap_or(d.batch_size),
                learning_rate: lr.unwrap_or(d.learning_rate),
                seed,
            };
            let summary = pipeline::cmd_pretrain(&out.out, seed, model_spec(spec.as_deref())?, cfg)?;
            println!(
                "train accuracy {:.4}, eval accuracy {:.4}",
                summary.train_accuracy, summary.eval_accuracy
            );
        }
        Command::Calibrate { metric, out } => {
            let metric: Metric = metric.parse()?;
            pipeline::cmd_calibrate(&out.out, metric)?;
            println!("wrote {}", pipeline::IMPORTANCE_FILE);
        }
        Command::Search { b, budget, out } => {
            let r = pipeline::cmd_search(&out.out, b, &budget.overrides())?;
            println!(
                "b={b} reward {:.4} config {:?} ({} evaluations, {:.2}s)",
                r.best_reward, r.best_config.0, r.unique_evaluations, r.wall_clock_seconds
            );
        }
        Command::GenDataset { b_grid, budget, out } => {
            let grid = parse_budget_grid(&b_grid)?;
            let d = pipeline::cmd_gen_dataset(&out.out, &grid, &budget.overrides())?;
            println!("wrote {} samples to {}", d.samples.len(), pipeline::DATASET_FILE);
        }
        Command::TrainPredictor {
            backbone,
            epochs,
            batch_size,
            lr,
            out,
        } => {
            let backbone: Backbone = backbone.parse()?;
            let cfg = train_config(epochs, batch_size, lr, TrainConfig::default());
            let report = pipeline::cmd_train_predictor(&out.out, backbone, cfg)?;
            if let Some(l) = report.epoch_losses.last() {
                println!("final mean loss {l:.3e}");
            }
        }
        Command::Predict { b, out } => {
            print_json(&pipeline::cmd_predict(&out.out, &b)?)?;
        }
        Command::Bench {
            b,
            methods,
            repetitions,
            budget,
            out,
        } => {
            let settings = BenchSettings {
                budgets: b,
                methods: pipeline::parse_methods(&methods)?,
                repetitions,
            };
            let report = pipeline::cmd_bench(&out.out, &settings, &budget.overrides())?;
            print!("{}", report.to_csv());
        }
        Command::Run {
            manifest,
            seed,
            model_spec: spec,
            metric,
            b_grid,
            backbone,
            epochs,
            batch_size,
            lr,
            b,
            methods,
            repetitions,
            budget,
            out,
        } => {
            let mut cfg = match &manifest {
                Some(p) => pipeline::load_pipeline_config(p)?,
                None => PipelineConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if spec.is_some() {
                cfg.model_spec = model_spec(spec.as_deref())?;
            }
            if let Some(m) = metric {
                cfg.metric = m.parse()?;
            }
            if let Some(g) = b_grid {
                cfg.b_grid = parse_budget_grid(&g)?;
            }
            if let Some(bb) = backbone {
                cfg.backbone = bb.parse()?;
            }
            cfg.train = train_config(epochs, batch_size, lr, cfg.train);
            if let Some(s) = budget.simulations {
                cfg.search_budget.simulations = s;
            }
            if let Some(c) = budget.eval_cap {
                cfg.search_budget.eval_cap = c;
            }
            if let Some(b) = b {
                cfg.bench.budgets = b;
            }
            if let Some(m) = methods {
                cfg.bench.methods = pipeline::parse_methods(&m)?;
            }
            if let Some(r) = repetitions {
                cfg.bench.repetitions = r;
            }
            let m = pipeline::run_pipeline(&out.out, &cfg)?;
            println!("wrote {} artifacts to {}", m.artifacts.len(), out.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> ExitCode {
    let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
    eprintln!("{body}");
    ExitCode::FAILURE
}
