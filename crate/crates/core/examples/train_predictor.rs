//! Builds a small MCTS dataset, trains each predictor backbone on it and
//! prints one-shot predictions projected onto the budget.

use layerprune::data::BlobsTask;
use layerprune::importance::{self, Metric};
use layerprune::model::{PretrainConfig, TargetModel, TargetModelSpec};
use layerprune::predictor::{project_to_constraint, train, Backbone, Predictor, PredictorConfig, TrainConfig};
use layerprune::rng;
use layerprune::search::{budget_grid, generate_dataset, PrunedAccuracy, SearchBudget};

fn main() -> layerprune::Result<()> {
    let splits = BlobsTask::default().splits(&mut rng::stream(0, rng::STREAM_DATA));
    let mut model = TargetModel::build(TargetModelSpec::default(), rng::derive_seed(0, rng::STREAM_MODEL))?;
    model.pretrain(&splits.train, &PretrainConfig::default())?;
    let table = importance::score(Metric::ActivationL2, &model, &splits.calibration)?;
    let reward = PrunedAccuracy {
        model: &model,
        importance: &table,
        eval_set: &splits.eval,
    };
    let grid = budget_grid(0.1, 0.7, 0.05)?;
    let budget = SearchBudget {
        simulations: 100,
        eval_cap: 60,
        ..SearchBudget::default()
    };
    let samples = generate_dataset(&reward, &grid, &budget)?;
    println!("{} samples", samples.len());

    for bb in Backbone::ALL {
        let mut cfg = PredictorConfig::with_backbone(bb, model.num_layers());
        cfg.hidden_dim = 32;
        let mut p = Predictor::new(cfg, 0)?;
        let rep = train(&mut p, &samples, &TrainConfig::default())?;
        let raw = p.predict(0.4)?;
        let theta = project_to_constraint(&raw.0, 0.4)?;
        println!(
            "{bb:>20}: loss {:.4} -> {:.4}, b=0.4 -> {:.3?}",
            rep.epoch_losses[0],
            rep.epoch_losses.last().unwrap(),
            theta.0
        );
    }
    Ok(())
}
