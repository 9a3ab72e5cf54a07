//! MCTS over per-layer ratios on a 3-layer model, compared with the
//! exhaustive 0.1-grid optimum and a random search of equal size.

use layerprune::data::BlobsTask;
use layerprune::importance::{self, Metric};
use layerprune::model::{PretrainConfig, TargetModel, TargetModelSpec};
use layerprune::rng;
use layerprune::search::{brute_force_oracle, random_search_baseline, search, ConstraintSpec, PrunedAccuracy, SearchBudget};

fn main() -> layerprune::Result<()> {
    let splits = BlobsTask::default().splits(&mut rng::stream(0, rng::STREAM_DATA));
    let mut model = TargetModel::build(TargetModelSpec::uniform(3, 32), rng::derive_seed(0, rng::STREAM_MODEL))?;
    model.pretrain(&splits.train, &PretrainConfig::default())?;
    let table = importance::score(Metric::ActivationL2, &model, &splits.calibration)?;
    let reward = PrunedAccuracy {
        model: &model,
        importance: &table,
        eval_set: &splits.eval,
    };

    for b in [0.3, 0.5] {
        let c = ConstraintSpec::new(b)?;
        let oracle = brute_force_oracle(&reward, &c, 0.1)?;
        let (mcts, tree) = search(&reward, &c, &SearchBudget::default())?;
        let random = random_search_baseline(&reward, &c, mcts.unique_evaluations, 1)?;
        println!("b = {b}");
        println!("  grid optimum  {:.3} at {:?} ({} configs)", oracle.reward, oracle.config.0, oracle.evaluated);
        println!(
            "  mcts          {:.3} at {:.3?} ({} evaluations, {} nodes)",
            mcts.best_reward,
            mcts.best_config.0,
            mcts.unique_evaluations,
            tree.len()
        );
        println!("  random        {:.3} at {:.3?}", random.reward, random.config.0);
    }
    Ok(())
}
