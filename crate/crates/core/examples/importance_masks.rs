//! Scores neurons with each importance metric and turns one pruning
//! configuration into masks under each score.

use layerprune::data::BlobsTask;
use layerprune::importance::{self, config_to_masks, Metric, PruningConfig};
use layerprune::model::{PretrainConfig, TargetModel, TargetModelSpec};
use layerprune::rng;

fn main() -> layerprune::Result<()> {
    let splits = BlobsTask::default().splits(&mut rng::stream(0, rng::STREAM_DATA));
    let mut model = TargetModel::build(TargetModelSpec::default(), rng::derive_seed(0, rng::STREAM_MODEL))?;
    model.pretrain(&splits.train, &PretrainConfig::default())?;
    let widths = model.widths().to_vec();

    let config = PruningConfig(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
    println!("pruning ratios {:?} (mean {:.2})", config.0, config.mean());
    for metric in [Metric::ActivationL2, Metric::Magnitude, Metric::Wanda] {
        let table = importance::score(metric, &model, &splits.calibration)?;
        let masks = config_to_masks(&config, &table, &widths)?;
        let kept: Vec<usize> = (0..widths.len()).map(|l| masks.kept(l)).collect();
        let acc = model.evaluate(&masks, &splits.eval)?.accuracy;
        let mut top: Vec<usize> = (0..widths[0]).collect();
        top.sort_by(|&a, &b| table.layers[0][b].total_cmp(&table.layers[0][a]));
        println!("{metric:>13}: kept {kept:?}, accuracy {acc:.3}, top layer-0 neurons {:?}", &top[..5]);
    }
    Ok(())
}
