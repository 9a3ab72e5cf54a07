//! Pretrains the residual FFN stack, prunes it with random masks and
//! checks that masking and physically removing neurons agree.

use layerprune::data::BlobsTask;
use layerprune::model::{random_masks, MaskSet, PretrainConfig, TargetModel, TargetModelSpec};
use layerprune::rng;

fn main() -> layerprune::Result<()> {
    let splits = BlobsTask::default().splits(&mut rng::stream(0, rng::STREAM_DATA));
    let mut model = TargetModel::build(TargetModelSpec::default(), rng::derive_seed(0, rng::STREAM_MODEL))?;
    let report = model.pretrain(&splits.train, &PretrainConfig::default())?;
    println!("train accuracy {:.3}", report.train_accuracy);

    let widths = model.widths().to_vec();
    let dense = model.evaluate(&MaskSet::all_ones(&widths), &splits.eval)?;
    println!("dense eval accuracy {:.3} over widths {widths:?}", dense.accuracy);

    let x = splits.eval.to_matrix();
    let mut r = rng::from_seed(1);
    for keep in [0.9, 0.5, 0.2] {
        let masks = random_masks(&widths, keep, &mut r);
        let masked = model.apply_masks(&masks)?;
        let shrunk = model.shrink(&masks)?;
        let same = masked.forward(&x).values() == shrunk.forward(&x).values();
        println!(
            "keep p={keep}: widths {:?}, accuracy {:.3}, shrunk model identical: {same}",
            shrunk.widths(),
            masked.evaluate(&splits.eval)?.accuracy
        );
    }
    Ok(())
}
