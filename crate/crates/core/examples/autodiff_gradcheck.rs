//! Fits a tiny two-layer regressor with Adam and checks its gradients
//! against central differences before training.

use layerprune::autodiff::{grad_check, Graph, Matrix, OptimizerState, ParamStore, FD_STEP};
use layerprune::{init, rng};

fn main() -> layerprune::Result<()> {
    let mut r = rng::from_seed(0);
    let mut store = ParamStore::new();
    store.insert("w1", init::xavier_uniform(2, 8, 2, 8, &mut r));
    store.insert("b1", Matrix::zeros(1, 8));
    store.insert("w2", init::xavier_uniform(8, 1, 8, 1, &mut r));
    store.insert("b2", Matrix::zeros(1, 1));

    // y = sin(x0) + x1^2 on a few points
    let xs: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64 / 8.0 - 1.0, (i % 4) as f64 / 2.0 - 0.75]).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x[0].sin() + x[1] * x[1]).collect();
    let x = Matrix::from_rows(&xs)?;
    let y = Matrix::col_vector(ys);

    let build = |store: &ParamStore| -> layerprune::Result<(Graph, layerprune::autodiff::NodeId)> {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let yi = g.input(y.clone());
        let w1 = g.param_named(store, "w1")?;
        let b1 = g.param_named(store, "b1")?;
        let w2 = g.param_named(store, "w2")?;
        let b2 = g.param_named(store, "b2")?;
        let h = g.matmul(xi, w1);
        let h = g.add(h, b1);
        let h = g.tanh(h);
        let o = g.matmul(h, w2);
        let o = g.add(o, b2);
        let loss = g.mse(o, yi);
        Ok((g, loss))
    };

    let (mut g, loss) = build(&store)?;
    let wrt: Vec<_> = g.parameter_nodes().into_iter().map(|(_, n)| n).collect();
    let report = grad_check(&mut g, loss, &wrt, FD_STEP)?;
    println!("max relative gradient error: {:.2e}", report.max_rel_error());

    let mut opt = OptimizerState::adam(&store, 0.05);
    for step in 0..=300 {
        let (mut g, loss) = build(&store)?;
        let value = g.forward(loss)?.values()[0];
        let mut grads = g.backward(loss)?;
        opt.step(&mut store, &mut grads)?;
        if step % 50 == 0 {
            println!("step {step:>3}  mse {value:.5}");
        }
    }
    Ok(())
}
