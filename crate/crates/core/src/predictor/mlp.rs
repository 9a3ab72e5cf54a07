//! Static regressor: two ReLU hidden layers and a sigmoid output per layer.

use super::{dense, PredictorConfig};
use crate::autodiff::{Graph, Matrix, NodeId, ParamStore};
use crate::error::Result;
use crate::init;
use crate::rng::Rng;

pub(crate) fn init_params(cfg: &PredictorConfig, rng: &mut Rng) -> ParamStore {
    let d = cfg.hidden_dim;
    let l = cfg.sequence_length;
    let mut s = ParamStore::new();
    s.insert("mlp.w1", init::xavier_uniform(1, d, 1, d, rng));
    s.insert("mlp.b1", init::bias_uniform(d, 1, rng));
    s.insert("mlp.w2", init::xavier_uniform(d, d, d, d, rng));
    s.insert("mlp.b2", init::bias_uniform(d, d, rng));
    s.insert("mlp.w3", init::xavier_uniform(d, l, d, l, rng));
    s.insert("mlp.b3", init::bias_uniform(l, d, rng));
    s
}

pub(crate) fn mlp_graph(g: &mut Graph, store: &ParamStore, b: f64) -> Result<NodeId> {
    let x = g.input(Matrix::scalar(b));
    let h = dense(g, store, x, "mlp.w1", "mlp.b1")?;
    let h = g.relu(h);
    let h = dense(g, store, h, "mlp.w2", "mlp.b2")?;
    let h = g.relu(h);
    let y = dense(g, store, h, "mlp.w3", "mlp.b3")?;
    Ok(g.sigmoid(y))
}
