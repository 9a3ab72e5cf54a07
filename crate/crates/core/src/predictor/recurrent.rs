//! Bidirectional LSTM predictor: the projected budget is replicated across
//! all positions and read in both directions; a shared sigmoid head maps
//! each concatenated hidden state to one ratio.

use super::{dense, PredictorConfig};
use crate::autodiff::{Graph, Matrix, NodeId, ParamStore};
use crate::error::Result;
use crate::init;
use crate::rng::Rng;

pub(crate) const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

pub(crate) fn init_params(cfg: &PredictorConfig, rng: &mut Rng) -> ParamStore {
    let d = cfg.hidden_dim;
    let mut s = ParamStore::new();
    s.insert("lstm.proj.w", init::xavier_uniform(1, d, 1, d, rng));
    s.insert("lstm.proj.b", init::bias_uniform(d, 1, rng));
    for dir in DIRECTIONS {
        // gate columns: input, forget, candidate, output
        s.insert(format!("lstm.{dir}.wx"), init::xavier_uniform(d, 4 * d, d, 4 * d, rng));
        s.insert(format!("lstm.{dir}.wh"), init::xavier_uniform(d, 4 * d, d, 4 * d, rng));
        s.insert(format!("lstm.{dir}.b"), init::bias_uniform(4 * d, d, rng));
    }
    s.insert("head.w", init::xavier_uniform(2 * d, 1, 2 * d, 1, rng));
    s.insert("head.b", init::bias_uniform(1, 2 * d, rng));
    s
}

fn run_direction(
    g: &mut Graph,
    store: &ParamStore,
    d: usize,
    z: NodeId,
    dir: &str,
    steps: usize,
) -> Result<Vec<NodeId>> {
    let wx = g.param_named(store, &format!("lstm.{dir}.wx"))?;
    let wh = g.param_named(store, &format!("lstm.{dir}.wh"))?;
    let bias = g.param_named(store, &format!("lstm.{dir}.b"))?;
    // every position sees the same input
    let xw = g.matmul(z, wx);
    let xw = g.add(xw, bias);
    let mut h = g.input(Matrix::zeros(1, d));
    let mut c = g.input(Matrix::zeros(1, d));
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let hw = g.matmul(h, wh);
        let gates = g.add(xw, hw);
        let i = g.slice_cols(gates, 0, d);
        let i = g.sigmoid(i);
        let f = g.slice_cols(gates, d, d);
        let f = g.sigmoid(f);
        let cand = g.slice_cols(gates, 2 * d, d);
        let cand = g.tanh(cand);
        let o = g.slice_cols(gates, 3 * d, d);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c);
        let write = g.mul(i, cand);
        c = g.add(keep, write);
        let tc = g.tanh(c);
        h = g.mul(o, tc);
        out.push(h);
    }
    Ok(out)
}

pub(crate) fn bilstm_graph(g: &mut Graph, store: &ParamStore, cfg: &PredictorConfig, b: f64) -> Result<NodeId> {
    let d = cfg.hidden_dim;
    let l = cfg.sequence_length;
    let bn = g.input(Matrix::scalar(b));
    let z = dense(g, store, bn, "lstm.proj.w", "lstm.proj.b")?;
    let fwd = run_direction(g, store, d, z, DIRECTIONS[0], l)?;
    let mut bwd = run_direction(g, store, d, z, DIRECTIONS[1], l)?;
    bwd.reverse();
    let rows: Vec<NodeId> = fwd
        .iter()
        .zip(&bwd)
        .map(|(&f, &b)| g.concat_cols(vec![f, b]))
        .collect();
    let hs = if rows.len() == 1 { rows[0] } else { g.concat_rows(rows) };
    let y = dense(g, store, hs, "head.w", "head.b")?;
    let y = g.sigmoid(y);
    Ok(g.transpose(y))
}
