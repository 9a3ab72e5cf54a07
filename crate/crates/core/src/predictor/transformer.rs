//! Transformer predictors.
//!
//! The autoregressive variant reads the sequence `[x0, θ1·e1, ..., θ(L-1)·e(L-1)]`
//! through causally masked encoder blocks; row `l` emits `θ(l+1)`. The
//! parallel variant feeds `x0 + p_l` at every position with no mask.
//! Blocks are post-norm: `h = LN(x + attn(x))`, `out = LN(h + ffn(h))`.

use super::{dense, PredictorConfig};
use crate::autodiff::{layer_norm_row, sigmoid, Activation, Graph, Matrix, NodeId, ParamStore};
use crate::error::{Error, Result};
use crate::init;
use crate::rng::Rng;

pub const EMBEDDING_STD: f64 = 0.02;

pub(crate) fn init_embed(store: &mut ParamStore, d: usize, rng: &mut Rng) {
    store.insert("embed.w1", init::xavier_uniform(1, d, 1, d, rng));
    store.insert("embed.b1", init::bias_uniform(d, 1, rng));
    store.insert("embed.w2", init::xavier_uniform(d, d, d, d, rng));
    store.insert("embed.b2", init::bias_uniform(d, d, rng));
}

pub(crate) fn init_params(cfg: &PredictorConfig, parallel: bool, rng: &mut Rng) -> ParamStore {
    let d = cfg.hidden_dim;
    let l = cfg.sequence_length;
    let ff = cfg.ff_multiplier * d;
    let mut s = ParamStore::new();
    init_embed(&mut s, d, rng);
    if parallel {
        s.insert("pos_emb", init::normal(l, d, EMBEDDING_STD, rng));
    } else {
        s.insert("layer_emb", init::normal(l.saturating_sub(1), d, EMBEDDING_STD, rng));
    }
    for k in 0..cfg.encoder_layers {
        for name in ["wq", "wk", "wv", "wo"] {
            s.insert(format!("enc.{k}.{name}"), init::xavier_uniform(d, d, d, d, rng));
            let bias = format!("enc.{k}.b{}", &name[1..]);
            s.insert(bias, init::bias_uniform(d, d, rng));
        }
        s.insert(format!("enc.{k}.ln1.gamma"), Matrix::filled(1, d, 1.0));
        s.insert(format!("enc.{k}.ln1.beta"), Matrix::zeros(1, d));
        s.insert(format!("enc.{k}.ff.w1"), init::xavier_uniform(d, ff, d, ff, rng));
        s.insert(format!("enc.{k}.ff.b1"), init::bias_uniform(ff, d, rng));
        s.insert(format!("enc.{k}.ff.w2"), init::xavier_uniform(ff, d, ff, d, rng));
        s.insert(format!("enc.{k}.ff.b2"), init::bias_uniform(d, ff, rng));
        s.insert(format!("enc.{k}.ln2.gamma"), Matrix::filled(1, d, 1.0));
        s.insert(format!("enc.{k}.ln2.beta"), Matrix::zeros(1, d));
    }
    // a zero head keeps Adam's first sign-like steps from saturating the sigmoid
    s.insert("out.w", Matrix::zeros(d, 1));
    s.insert("out.b", init::bias_uniform(1, d, rng));
    s
}

/// `x0 = act(b·w1 + b1)·W2 + b2` as a plain row vector.
pub fn embed_constraint(b: f64, store: &ParamStore, act: Activation) -> Result<Matrix> {
    let w1 = store.by_name("embed.w1")?;
    let b1 = store.by_name("embed.b1")?;
    let mut h = w1.scale(b);
    h.add_assign(b1);
    let h = h.map(|v| act.apply(v));
    let mut x0 = h.matmul(store.by_name("embed.w2")?);
    x0.add_assign(store.by_name("embed.b2")?);
    Ok(x0)
}

pub(crate) fn embed_graph(g: &mut Graph, store: &ParamStore, b: f64, act: Activation) -> Result<NodeId> {
    let bn = g.input(Matrix::scalar(b));
    let w1 = g.param_named(store, "embed.w1")?;
    let h = g.matmul(bn, w1);
    let h = dense_bias(g, store, h, "embed.b1")?;
    let h = g.activation(h, act);
    dense(g, store, h, "embed.w2", "embed.b2")
}

fn dense_bias(g: &mut Graph, store: &ParamStore, x: NodeId, bias: &str) -> Result<NodeId> {
    let b = g.param_named(store, bias)?;
    Ok(g.add(x, b))
}

fn encoder_block(g: &mut Graph, store: &ParamStore, cfg: &PredictorConfig, k: usize, x: NodeId, causal: bool) -> Result<NodeId> {
    let p = |n: &str| format!("enc.{k}.{n}");
    let q = dense(g, store, x, &p("wq"), &p("bq"))?;
    let kk = dense(g, store, x, &p("wk"), &p("bk"))?;
    let v = dense(g, store, x, &p("wv"), &p("bv"))?;
    let dh = cfg.hidden_dim / cfg.heads;
    let inv = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = g.slice_cols(q, h * dh, dh);
        let kh = g.slice_cols(kk, h * dh, dh);
        let vh = g.slice_cols(v, h * dh, dh);
        let kt = g.transpose(kh);
        let s = g.matmul(qh, kt);
        let s = g.scale(s, inv);
        let a = g.masked_softmax(s, causal);
        heads.push(g.matmul(a, vh));
    }
    let a = if heads.len() == 1 { heads[0] } else { g.concat_cols(heads) };
    let o = dense(g, store, a, &p("wo"), &p("bo"))?;
    let r = g.add(x, o);
    let h1 = affine_norm(g, store, r, &p("ln1.gamma"), &p("ln1.beta"))?;
    let f = dense(g, store, h1, &p("ff.w1"), &p("ff.b1"))?;
    let f = g.activation(f, cfg.activation);
    let f = dense(g, store, f, &p("ff.w2"), &p("ff.b2"))?;
    let r = g.add(h1, f);
    affine_norm(g, store, r, &p("ln2.gamma"), &p("ln2.beta"))
}

fn affine_norm(g: &mut Graph, store: &ParamStore, x: NodeId, gamma: &str, beta: &str) -> Result<NodeId> {
    let n = g.layer_norm(x);
    let gm = g.param_named(store, gamma)?;
    let n = g.mul(n, gm);
    let bt = g.param_named(store, beta)?;
    Ok(g.add(n, bt))
}

fn encode(g: &mut Graph, store: &ParamStore, cfg: &PredictorConfig, x: NodeId, causal: bool) -> Result<NodeId> {
    let mut h = x;
    for k in 0..cfg.encoder_layers {
        h = encoder_block(g, store, cfg, k, h, causal)?;
    }
    Ok(h)
}

/// Column of `sigmoid(h·w + b)`, one entry per row of `h`.
fn head(g: &mut Graph, store: &ParamStore, h: NodeId) -> Result<NodeId> {
    let z = dense(g, store, h, "out.w", "out.b")?;
    Ok(g.sigmoid(z))
}

/// Teacher-forced pass: `inputs[i]` scales `e(i+1)`. Returns a `1 × L` row.
pub(crate) fn ar_teacher_graph(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &PredictorConfig,
    b: f64,
    inputs: &[f64],
) -> Result<NodeId> {
    let l = cfg.sequence_length;
    if inputs.len() + 1 < l {
        return Err(Error::LengthMismatch {
            what: "teacher-forced inputs",
            expected: l - 1,
            actual: inputs.len(),
        });
    }
    let x0 = embed_graph(g, store, b, cfg.activation)?;
    let x = if l > 1 {
        let e = g.param_named(store, "layer_emb")?;
        let t = g.input(Matrix::col_vector(inputs[..l - 1].to_vec()));
        let scaled = g.mul(e, t);
        g.concat_rows(vec![x0, scaled])
    } else {
        x0
    };
    let h = encode(g, store, cfg, x, true)?;
    let out = head(g, store, h)?;
    Ok(g.transpose(out))
}

/// Free-running pass built step by step so each prediction feeds the next
/// input row. Positions covered by `prefix` use the given values instead.
pub(crate) fn ar_free_graph(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &PredictorConfig,
    b: f64,
    prefix: &[f64],
) -> Result<NodeId> {
    let l = cfg.sequence_length;
    let x0 = embed_graph(g, store, b, cfg.activation)?;
    let e = if l > 1 { Some(g.param_named(store, "layer_emb")?) } else { None };
    let mut rows = vec![x0];
    let mut outs = Vec::with_capacity(l);
    for t in 0..l {
        if t > 0 {
            let scale = match prefix.get(t - 1) {
                Some(&v) => g.input(Matrix::scalar(v)),
                None => outs[t - 1],
            };
            let et = g.slice_rows(e.expect("l > 1"), t - 1, 1);
            rows.push(g.mul(et, scale));
        }
        let x = if rows.len() == 1 { rows[0] } else { g.concat_rows(rows.clone()) };
        let h = encode(g, store, cfg, x, true)?;
        let last = g.slice_rows(h, t, 1);
        outs.push(head(g, store, last)?);
    }
    Ok(if outs.len() == 1 { outs[0] } else { g.concat_cols(outs) })
}

pub(crate) fn parallel_graph(g: &mut Graph, store: &ParamStore, cfg: &PredictorConfig, b: f64) -> Result<NodeId> {
    let l = cfg.sequence_length;
    let x0 = embed_graph(g, store, b, cfg.activation)?;
    let rep = if l == 1 { x0 } else { g.concat_rows(vec![x0; l]) };
    let pos = g.param_named(store, "pos_emb")?;
    let x = g.add(rep, pos);
    let h = encode(g, store, cfg, x, false)?;
    let out = head(g, store, h)?;
    Ok(g.transpose(out))
}

struct BlockWeights<'a> {
    wq: &'a Matrix,
    bq: &'a Matrix,
    wk: &'a Matrix,
    bk: &'a Matrix,
    wv: &'a Matrix,
    bv: &'a Matrix,
    wo: &'a Matrix,
    bo: &'a Matrix,
    g1: &'a Matrix,
    be1: &'a Matrix,
    f1: &'a Matrix,
    fb1: &'a Matrix,
    f2: &'a Matrix,
    fb2: &'a Matrix,
    g2: &'a Matrix,
    be2: &'a Matrix,
}

impl<'a> BlockWeights<'a> {
    fn load(store: &'a ParamStore, k: usize) -> Result<Self> {
        let get = |n: &str| store.by_name(&format!("enc.{k}.{n}"));
        Ok(Self {
            wq: get("wq")?,
            bq: get("bq")?,
            wk: get("wk")?,
            bk: get("bk")?,
            wv: get("wv")?,
            bv: get("bv")?,
            wo: get("wo")?,
            bo: get("bo")?,
            g1: get("ln1.gamma")?,
            be1: get("ln1.beta")?,
            f1: get("ff.w1")?,
            fb1: get("ff.b1")?,
            f2: get("ff.w2")?,
            fb2: get("ff.b2")?,
            g2: get("ln2.gamma")?,
            be2: get("ln2.beta")?,
        })
    }
}

fn row_dense(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut y = x.matmul(w);
    y.add_assign(b);
    y
}

fn row_affine_norm(x: &mut Matrix, gamma: &Matrix, beta: &Matrix) {
    layer_norm_row(x.values_mut());
    for ((v, g), b) in x.values_mut().iter_mut().zip(gamma.values()).zip(beta.values()) {
        *v = *v * g + b;
    }
}

/// Free-running autoregressive inference with cached keys and values:
/// each step runs only the newest row through the encoder.
pub fn ar_infer(store: &ParamStore, cfg: &PredictorConfig, b: f64, prefix: &[f64]) -> Result<Vec<f64>> {
    let l = cfg.sequence_length;
    let d = cfg.hidden_dim;
    let dh = d / cfg.heads;
    let inv = 1.0 / (dh as f64).sqrt();
    let blocks = (0..cfg.encoder_layers)
        .map(|k| BlockWeights::load(store, k))
        .collect::<Result<Vec<_>>>()?;
    let emb = if l > 1 { Some(store.by_name("layer_emb")?) } else { None };
    let out_w = store.by_name("out.w")?;
    let out_b = store.by_name("out.b")?.values()[0];
    // per block: keys and values of every processed position, row-major t×d
    let mut keys: Vec<Vec<f64>> = vec![Vec::with_capacity(l * d); blocks.len()];
    let mut vals: Vec<Vec<f64>> = vec![Vec::with_capacity(l * d); blocks.len()];
    let mut theta = Vec::with_capacity(l);
    let mut scores = vec![0.0; l];
    for t in 0..l {
        let mut x = if t == 0 {
            embed_constraint(b, store, cfg.activation)?
        } else {
            let s = prefix.get(t - 1).copied().unwrap_or(theta[t - 1]);
            Matrix::row_vector(emb.expect("l > 1").row(t - 1).to_vec()).scale(s)
        };
        for (k, w) in blocks.iter().enumerate() {
            let q = row_dense(&x, w.wq, w.bq);
            keys[k].extend_from_slice(row_dense(&x, w.wk, w.bk).values());
            vals[k].extend_from_slice(row_dense(&x, w.wv, w.bv).values());
            let mut att = Matrix::zeros(1, d);
            for h in 0..cfg.heads {
                let qh = &q.values()[h * dh..(h + 1) * dh];
                let mut max = f64::NEG_INFINITY;
                for (j, sc) in scores.iter_mut().enumerate().take(t + 1) {
                    let kh = &keys[k][j * d + h * dh..j * d + (h + 1) * dh];
                    let mut dot = 0.0;
                    for (a, bb) in qh.iter().zip(kh) {
                        dot += a * bb;
                    }
                    *sc = dot * inv;
                    max = max.max(*sc);
                }
                let mut sum = 0.0;
                for sc in scores.iter_mut().take(t + 1) {
                    *sc = (*sc - max).exp();
                    sum += *sc;
                }
                let out = &mut att.values_mut()[h * dh..(h + 1) * dh];
                for (j, sc) in scores.iter().enumerate().take(t + 1) {
                    let p = sc / sum;
                    let vh = &vals[k][j * d + h * dh..j * d + (h + 1) * dh];
                    for (o, v) in out.iter_mut().zip(vh) {
                        *o += p * v;
                    }
                }
            }
            let o = row_dense(&att, w.wo, w.bo);
            let mut h1 = x.clone();
            h1.add_assign(&o);
            row_affine_norm(&mut h1, w.g1, w.be1);
            let f = row_dense(&h1, w.f1, w.fb1).map(|v| cfg.activation.apply(v));
            let f = row_dense(&f, w.f2, w.fb2);
            let mut h2 = h1;
            h2.add_assign(&f);
            row_affine_norm(&mut h2, w.g2, w.be2);
            x = h2;
        }
        let z: f64 = x.values().iter().zip(out_w.values()).map(|(a, b)| a * b).sum::<f64>() + out_b;
        theta.push(sigmoid(z));
    }
    Ok(theta)
}
