use super::{Graph, NodeId};
use crate::error::{Error, Result};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative errors, so entries whose true gradient
/// is essentially zero are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub node: NodeId,
    pub entries: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares reverse-mode gradients of the scalar `root` against central
/// finite differences for every entry of the listed leaf nodes.
pub fn grad_check(graph: &mut Graph, root: NodeId, wrt: &[NodeId], step: f64) -> Result<GradCheckReport> {
    graph.forward(root)?;
    let grads = graph.backward_retain(root)?;
    let mut report = GradCheckReport::default();
    for &node in wrt {
        let base = graph.value(node).ok_or(Error::NotForwarded(node.index()))?.clone();
        let analytic = grads
            .node(node)
            .cloned()
            .unwrap_or_else(|| super::Matrix::zeros(base.rows(), base.cols()));
        let mut max_rel: f64 = 0.0;
        let mut sum_rel = 0.0;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus.values_mut()[i] += step;
            graph.set_value(node, plus)?;
            let f_plus = scalar(graph.forward(root)?.values());
            let mut minus = base.clone();
            minus.values_mut()[i] -= step;
            graph.set_value(node, minus)?;
            let f_minus = scalar(graph.forward(root)?.values());
            let numeric = (f_plus - f_minus) / (2.0 * step);
            let rel = relative_error(analytic.values()[i], numeric);
            max_rel = max_rel.max(rel);
            sum_rel += rel;
        }
        graph.set_value(node, base.clone())?;
        report.tensors.push(TensorCheck {
            node,
            entries: base.len(),
            max_rel_error: max_rel,
            mean_rel_error: if base.is_empty() { 0.0 } else { sum_rel / base.len() as f64 },
        });
    }
    graph.forward(root)?;
    Ok(report)
}

fn scalar(v: &[f64]) -> f64 {
    v[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Matrix, ParamStore};

    #[test]
    fn linear_model_matches_closed_form() {
        // loss = (w x - t)^2, dloss/dw = 2 (w x - t) x
        for &(w, x, t) in &[(0.3, 1.7, -0.4), (-2.0, 0.5, 1.0), (1.25, -1.1, 0.2)] {
            let mut store = ParamStore::new();
            let wid = store.insert("w", Matrix::scalar(w));
            let mut g = Graph::new();
            let wn = g.param(&store, wid);
            let xn = g.input(Matrix::scalar(x));
            let tn = g.input(Matrix::scalar(t));
            let y = g.matmul(wn, xn);
            let loss = g.mse(y, tn);
            let report = grad_check(&mut g, loss, &[wn], FD_STEP).unwrap();
            assert!(report.max_rel_error() <= 1e-6, "{report:?}");
            let grads = g.backward(loss).unwrap();
            let closed = 2.0 * (w * x - t) * x;
            assert!((grads.param(wid).unwrap().values()[0] - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_root_has_zero_gradient() {
        let mut store = ParamStore::new();
        let wid = store.insert("w", Matrix::row_vector(vec![0.5, -0.5]));
        let mut g = Graph::new();
        let wn = g.param(&store, wid);
        let c = g.input(Matrix::scalar(1.0));
        let root = g.scale(c, 2.0);
        let report = grad_check(&mut g, root, &[wn], FD_STEP).unwrap();
        assert_eq!(report.max_rel_error(), 0.0);
    }
}
