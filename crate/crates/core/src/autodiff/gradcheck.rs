//! Central finite-difference gradient verification.

use super::graph::Graph;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compare reverse-mode gradients of a scalar-valued tensor function
/// against central finite differences over every element of `inputs`.
///
/// Returns the maximum of |g_ad - g_fd| / max(1, |g_fd|). The closure
/// must be a pure function of the input values (stateful layers must
/// clone their state internally per call).
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&Graph, &[Tensor]) -> Result<Tensor>,
{
    for t in inputs {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    let graph = Graph::new();
    let loss = f(&graph, inputs)?;
    if loss.numel() != 1 {
        return Err(Error::Graph(format!(
            "grad_check requires a scalar function, got shape {:?}",
            loss.shape()
        )));
    }
    graph.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let g = Graph::inference();
        Ok(f(&g, inputs)?.item())
    };

    let mut max_err = 0.0f64;
    for (ti, t) in inputs.iter().enumerate() {
        let base = t.data();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += eps;
            t.set_data(&plus);
            let fp = eval(inputs)?;
            let mut minus = base.clone();
            minus[i] -= eps;
            t.set_data(&minus);
            let fm = eval(inputs)?;
            t.set_data(&base);
            let fd = (fp - fm) / (2.0 * eps);
            let err = (analytic[ti][i] - fd).abs() / fd.abs().max(1.0);
            if err > max_err {
                max_err = err;
            }
        }
        t.zero_grad();
    }
    Ok(max_err)
}
