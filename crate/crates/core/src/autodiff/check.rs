use super::{Bindings, ExprGraph};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of the graph's single scalar output with
/// central finite differences over every coordinate of every trainable leaf.
/// Returns the worst relative error, using `max(|analytic|, |numeric|, 1e-8)`
/// as the denominator.
pub fn check_gradients(graph: &ExprGraph, bindings: &Bindings, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let (out_name, &out) = match graph.outputs().iter().next() {
        Some(entry) if graph.outputs().len() == 1 => entry,
        _ => return Err(Error::InvalidArgument("graph must have exactly one output".into())),
    };
    let out_name = out_name.clone();
    let params = graph.param_names();
    let names: Vec<&str> = params.iter().map(String::as_str).collect();
    let grad_graph = graph.gradient(&out_name, &names)?;
    let analytic = grad_graph.evaluate(bindings)?;

    let mut worst: f64 = 0.0;
    for name in &params {
        let base = match bindings.get(name) {
            Some(t) => t.clone(),
            None => graph.param_value(name)?.clone(),
        };
        let grad = &analytic[&format!("d{out_name}/d{name}")];
        let mut probe = bindings.clone();
        for k in 0..base.len() {
            let mut shifted = base.clone();
            shifted.data_mut()[k] = base.data()[k] + eps;
            probe.insert(name.clone(), shifted.clone());
            let up = graph.eval(&probe, &[out])?[0].item();
            shifted.data_mut()[k] = base.data()[k] - eps;
            probe.insert(name.clone(), shifted);
            let down = graph.eval(&probe, &[out])?[0].item();
            let numeric = (up - down) / (2.0 * eps);
            let a = grad.data()[k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
        probe.insert(name.clone(), base);
    }
    Ok(worst)
}
