use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::ParamStore;

/// Evaluates a scalar function of `params` on a fresh graph and fills the
/// gradient accumulators of `params` (which are zeroed first).
///
/// Parameters the function never binds keep a zero gradient.
pub fn forward_backward<F>(params: &mut ParamStore, f: F) -> Result<f64>
where
    F: FnOnce(&mut Graph, &ParamStore) -> Result<Var>,
{
    params.zero_grads();
    let mut graph = Graph::new();
    let root = f(&mut graph, params)?;
    let loss = scalar_value(&graph, root)?;
    let grads = graph.backward(root)?;
    params.accumulate(&graph, &grads)?;
    Ok(loss)
}

/// Value of `f` without a backward pass.
pub fn evaluate<F>(params: &ParamStore, f: F) -> Result<f64>
where
    F: FnOnce(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut graph = Graph::new();
    let root = f(&mut graph, params)?;
    scalar_value(&graph, root)
}

fn scalar_value(graph: &Graph, root: Var) -> Result<f64> {
    let value = graph.value(root);
    if value.len() != 1 {
        return Err(Error::Shape(format!(
            "loss must be scalar, got shape {:?}",
            value.shape()
        )));
    }
    let loss = value.item();
    if !loss.is_finite() {
        return Err(Error::NumericalOverflow(format!("loss evaluated to {loss}")));
    }
    Ok(loss)
}

/// Largest relative disagreement between the analytic gradient and a central
/// finite difference with the given `step`, over every scalar parameter:
/// `|a - c| / max(|a|, |c|, 1e-12)`.
pub fn fd_check<F>(params: &ParamStore, step: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let mut analytic = params.clone();
    forward_backward(&mut analytic, &f)?;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let n = params.value(name).map(|t| t.len()).unwrap_or(0);
        for i in 0..n {
            let original = params.value(name).expect("listed").data()[i];
            probe.value_mut(name).expect("listed").data_mut()[i] = original + step;
            let plus = evaluate(&probe, &f)?;
            probe.value_mut(name).expect("listed").data_mut()[i] = original - step;
            let minus = evaluate(&probe, &f)?;
            probe.value_mut(name).expect("listed").data_mut()[i] = original;
            let central = (plus - minus) / (2.0 * step);
            let exact = analytic.grad(name).expect("listed").data()[i];
            let denom = exact.abs().max(central.abs()).max(1e-12);
            worst = worst.max((exact - central).abs() / denom);
        }
    }
    Ok(worst)
}
