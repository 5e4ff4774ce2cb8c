use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Outcome of comparing backward gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GradCheckReport {
    pub op_name: String,
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)` over all probed entries.
    pub max_relative_error: f64,
    /// Number of input entries probed.
    pub probe_count: usize,
}

impl GradCheckReport {
    /// Folds several reports for the same op into one.
    pub fn merge(op_name: &str, reports: &[GradCheckReport]) -> Self {
        Self {
            op_name: op_name.to_string(),
            max_relative_error: reports.iter().map(|r| r.max_relative_error).fold(0.0, f64::max),
            probe_count: reports.iter().map(|r| r.probe_count).sum(),
        }
    }
}

fn evaluate<F>(builder: &F, inputs: &[Matrix]) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| graph.leaf(m.clone())).collect();
    let out = builder(&mut graph, &vars)?;
    let shape = graph.value(out).shape();
    if shape != (1, 1) {
        return Err(Error::Contract(format!(
            "grad_check builder must return a 1x1 node, got {}x{}",
            shape.0, shape.1
        )));
    }
    Ok((graph, vars, out))
}

/// Checks every entry of every input: central difference with the given step
/// against the gradient from [`Graph::backward`].
pub fn grad_check<F>(op_name: &str, inputs: &[Matrix], step: f64, builder: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (mut graph, vars, out) = evaluate(&builder, inputs)?;
    graph.backward(out)?;
    let analytic: Vec<Matrix> = vars.iter().map(|&v| graph.grad(v)).collect();

    let mut probed = inputs.to_vec();
    let mut worst = 0.0f64;
    let mut count = 0;
    for (which, input) in inputs.iter().enumerate() {
        for entry in 0..input.len() {
            let original = input.as_slice()[entry];
            probed[which].as_mut_slice()[entry] = original + step;
            let plus = scalar_output(&builder, &probed)?;
            probed[which].as_mut_slice()[entry] = original - step;
            let minus = scalar_output(&builder, &probed)?;
            probed[which].as_mut_slice()[entry] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let exact = analytic[which].as_slice()[entry];
            let denom = libm::fabs(exact).max(libm::fabs(numeric)).max(1e-8);
            worst = worst.max(libm::fabs(exact - numeric) / denom);
            count += 1;
        }
    }
    Ok(GradCheckReport {
        op_name: op_name.to_string(),
        max_relative_error: worst,
        probe_count: count,
    })
}

fn scalar_output<F>(builder: &F, inputs: &[Matrix]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (graph, _, out) = evaluate(builder, inputs)?;
    Ok(graph.value(out).as_slice()[0])
}
