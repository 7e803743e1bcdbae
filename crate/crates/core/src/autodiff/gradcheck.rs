//! Finite-difference validation of reverse-mode gradients.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::Tensor;

/// Central-difference step.
pub const STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than relatively.
const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

impl GradCheckReport {
    fn record(&mut self, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.max_abs_err = self.max_abs_err.max(abs);
        self.max_rel_err = self.max_rel_err.max(rel);
        self.checked += 1;
    }
}

fn scalar_output(g: &Graph<f64>, out: Var) -> Result<f64> {
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::contract(format!(
            "grad_check: function must be scalar-valued, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

/// Compares reverse-mode gradients of a scalar function of `inputs` with
/// central differences.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>]) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_output(&g, out)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar_output(&g, out)?;
    g.backward(out)?;

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = g.grad(v).unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + STEP;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - STEP;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            report.record(analytic.data()[i], (up - down) / (2.0 * STEP));
        }
    }
    Ok(report)
}

/// Same check, perturbing every scalar of a parameter store that `f` binds
/// through [`Graph::param`].
pub fn grad_check_params<F>(params: &Params<f64>, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Params<f64>) -> Result<Var>,
{
    let eval = |p: &Params<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, p)?;
        scalar_output(&g, out)
    };

    let mut g = Graph::new();
    let out = f(&mut g, params)?;
    scalar_output(&g, out)?;
    g.backward(out)?;
    let grads = g.param_grads();

    let mut report = GradCheckReport::default();
    let mut work = params.clone();
    for (name, analytic) in grads {
        let n = analytic.len();
        for i in 0..n {
            let orig = params.require(&name)?.data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = orig + STEP;
            let up = eval(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig - STEP;
            let down = eval(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            report.record(analytic.data()[i], (up - down) / (2.0 * STEP));
        }
    }
    Ok(report)
}
