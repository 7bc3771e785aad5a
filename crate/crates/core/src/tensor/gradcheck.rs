//! Central-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Element, Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over every checked element.
    pub max_rel_error: f64,
    /// Largest relative error per input.
    pub per_input: Vec<f64>,
    pub elements_checked: usize,
}

/// Compares analytic gradients of `op` against central differences.
///
/// The op output is reduced to a scalar by a fixed random projection
/// `sum(r * out)`. Relative error per element is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<T, F>(op: F, inputs: &[Tensor<T>], eps: f64) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let numeric = numeric_gradients(&op, inputs, eps)?;
    compare(&op, inputs, &numeric, 0.0)
}

/// Checks the analytic gradients of `op` (any precision) against central
/// differences of `reference`, the same function evaluated in `f64` at the
/// exactly widened inputs.
///
/// Single-precision differences cannot resolve partials much smaller than
/// the outputs they perturb, so `f32` backward passes are verified this way.
/// Rounding in the `f32` backward itself still dominates partials formed
/// by cancellation, so the relative-error floor is raised to `1e-3` of the
/// largest reference partial of each input.
pub fn grad_check_with_reference<T, F, R>(
    op: F,
    reference: R,
    inputs: &[Tensor<T>],
    eps: f64,
) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
    R: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let wide: Vec<Tensor<f64>> = inputs.iter().map(|t| t.cast()).collect();
    let numeric = numeric_gradients(&reference, &wide, eps)?;
    compare(&op, inputs, &numeric, 1e-3)
}

fn evaluate<T, F>(op: &F, values: &[Tensor<T>]) -> Result<Tensor<T>>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = values.iter().map(|v| g.constant(v.clone())).collect();
    let out = op(&mut g, &vars)?;
    let value = g.value(out).clone();
    if !value.is_finite() {
        return Err(Error::NonFinite {
            op: "grad_check".into(),
        });
    }
    Ok(value)
}

fn probe_for<T: Element>(out: &Tensor<T>) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0))
}

/// Central-difference gradient of `sum(probe * op(inputs))` for every input
/// element. Differences are accumulated per output before division, which
/// keeps cancellation error at the level of individual outputs.
fn numeric_gradients<T, F>(op: &F, inputs: &[Tensor<T>], eps: f64) -> Result<Vec<Vec<f64>>>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let probe = probe_for(&evaluate(op, inputs)?);
    let mut work = inputs.to_vec();
    let mut result = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grads = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            let (up, down) = (orig + T::from_f64(eps), orig - T::from_f64(eps));
            work[i].data_mut()[j] = up;
            let plus = evaluate(op, &work)?;
            work[i].data_mut()[j] = down;
            let minus = evaluate(op, &work)?;
            work[i].data_mut()[j] = orig;

            let mut acc = 0.0f64;
            for ((&p, &m), &r) in plus.data().iter().zip(minus.data()).zip(probe.data()) {
                if p != m {
                    acc += r * (p.as_f64() - m.as_f64());
                }
            }
            // divide by the step actually applied after rounding to T
            grads.push(acc / (up.as_f64() - down.as_f64()));
        }
        result.push(grads);
    }
    Ok(result)
}

fn compare<T, F>(
    op: &F,
    inputs: &[Tensor<T>],
    numeric: &[Vec<f64>],
    scale_floor: f64,
) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|v| g.param(v.clone())).collect();
    let out = op(&mut g, &vars)?;
    let probe = probe_for(g.value(out)).cast::<T>();
    let probe_var = g.constant(probe);
    let weighted = g.mul(out, probe_var)?;
    let loss = g.sum(weighted);
    let grads = g.backward(loss)?;

    let mut per_input = Vec::with_capacity(inputs.len());
    let mut checked = 0;
    for (var, num) in vars.iter().zip(numeric) {
        let analytic = grads.get_or_zeros(*var);
        let mut worst: f64 = 0.0;
        let floor = num.iter().fold(0.0f64, |m, v| m.max(v.abs())) * scale_floor;
        for (&a, &n) in analytic.data().iter().zip(num) {
            let a = a.as_f64();
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor).max(1e-8);
            worst = worst.max(rel);
            checked += 1;
        }
        per_input.push(worst);
    }
    Ok(GradCheckReport {
        max_rel_error: per_input.iter().copied().fold(0.0, f64::max),
        per_input,
        elements_checked: checked,
    })
}
