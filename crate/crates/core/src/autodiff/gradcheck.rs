use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest relative disagreement between the tape gradient of `f` at `x`
/// and a central finite difference with step `eps`.
///
/// The error for each element is `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(mut f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'t> FnMut(&Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let errors = grad_check_many(|vars| f(&vars[0]), std::slice::from_ref(x), eps)?;
    Ok(errors[0])
}

/// [`grad_check`] over several inputs at once; returns one maximum error
/// per input.
pub fn grad_check_many<F>(mut f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<Vec<f64>>
where
    F: for<'t> FnMut(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|x| tape.var(x.clone())).collect();
        let out = f(&vars)?;
        finite(out.value())?;
        out.backward()?;
        vars.iter().map(|v| v.grad().unwrap_or_else(|| v.value().zeros_like())).collect()
    };

    let mut evaluate = |point: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        tape.no_grad(|| {
            let vars: Vec<_> = point.iter().map(|x| tape.constant(x.clone())).collect();
            let out = f(&vars)?;
            finite(out.value())
        })
    };

    let mut point = inputs.to_vec();
    let mut errors = Vec::with_capacity(inputs.len());
    for (i, grad) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for j in 0..point[i].numel() {
            let original = point[i].data()[j];
            point[i].data_mut()[j] = original + eps;
            let plus = evaluate(&point)?;
            point[i].data_mut()[j] = original - eps;
            let minus = evaluate(&point)?;
            point[i].data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[j];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
        errors.push(worst);
    }
    Ok(errors)
}

fn finite(value: &Tensor<f64>) -> Result<f64> {
    let v = value.item()?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("objective evaluated to {v}")))
    }
}
