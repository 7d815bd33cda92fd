use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// `|a − n| / max(|a|, |n|, floor, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor).max(1e-12)
}

/// Share of an input's largest gradient below which elements are compared
/// against that scale instead of their own magnitude. Differencing roundoff
/// grows with the function, so an element that happens to sum to nearly zero
/// would otherwise report noise as error.
pub const GRAD_FLOOR: f64 = 1e-3;

/// Compares reverse-mode gradients of a scalar function against central
/// differences `(f(x+h) − f(x−h)) / 2h`, returning the largest relative
/// error over every element of every input (see [`GRAD_FLOOR`]).
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    if !(h > 0.0) {
        return Err(Error::Input(format!("finite-difference step must be positive, got {h}")));
    }
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t)).collect();
        let out = f(&tape, &vars)?;
        if out.numel() != 1 {
            return Err(Error::Input(format!("grad_check needs a scalar function, got {:?}", out.shape())));
        }
        Ok(out.with_data(|d| d[0]))
    };

    let analytic: Vec<Vec<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs
            .iter()
            .map(|t| tape.leaf(&t.clone().requiring_grad()))
            .collect();
        let out = f(&tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(&v, t)| grads.slice(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect()
    };

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        let mut numeric = Vec::with_capacity(grad.len());
        for i in 0..grad.len() {
            let orig = probe[which].data()[i];
            probe[which].data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe[which].data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe[which].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        let scale = grad.iter().chain(&numeric).fold(0.0f64, |m, v| m.max(v.abs()));
        for (&a, &n) in grad.iter().zip(&numeric) {
            worst = worst.max(relative_error(a, n, GRAD_FLOOR * scale));
        }
    }
    Ok(worst)
}
