use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the reverse-mode gradient of a scalar function against central
/// differences and returns the worst per-coordinate relative error
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-12)`.
///
/// `f` must build its graph on the tape it is handed; it is called once with a
/// differentiable leaf and twice per coordinate with constant leaves.
pub fn finite_difference_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    if !(step > 0.0 && step <= 1e-3) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must lie in (0, 1e-3], got {step}"
        )));
    }
    let analytic = {
        let tape = Tape::new();
        let leaf = tape.param(x.clone());
        let out = f(&tape, leaf)?;
        check_finite(out.item())?;
        out.backward()?;
        leaf.grad().unwrap_or_else(|| Tensor::zeros(x.shape()))
    };
    let eval = |probe: Tensor| -> Result<f64> {
        let tape = Tape::new();
        let leaf = tape.constant(probe);
        let y = f(&tape, leaf)?.item();
        check_finite(y)
    };

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

fn check_finite(y: f64) -> Result<f64> {
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::NonFinite(format!("objective evaluated to {y}")))
    }
}
