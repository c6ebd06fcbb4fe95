use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Result, TfdError};

/// Compares the reverse-mode gradient of a scalar function with central
/// differences and returns the largest relative deviation.
///
/// The relative error of each entry is `|g_fd − g| / max(|g|, 1e-8)` where
/// `g` is the reverse-mode value.
pub fn finite_difference_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    if !(eps > 0.0) {
        return Err(TfdError::contract(format!("eps must be positive, got {eps}")));
    }
    let analytic = {
        let tape = Tape::new();
        let xv = tape.param(x.clone());
        let y = f(&tape, xv)?;
        check_finite(y.item(), "function value")?;
        tape.backward(y)?;
        tape.grad(xv)
    };
    let eval = |probe: Tensor| -> Result<f64> {
        let tape = Tape::new();
        let xv = tape.param(probe);
        let y = f(&tape, xv)?.item();
        check_finite(y, "perturbed function value")?;
        Ok(y)
    };
    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let g = analytic.data()[i];
        check_finite(g, "reverse-mode gradient")?;
        worst = worst.max((numeric - g).abs() / g.abs().max(1e-8));
    }
    Ok(worst)
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(TfdError::Numeric(format!("{what} is not finite ({v})")))
    }
}
