//! Finite-difference gradient checking.

use super::{Tape, Tensor};
use crate::Result;
use crate::Error;

/// Central-difference step used throughout the crate's checks.
pub const FD_EPSILON: f64 = 1e-3;

/// Compares the analytic gradient of a scalar-valued tensor function
/// against central finite differences at `x`.
///
/// Returns the maximum over coordinates of
/// `|analytic − cd| / max(|analytic|, |cd|, 1e-8)`; any non-finite
/// intermediate is reported as `+∞` rather than an error.
pub fn gradient_check<F>(x_data: &[f64], x_shape: &[usize], f: F) -> Result<f64>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor>,
{
    let tape = Tape::new();
    let x = tape.leaf(x_data.to_vec(), x_shape, true)?;
    let y = f(&tape, &x)?;
    if y.numel() != 1 {
        return Err(Error::invalid(
            "gradient_check",
            format!("function must be scalar-valued, got shape {:?}", y.shape()),
        ));
    }
    y.backward()?;
    let analytic = x.grad().unwrap_or_else(|| vec![0.0; x_data.len()]);

    let eval = |coord: usize, v: f64| -> Result<f64> {
        let t = Tape::new();
        let mut d = x_data.to_vec();
        d[coord] = v;
        let xt = t.leaf(d, x_shape, false)?;
        Ok(f(&t, &xt)?.item())
    };

    let mut max_err = 0.0f64;
    for i in 0..x_data.len() {
        let fp = eval(i, x_data[i] + FD_EPSILON)?;
        let fm = eval(i, x_data[i] - FD_EPSILON)?;
        let cd = (fp - fm) / (2.0 * FD_EPSILON);
        let denom = analytic[i].abs().max(cd.abs()).max(1e-8);
        let err = (analytic[i] - cd).abs() / denom;
        if !err.is_finite() {
            return Ok(f64::INFINITY);
        }
        max_err = max_err.max(err);
    }
    Ok(max_err)
}
