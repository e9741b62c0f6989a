//! Central finite differences for checking reverse-mode gradients.

use crate::error::Result;
use crate::linalg::DenseMatrix;

/// `∂f/∂inputs` by `(f(x + h·e) − f(x − h·e)) / 2h`, entry by entry.
pub fn central_difference<F>(inputs: &[DenseMatrix], h: f64, mut f: F) -> Result<Vec<DenseMatrix>>
where
    F: FnMut(&[DenseMatrix]) -> Result<f64>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = DenseMatrix::zeros(inputs[i].rows(), inputs[i].cols());
        for k in 0..inputs[i].len() {
            let orig = inputs[i].as_slice()[k];
            work[i].as_mut_slice()[k] = orig + h;
            let plus = f(&work)?;
            work[i].as_mut_slice()[k] = orig - h;
            let minus = f(&work)?;
            work[i].as_mut_slice()[k] = orig;
            grad.as_mut_slice()[k] = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Largest componentwise `|a − n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[DenseMatrix], numeric: &[DenseMatrix], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.as_slice().iter().zip(n.as_slice()))
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
