//! Quality metrics.

use crate::error::Result;
use crate::tensor::TensorGrid;

/// Peak signal-to-noise ratio in decibels: 10 log10(peak^2 / MSE).
/// Identical inputs return +inf.
pub fn psnr(reference: &TensorGrid, test: &TensorGrid, peak: f64) -> Result<f64> {
    reference.same_shape(test)?;
    if !(peak > 0.0) {
        return Err(crate::error::RdbmError::InvalidConfig(format!(
            "peak must be > 0, got {peak}"
        )));
    }
    let mut acc = 0.0;
    for (a, b) in reference.data().iter().zip(test.data().iter()) {
        let d = a - b;
        acc += d * d;
    }
    let mse = acc / reference.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (peak * peak / mse).log10())
    }
}
