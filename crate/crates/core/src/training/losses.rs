use crate::error::{shape_err, Error, Result};
use crate::tensor::{Array, Scalar};

/// Mean absolute difference between two equally shaped arrays.
pub fn recon_loss<T: Scalar>(a: &Array<T>, b: &Array<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err!("recon_loss: {:?} vs {:?}", a.shape(), b.shape()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
        .sum();
    Ok(sum / a.len() as f64)
}

/// Least-squares GAN objectives:
/// `d = ½·mean((real-1)²) + ½·mean(fake²)`, `g = mean((fake-1)²)`.
pub fn adversarial_losses(real_logits: &[f64], fake_logits: &[f64]) -> Result<(f64, f64)> {
    if real_logits.is_empty() || fake_logits.is_empty() {
        return Err(shape_err!("adversarial_losses needs non-empty logits"));
    }
    if !real_logits.iter().chain(fake_logits).all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite discriminator logits".into()));
    }
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64;
    let d = 0.5 * mean(real_logits, &|x| (x - 1.0).powi(2)) + 0.5 * mean(fake_logits, &|x| x * x);
    let g = mean(fake_logits, &|x| (x - 1.0).powi(2));
    Ok((d, g))
}
