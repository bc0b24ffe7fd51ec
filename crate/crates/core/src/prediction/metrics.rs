use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Pearson correlation between predictions and true genetic values.
pub fn accuracy<T: Real>(predictions: &DVector<T>, truth: &DVector<T>) -> Result<T> {
    let n = predictions.len();
    if truth.len() != n {
        return Err(Error::DimensionMismatch("predictions vs truth".into()));
    }
    if n < 3 {
        return Err(Error::InvalidData(format!(
            "accuracy needs at least 3 values, got {n}"
        )));
    }
    let mp = predictions.mean();
    let mt = truth.mean();
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&p, &t) in predictions.iter().zip(truth.iter()) {
        let (a, b) = (p - mp, t - mt);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    let tiny = T::eps() * T::from_count(n);
    if !(sxx > tiny * predictions.amax().max(T::one()).powi(2))
        || !(syy > tiny * truth.amax().max(T::one()).powi(2))
    {
        return Err(Error::DegenerateVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}
