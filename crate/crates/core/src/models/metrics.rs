use super::{ModelError, Scalar};

/// Symmetric mean absolute percentage error, in `[0, 200]`.
///
/// Each term is `200·|p−a| / (|p|+|a|)`, taken as 0 when both are 0.
pub fn smape<T: Scalar>(predicted: &[T], actual: &[T]) -> Result<T, ModelError> {
    if predicted.len() != actual.len() {
        return Err(ModelError::LengthMismatch(predicted.len(), actual.len()));
    }
    if predicted.is_empty() {
        return Err(ModelError::InsufficientData { needed: 1, have: 0 });
    }
    let two_hundred = T::from_f64_lossy(200.0);
    let total = predicted
        .iter()
        .zip(actual)
        .fold(T::zero(), |acc, (p, a)| {
            let denom = p.abs() + a.abs();
            if denom == T::zero() {
                acc
            } else {
                acc + two_hundred * (*p - *a).abs() / denom
            }
        });
    Ok(total / T::from_usize(predicted.len()).unwrap())
}
