use crate::tensor::DenseArray;

/// Denominator floor for [`relative_error`], so entries whose true gradient
/// is ~0 are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, floor)`. An exact sign flip gives 2.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Central-difference estimate of d`f`/d`x` for every entry of `x`.
pub fn central_difference<E>(
    x: &DenseArray<f64>,
    step: f64,
    mut f: impl FnMut(&DenseArray<f64>) -> Result<f64, E>,
) -> Result<DenseArray<f64>, E> {
    let mut probe = x.clone();
    let mut out = DenseArray::zeros(x.shape());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * step);
    }
    Ok(out)
}
