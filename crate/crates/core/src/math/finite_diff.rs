use super::params::ParamVector;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Central finite-difference gradient of `f` at `params`:
/// `(f(p + h e_i) - f(p - h e_i)) / 2h` for every coordinate `i`.
pub fn finite_diff_grad<T, F>(mut f: F, params: &ParamVector<T>, step: T) -> Result<ParamVector<T>>
where
    T: Scalar,
    F: FnMut(&ParamVector<T>) -> T,
{
    if !(step > T::zero()) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let mut probe = params.clone();
    let mut grad = params.zeros_like();
    let two_h = step + step;
    for i in 0..params.len() {
        let orig = params.as_slice()[i];
        probe.as_mut_slice()[i] = orig + step;
        let plus = f(&probe);
        probe.as_mut_slice()[i] = orig - step;
        let minus = f(&probe);
        probe.as_mut_slice()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::OracleFailure { coordinate: i });
        }
        grad.as_mut_slice()[i] = (plus - minus) / two_h;
    }
    Ok(grad)
}

/// Fourth-order central differences,
/// `(8(f(p+h) - f(p-h)) - (f(p+2h) - f(p-2h))) / 12h`. Exact on quartics;
/// with a larger step it keeps rounding noise far below the two-point rule.
pub fn finite_diff_grad4<T, F>(mut f: F, params: &ParamVector<T>, step: T) -> Result<ParamVector<T>>
where
    T: Scalar,
    F: FnMut(&ParamVector<T>) -> T,
{
    if !(step > T::zero()) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let mut probe = params.clone();
    let mut grad = params.zeros_like();
    let eight = T::from(8.0).unwrap();
    let twelve_h = T::from(12.0).unwrap() * step;
    for i in 0..params.len() {
        let orig = params.as_slice()[i];
        let mut at = |x: T| {
            probe.as_mut_slice()[i] = x;
            f(&probe)
        };
        let (p1, m1) = (at(orig + step), at(orig - step));
        let (p2, m2) = (at(orig + step + step), at(orig - step - step));
        probe.as_mut_slice()[i] = orig;
        if ![p1, m1, p2, m2].iter().all(|v| v.is_finite()) {
            return Err(Error::OracleFailure { coordinate: i });
        }
        grad.as_mut_slice()[i] = (eight * (p1 - m1) - (p2 - m2)) / twelve_h;
    }
    Ok(grad)
}
